#include "unidrop/fd.hpp"

#include <cmath>
#include <string>

namespace unidrop {

namespace {

double eval_checked(const ScalarFn& f, const Tensor& x, const char* op, std::size_t coord) {
  double v = f(x);
  if (!std::isfinite(v))
    throw Error(std::string(op) + ": non-finite evaluation while perturbing coordinate " +
                std::to_string(coord));
  return v;
}

}  // namespace

Tensor fd_gradient(const ScalarFn& f, const Tensor& x, double step) {
  Tensor g(x.shape());
  Tensor p = x;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double xj = x[j];
    p[j] = xj + step;
    const double fp = eval_checked(f, p, "fd_gradient", j);
    p[j] = xj - step;
    const double fm = eval_checked(f, p, "fd_gradient", j);
    p[j] = xj;
    g[j] = (fp - fm) / (2.0 * step);
  }
  return g;
}

Tensor fd_hessian_diag(const ScalarFn& f, const Tensor& h, double step) {
  const double f0 = eval_checked(f, h, "fd_hessian_diag", 0);
  Tensor d(h.shape());
  Tensor p = h;
  for (std::size_t j = 0; j < h.size(); ++j) {
    const double hj = h[j];
    p[j] = hj + step;
    const double fp = eval_checked(f, p, "fd_hessian_diag", j);
    p[j] = hj - step;
    const double fm = eval_checked(f, p, "fd_hessian_diag", j);
    p[j] = hj;
    d[j] = (fp - 2.0 * f0 + fm) / (step * step);
  }
  return d;
}

double fd_hessian_quadform(const ScalarFn& f, const Tensor& h, const Tensor& v, double step) {
  if (!h.same_shape(v))
    throw ShapeError("fd_hessian_quadform: direction " + shape_str(v) + " vs point " +
                     shape_str(h));
  const double f0 = eval_checked(f, h, "fd_hessian_quadform", 0);
  Tensor p = h;
  for (std::size_t j = 0; j < h.size(); ++j) p[j] = h[j] + step * v[j];
  const double fp = eval_checked(f, p, "fd_hessian_quadform", 0);
  for (std::size_t j = 0; j < h.size(); ++j) p[j] = h[j] - step * v[j];
  const double fm = eval_checked(f, p, "fd_hessian_quadform", 0);
  return (fp - 2.0 * f0 + fm) / (step * step);
}

Tensor fd_hessian_full(const ScalarFn& f, const Tensor& h, double step) {
  const std::size_t n = h.size();
  const double f0 = eval_checked(f, h, "fd_hessian_full", 0);
  Tensor hess({n, n});
  Tensor p = h;
  // Diagonal via second differences.
  for (std::size_t j = 0; j < n; ++j) {
    const double hj = h[j];
    p[j] = hj + step;
    const double fp = eval_checked(f, p, "fd_hessian_full", j);
    p[j] = hj - step;
    const double fm = eval_checked(f, p, "fd_hessian_full", j);
    p[j] = hj;
    hess.at(j, j) = (fp - 2.0 * f0 + fm) / (step * step);
  }
  // Off-diagonal via the four-point stencil.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double hi = h[i], hj = h[j];
      p[i] = hi + step;
      p[j] = hj + step;
      const double fpp = eval_checked(f, p, "fd_hessian_full", j);
      p[j] = hj - step;
      const double fpm = eval_checked(f, p, "fd_hessian_full", j);
      p[i] = hi - step;
      p[j] = hj + step;
      const double fmp = eval_checked(f, p, "fd_hessian_full", j);
      p[j] = hj - step;
      const double fmm = eval_checked(f, p, "fd_hessian_full", j);
      p[i] = hi;
      p[j] = hj;
      const double v = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
      hess.at(i, j) = v;
      hess.at(j, i) = v;
    }
  }
  return hess;
}

}  // namespace unidrop
