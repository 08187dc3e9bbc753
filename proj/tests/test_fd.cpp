#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "unidrop/fd.hpp"
#include "unidrop/rng.hpp"

using namespace unidrop;

TEST_CASE("fd_gradient on x^2") {
  auto f = [](const Tensor& x) { return x[0] * x[0]; };
  Tensor x = Tensor::scalar(3.0);
  const Tensor g = fd_gradient(f, x, 1e-5);
  CHECK(std::fabs(g[0] - 6.0) <= 1e-9);
}

TEST_CASE("fd_gradient is exact on linear functions") {
  auto f = [](const Tensor& x) { return 2.0 * x[0] - 3.5 * x[1] + 0.25 * x[2]; };
  Tensor x({3}, {0.3, -1.2, 2.0});
  const Tensor g = fd_gradient(f, x);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(g[1] == doctest::Approx(-3.5).epsilon(1e-10));
  CHECK(g[2] == doctest::Approx(0.25).epsilon(1e-10));
}

TEST_CASE("fd_gradient rejects non-finite evaluations") {
  auto f = [](const Tensor& x) { return std::log(x[0]); };
  Tensor x = Tensor::scalar(1e-9);  // x - step goes negative
  CHECK_THROWS_WITH_AS(fd_gradient(f, x), doctest::Contains("coordinate"), Error);
}

TEST_CASE("fd_hessian_diag on quadratics") {
  auto f = [](const Tensor& h) {
    double s = 0.0;
    for (double v : h.data()) s += v * v;
    return s;
  };
  Tensor h({3}, {0.5, -1.0, 2.0});
  const Tensor d = fd_hessian_diag(f, h);
  for (std::size_t j = 0; j < 3; ++j) CHECK(d[j] == doctest::Approx(2.0).epsilon(1e-6));

  auto g = [](const Tensor& h2) { return h2[0] * h2[1]; };
  Tensor h2({2}, {1.5, -0.7});
  const Tensor d2 = fd_hessian_diag(g, h2);
  CHECK(std::fabs(d2[0]) <= 1e-8);
  CHECK(std::fabs(d2[1]) <= 1e-8);
}

TEST_CASE("fd_hessian_quadform basics") {
  auto f = [](const Tensor& h) {
    double s = 0.0;
    for (double v : h.data()) s += v * v;
    return s;
  };
  Tensor h({2}, {0.3, 0.4});
  Tensor v({2}, {1.0, 1.0});
  CHECK(fd_hessian_quadform(f, h, v) == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("quadform along e_j reproduces the diagonal") {
  RngStream rng(3, "fd");
  // Smooth non-quadratic function.
  auto f = [](const Tensor& h) {
    double s = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) s += std::sin(h[i]) + 0.3 * h[i] * h[i];
    return s + std::exp(0.1 * h[0] * h[1]);
  };
  Tensor h({4});
  for (auto& x : h.data()) x = 2.0 * rng.uniform() - 1.0;
  const Tensor d = fd_hessian_diag(f, h);
  for (std::size_t j = 0; j < h.size(); ++j) {
    Tensor ej(h.shape());
    ej[j] = 1.0;
    const double q = fd_hessian_quadform(f, h, ej);
    CHECK(std::fabs(q - d[j]) / std::max({std::fabs(q), std::fabs(d[j]), 1e-3}) <= 1e-6);
  }
}

TEST_CASE("quadform with v = h matches the assembled full hessian") {
  RngStream rng(5, "fd");
  auto f = [](const Tensor& h) {
    double s = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i)
      for (std::size_t j = 0; j < h.size(); ++j)
        s += 0.1 * (i + 1) * (j + 1) * h[i] * h[j];
    for (double v : h.data()) s += std::cos(v);
    return s;
  };
  Tensor h({5});
  for (auto& x : h.data()) x = rng.uniform() - 0.5;
  const Tensor full = fd_hessian_full(f, h);
  double expect = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h.size(); ++j) expect += full.at(i, j) * h[i] * h[j];
  const double got = fd_hessian_quadform(f, h, h);
  CHECK(got == doctest::Approx(expect).epsilon(1e-4));
}
