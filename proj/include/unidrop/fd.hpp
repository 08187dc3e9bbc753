#pragma once

#include <functional>

#include "unidrop/tensor.hpp"

namespace unidrop {

using ScalarFn = std::function<double(const Tensor&)>;

// Default finite-difference steps: first differences trade truncation
// against cancellation at ~1e-5 in double precision; second differences
// need the larger 1e-3.
constexpr double kFdGradStep = 1e-5;
constexpr double kFdHessStep = 1e-3;

// Central-difference gradient, O(step^2) truncation error.
Tensor fd_gradient(const ScalarFn& f, const Tensor& x, double step = kFdGradStep);

// Per-coordinate second difference (f(h+se_j) - 2 f(h) + f(h-se_j)) / s^2.
Tensor fd_hessian_diag(const ScalarFn& f, const Tensor& h, double step = kFdHessStep);

// Directional quadratic form v^T (D^2 f) v via
// (f(h+sv) - 2 f(h) + f(h-sv)) / s^2.
double fd_hessian_quadform(const ScalarFn& f, const Tensor& h, const Tensor& v,
                           double step = kFdHessStep);

// Full Hessian assembled entry by entry; only sensible for small tensors.
// Result is [n,n] with n = h.size().
Tensor fd_hessian_full(const ScalarFn& f, const Tensor& h, double step = kFdHessStep);

}  // namespace unidrop
