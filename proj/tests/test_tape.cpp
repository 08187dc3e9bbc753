#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "unidrop/fd.hpp"
#include "unidrop/rng.hpp"
#include "unidrop/tape.hpp"

using namespace unidrop;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, RngStream& rng, double lo = -2.0,
                     double hi = 2.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Guarded relative error; gradients of magnitude below the floor are
// compared absolutely.
double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-3});
}

// Checks the reverse-mode gradient of a graph against central differences.
// build() maps the input leaf to the output var; the root is a weighted sum
// of the output so every output coordinate is exercised.
void gradcheck(const Tensor& x, const std::function<Var(Tape&, Var)>& build, RngStream& rng,
               double tol = 1e-6) {
  Tensor weights;
  {
    Tape probe;
    Var in = probe.input(x);
    Var out = build(probe, in);
    weights = random_tensor(probe.value(out).shape(), rng, 0.5, 1.5);
  }
  auto scalar_of = [&](const Tensor& at) {
    Tape t;
    Var in = t.input(at);
    Var out = build(t, in);
    return t.value(t.sum(t.mul(out, t.constant(weights)))).item();
  };

  Tape t;
  Var in = t.input(x);
  Var out = build(t, in);
  Var root = t.sum(t.mul(out, t.constant(weights)));
  t.backward(root);
  const Tensor& ad = t.adjoint(in);
  const Tensor fd = fd_gradient(scalar_of, x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    INFO("coordinate ", i, ": ad=", ad[i], " fd=", fd[i]);
    CHECK(rel_err(ad[i], fd[i]) <= tol);
  }
}

}  // namespace

TEST_CASE("matmul identity") {
  Tape t;
  Var a = t.input(Tensor({2, 2}, {1, 2, 3, 4}));
  Var id = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  const Tensor& out = t.value(t.matmul(a, id));
  CHECK(out.at(0, 0) == 1.0);
  CHECK(out.at(0, 1) == 2.0);
  CHECK(out.at(1, 0) == 3.0);
  CHECK(out.at(1, 1) == 4.0);
}

TEST_CASE("softmax symmetry and row sums") {
  Tape t;
  Var v = t.input(Tensor({1, 2}, {0.0, 0.0}));
  const Tensor& y = t.value(t.softmax_rows(v));
  CHECK(y.at(0, 0) == doctest::Approx(0.5));
  CHECK(y.at(0, 1) == doctest::Approx(0.5));

  RngStream rng(5, "test");
  Tape t2;
  Var x = t2.input(random_tensor({6, 9}, rng, -4.0, 4.0));
  const Tensor& s = t2.value(t2.softmax_rows(x));
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) sum += s.at(i, j);
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("fully masked softmax row is rejected") {
  Tape t;
  Var v = t.input(Tensor({1, 2}, {-1e30, -1e30}));
  CHECK_THROWS_WITH_AS(t.softmax_rows(v), doctest::Contains("fully masked"), Error);
}

TEST_CASE("layer norm of constant vector maps to the bias") {
  Tape t;
  Var x = t.input(Tensor({1, 4}, {3.0, 3.0, 3.0, 3.0}));
  Var g = t.input(Tensor({4}, {2.0, 2.0, 2.0, 2.0}));
  Var b = t.input(Tensor({4}, {0.5, 0.5, 0.5, 0.5}));
  const Tensor& y = t.value(t.layer_norm_rows(x, g, b, 1e-5));
  for (std::size_t j = 0; j < 4; ++j) CHECK(y.at(0, j) == doctest::Approx(0.5));
}

TEST_CASE("layer norm pre-affine statistics") {
  RngStream rng(11, "test");
  // Unit gain, zero bias isolates the normalized value. With the variance
  // guard inside the square root the output variance is v/(v+eps); the
  // 1e-8 bound on |var-1| therefore needs input variance >> eps.
  const double eps = 1e-5;
  Tape t;
  Tensor big = random_tensor({4, 16}, rng, -200.0, 200.0);  // variance ~1e4
  Var x = t.input(big);
  Var g = t.input(Tensor::filled({16}, 1.0));
  Var b = t.input(Tensor({16}));
  const Tensor& y = t.value(t.layer_norm_rows(x, g, b, eps));
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < y.cols(); ++j) mean += y.at(i, j);
    mean /= y.cols();
    for (std::size_t j = 0; j < y.cols(); ++j) {
      const double c = y.at(i, j) - mean;
      var += c * c;
    }
    var /= y.cols();
    CHECK(std::fabs(mean) <= 1e-10);
    CHECK(std::fabs(var - 1.0) <= 1e-8);
  }

  // At moderate variance the exact ratio v/(v+eps) is reproduced.
  Tape t2;
  Tensor mod = random_tensor({1, 16}, rng);
  double imean = 0.0, ivar = 0.0;
  for (double v : mod.data()) imean += v;
  imean /= mod.size();
  for (double v : mod.data()) ivar += (v - imean) * (v - imean);
  ivar /= mod.size();
  Var x2 = t2.input(mod);
  Var g2 = t2.input(Tensor::filled({16}, 1.0));
  Var b2 = t2.input(Tensor({16}));
  const Tensor& y2 = t2.value(t2.layer_norm_rows(x2, g2, b2, eps));
  double mean2 = 0.0, var2 = 0.0;
  for (double v : y2.data()) mean2 += v;
  mean2 /= y2.size();
  for (double v : y2.data()) var2 += (v - mean2) * (v - mean2);
  var2 /= y2.size();
  CHECK(std::fabs(mean2) <= 1e-10);
  CHECK(var2 == doctest::Approx(ivar / (ivar + eps)).epsilon(1e-10));
}

TEST_CASE("layer norm scale invariance up to the eps guard") {
  RngStream rng(13, "test");
  auto normed = [&](const Tensor& in) {
    Tape t;
    Var v = t.input(in);
    Var g = t.input(Tensor::filled({8}, 1.0));
    Var b = t.input(Tensor({8}));
    return t.value(t.layer_norm_rows(v, g, b, 1e-5));
  };
  // The eps guard breaks exact invariance by ~eps/(2 var); the 1e-8 bound
  // needs input variance well above eps.
  Tensor x = random_tensor({2, 8}, rng, -100.0, 100.0);
  Tensor x10 = x;
  for (auto& v : x10.data()) v *= 10.0;
  CHECK(max_abs_diff(normed(x), normed(x10)) <= 1e-8);

  // At unit-scale inputs the deviation is bounded by eps itself.
  Tensor u = random_tensor({2, 8}, rng);
  Tensor u10 = u;
  for (auto& v : u10.data()) v *= 10.0;
  CHECK(max_abs_diff(normed(u), normed(u10)) <= 1e-4);
}

TEST_CASE("backward of x^2 at 3") {
  Tape t;
  Var x = t.input(Tensor::scalar(3.0));
  Var y = t.mul(x, x);
  t.backward(y);
  CHECK(t.adjoint(x).item() == doctest::Approx(6.0));
}

TEST_CASE("backward requires scalar root") {
  Tape t;
  Var x = t.input(Tensor({2, 2}));
  CHECK_THROWS_WITH_AS(t.backward(x), doctest::Contains("scalar"), Error);
}

TEST_CASE("gradient of sum of softmax is zero") {
  RngStream rng(17, "test");
  Tape t;
  Var v = t.input(random_tensor({3, 5}, rng));
  Var root = t.sum(t.softmax_rows(v));
  t.backward(root);
  CHECK(max_abs(t.adjoint(v)) <= 1e-12);
}

TEST_CASE("per-primitive gradients match central differences") {
  RngStream rng(23, "gradcheck");

  SUBCASE("add/sub/mul/scale chain") {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor other = random_tensor({3, 4}, rng);
    gradcheck(x, [other](Tape& t, Var in) {
      Var c = t.constant(other);
      return t.scale(t.mul(t.add(in, c), t.sub(in, c)), 0.7);
    }, rng);
  }
  SUBCASE("matmul both sides") {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor m = random_tensor({4, 5}, rng);
    gradcheck(x, [m](Tape& t, Var in) { return t.matmul(in, t.constant(m)); }, rng);
    Tensor l = random_tensor({5, 3}, rng);
    gradcheck(x, [l](Tape& t, Var in) { return t.matmul(t.constant(l), in); }, rng);
  }
  SUBCASE("transpose") {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor m = random_tensor({3, 2}, rng);
    gradcheck(x, [m](Tape& t, Var in) { return t.matmul(t.transpose(in), t.constant(m)); }, rng);
  }
  SUBCASE("add_row") {
    Tensor x = random_tensor({4}, rng);
    Tensor m = random_tensor({3, 4}, rng);
    gradcheck(x, [m](Tape& t, Var in) { return t.add_row(t.constant(m), in); }, rng);
  }
  SUBCASE("relu away from the kink") {
    Tensor x = random_tensor({3, 4}, rng);
    for (auto& v : x.data())
      if (std::fabs(v) < 1e-3) v = 0.5;
    gradcheck(x, [](Tape& t, Var in) { return t.relu(in); }, rng);
  }
  SUBCASE("softmax_rows") {
    Tensor x = random_tensor({3, 5}, rng);
    gradcheck(x, [](Tape& t, Var in) { return t.softmax_rows(in); }, rng);
  }
  SUBCASE("log_softmax_rows") {
    Tensor x = random_tensor({3, 5}, rng);
    gradcheck(x, [](Tape& t, Var in) { return t.log_softmax_rows(in); }, rng);
  }
  SUBCASE("layer_norm input gradient") {
    Tensor x = random_tensor({3, 6}, rng);
    Tensor g = random_tensor({6}, rng, 0.5, 1.5);
    Tensor b = random_tensor({6}, rng);
    gradcheck(x, [g, b](Tape& t, Var in) {
      return t.layer_norm_rows(in, t.input(g), t.input(b), 1e-5);
    }, rng);
  }
  SUBCASE("layer_norm gain and bias gradients") {
    Tensor x = random_tensor({3, 6}, rng);
    Tensor g = random_tensor({6}, rng, 0.5, 1.5);
    Tensor b = random_tensor({6}, rng);
    gradcheck(g, [x, b](Tape& t, Var in) {
      return t.layer_norm_rows(t.input(x), in, t.input(b), 1e-5);
    }, rng);
    gradcheck(b, [x, g](Tape& t, Var in) {
      return t.layer_norm_rows(t.input(x), t.input(g), in, 1e-5);
    }, rng);
  }
  SUBCASE("embed_rows scatters into the table") {
    Tensor table = random_tensor({6, 4}, rng);
    std::vector<int> ids{1, 3, 1, 5};  // repeated id accumulates
    gradcheck(table, [ids](Tape& t, Var in) { return t.embed_rows(in, ids); }, rng);
  }
  SUBCASE("slice and concat") {
    Tensor x = random_tensor({3, 6}, rng);
    gradcheck(x, [](Tape& t, Var in) {
      Var a = t.slice_cols(in, 0, 2);
      Var b = t.slice_cols(in, 2, 6);
      std::vector<Var> parts{b, a};
      return t.concat_cols(parts);
    }, rng);
  }
}

TEST_CASE("two-layer toy net gradient matches finite differences") {
  RngStream rng(31, "gradcheck");
  Tensor w1 = random_tensor({4, 6}, rng, -0.7, 0.7);
  Tensor b1 = random_tensor({6}, rng, -0.2, 0.2);
  Tensor w2 = random_tensor({6, 3}, rng, -0.7, 0.7);
  Tensor x = random_tensor({2, 4}, rng);

  gradcheck(x, [&](Tape& t, Var in) {
    Var h = t.relu(t.add_row(t.matmul(in, t.constant(w1)), t.constant(b1)));
    return t.softmax_rows(t.matmul(h, t.constant(w2)));
  }, rng);
}

TEST_CASE("identical program and inputs give bitwise identical results") {
  auto run = [] {
    RngStream rng(77, "determinism");
    Tensor x = random_tensor({4, 4}, rng);
    Tape t;
    Var in = t.input(x);
    Var g = t.input(Tensor::filled({4}, 1.0));
    Var b = t.input(Tensor({4}));
    Var y = t.layer_norm_rows(t.softmax_rows(t.matmul(in, in)), g, b, 1e-5);
    Var root = t.sum(y);
    t.backward(root);
    return std::pair<Tensor, Tensor>(t.value(root), t.adjoint(in));
  };
  auto [v1, g1] = run();
  auto [v2, g2] = run();
  CHECK(v1.item() == v2.item());
  CHECK(max_abs_diff(g1, g2) == 0.0);
}

TEST_CASE("shape errors name the operation") {
  Tape t;
  Var a = t.input(Tensor({2, 3}));
  Var b = t.input(Tensor({3, 3}));
  CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("add"), ShapeError);
  CHECK_THROWS_WITH_AS(t.matmul(b, a), doctest::Contains("matmul"), ShapeError);
  CHECK_THROWS_WITH_AS(t.slice_cols(a, 2, 1), doctest::Contains("slice_cols"), ShapeError);
}

TEST_CASE("backward_seeded assembles jacobian rows") {
  // y = A x with known A: seeded backward from each output recovers A rows.
  Tensor a({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tape t;
  Var x = t.input(Tensor({2, 1}, {0.5, -0.5}));
  Var y = t.matmul(t.constant(a), x);
  Tensor seed({2, 1});
  seed[0] = 1.0;
  t.backward_seeded(y, seed);
  CHECK(t.adjoint(x)[0] == doctest::Approx(1.0));
  CHECK(t.adjoint(x)[1] == doctest::Approx(2.0));
  seed[0] = 0.0;
  seed[1] = 1.0;
  t.backward_seeded(y, seed);
  CHECK(t.adjoint(x)[0] == doctest::Approx(3.0));
  CHECK(t.adjoint(x)[1] == doctest::Approx(4.0));
}
