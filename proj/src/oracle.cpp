#include "unidrop/oracle.hpp"

#include <cmath>

#include <json.hpp>

namespace unidrop {

double pairwise_sum(const double* data, std::size_t n) {
  if (n <= 32) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += data[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(data, half) + pairwise_sum(data + half, n - half);
}

namespace {

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int n = 0;
};

McEstimate mc_reduce(const std::vector<double>& samples) {
  McEstimate e;
  e.n = static_cast<int>(samples.size());
  if (e.n == 0) return e;
  e.mean = pairwise_sum(samples.data(), samples.size()) / e.n;
  if (e.n < 2) return e;
  std::vector<double> sq(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double d = samples[i] - e.mean;
    sq[i] = d * d;
  }
  const double var = pairwise_sum(sq.data(), sq.size()) / (e.n - 1);
  e.std_error = std::sqrt(var / e.n);
  return e;
}

void finish_report(RegularizerReport& r, const McEstimate& mc, const McOptions& opt) {
  r.n_samples = mc.n;
  r.mc_mean = mc.mean;
  r.mc_std_error = mc.std_error;
  r.mc_gap = mc.mean - r.base_loss;
  r.mismatch_floor = opt.mismatch_floor;
  r.tolerance = opt.tolerance;
  r.rel_mismatch =
      std::fabs(r.mc_gap - r.predicted) / std::max(std::fabs(r.predicted), opt.mismatch_floor);
  r.rel_mismatch_display_form = std::fabs(r.mc_gap - r.predicted_display_form) /
                                std::max(std::fabs(r.predicted_display_form), opt.mismatch_floor);
  r.se_exceeds_half_gap = mc.std_error > 0.5 * std::fabs(r.predicted);
}

// Runs the sampler N times, recording finite losses and counting the rest.
template <typename SampleFn>
McEstimate mc_loop(int n_samples, int& excluded, SampleFn&& sample) {
  std::vector<double> vals;
  vals.reserve(n_samples);
  excluded = 0;
  for (int s = 0; s < n_samples; ++s) {
    const double v = sample();
    if (std::isfinite(v))
      vals.push_back(v);
    else
      ++excluded;
  }
  return mc_reduce(vals);
}

}  // namespace

RegularizerReport verify_feature_dropout(const ScalarField& f, const Tensor& h, double p,
                                         const McOptions& opt, RngStream& rng,
                                         const std::string& slot) {
  if (!(p >= 0.0 && p < 1.0)) throw Error("verify_feature_dropout: p outside [0,1)");
  RegularizerReport r;
  r.kind = "feature";
  r.slot = slot;
  r.p = p;
  r.base_loss = f.value(h);

  const Tensor diag = fd_hessian_diag(f.value, h);
  double quad_diag = 0.0;
  for (std::size_t j = 0; j < h.size(); ++j) quad_diag += diag[j] * h[j] * h[j];
  r.second_order = p / (2.0 * (1.0 - p)) * quad_diag;
  r.predicted = r.second_order;
  r.predicted_without_cross = r.predicted;
  // The displayed expansion carries the same coefficient for feature dropout.
  r.predicted_display_form = r.predicted;

  Tensor masked = h;
  McEstimate mc = mc_loop(opt.n_samples, r.excluded_samples, [&] {
    const double survive = p / (1.0 - p);
    for (std::size_t j = 0; j < h.size(); ++j) {
      const double xi = rng.uniform() < p ? -1.0 : survive;
      masked[j] = (1.0 + xi) * h[j];
    }
    return f.value(masked);
  });
  finish_report(r, mc, opt);
  return r;
}

RegularizerReport verify_structure_dropout(const ScalarField& f, const Tensor& h, double p,
                                           const McOptions& opt, RngStream& rng,
                                           const std::string& slot) {
  if (!(p >= 0.0 && p < 1.0)) throw Error("verify_structure_dropout: p outside [0,1)");
  RegularizerReport r;
  r.kind = "structure";
  r.slot = slot;
  r.p = p;
  r.base_loss = f.value(h);

  const Tensor grad = f.grad(h);
  const double h_dot_grad = dot(h, grad);
  const double quad = fd_hessian_quadform(f.value, h, h);
  r.first_order = -p * h_dot_grad;
  // Direct expansion: E[eta] = -p gives the first-order term, E[eta^2] = p
  // gives coefficient p/2 on the quadratic form. The displayed loss carries
  // coefficient p there instead; both are reported.
  r.second_order = 0.5 * p * quad;
  r.predicted = r.first_order + r.second_order;
  r.predicted_without_cross = r.predicted;
  r.predicted_display_form = r.first_order + p * quad;

  const Tensor zero(h.shape());
  McEstimate mc = mc_loop(opt.n_samples, r.excluded_samples, [&] {
    const bool drop = rng.uniform() < p;  // eta = -1
    return f.value(drop ? zero : h);
  });
  finish_report(r, mc, opt);
  return r;
}

RegularizerReport verify_data_dropout(const ScalarField& f, const Tensor& x, double p,
                                      const McOptions& opt, RngStream& rng,
                                      const std::string& slot) {
  if (!(p >= 0.0 && p < 1.0)) throw Error("verify_data_dropout: p outside [0,1)");
  if (x.rank() != 2)
    throw ShapeError("verify_data_dropout: expected rank-2 [tokens, width], got " + shape_str(x));
  RegularizerReport r;
  r.kind = "data";
  r.slot = slot;
  r.p = p;
  r.base_loss = f.value(x);

  const std::size_t m = x.rows(), d = x.cols();
  const Tensor grad = f.grad(x);
  r.first_order = -p * dot(x, grad);

  // Per-token diagonal blocks H_ii = v_i^T D2 v_i with v_i = row i of x, and
  // the off-diagonal remainder from the full direction.
  double diag_blocks = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    Tensor v({m, d});
    for (std::size_t j = 0; j < d; ++j) v.at(i, j) = x.at(i, j);
    diag_blocks += fd_hessian_quadform(f.value, x, v);
  }
  const double full_quad = fd_hessian_quadform(f.value, x, x);
  r.second_order = 0.5 * p * diag_blocks;
  r.cross_order = 0.5 * p * p * (full_quad - diag_blocks);
  r.predicted_without_cross = r.first_order + r.second_order;
  r.predicted = r.predicted_without_cross + r.cross_order;
  r.predicted_display_form = r.first_order + p * diag_blocks;

  Tensor masked = x;
  McEstimate mc = mc_loop(opt.n_samples, r.excluded_samples, [&] {
    for (std::size_t i = 0; i < m; ++i) {
      const double factor = rng.uniform() < p ? 0.0 : 1.0;  // 1 + beta_i
      for (std::size_t j = 0; j < d; ++j) masked.at(i, j) = factor * x.at(i, j);
    }
    return f.value(masked);
  });
  finish_report(r, mc, opt);
  return r;
}

double verify_ce_hessian(const Tensor& logits, int target_class, double step) {
  if (logits.rank() != 1)
    throw ShapeError("verify_ce_hessian: expected rank-1 logits, got " + shape_str(logits));
  const std::size_t v = logits.size();
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= v)
    throw Error("verify_ce_hessian: target class out of range");

  auto ce = [target_class](const Tensor& l) {
    double mx = l[0];
    for (std::size_t j = 1; j < l.size(); ++j) mx = std::max(mx, l[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < l.size(); ++j) denom += std::exp(l[j] - mx);
    return mx + std::log(denom) - l[target_class];
  };

  // Analytic Hessian diag(z) - z z^T (independent of the target class).
  std::vector<double> z(v);
  double mx = logits[0];
  for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, logits[j]);
  double denom = 0.0;
  for (std::size_t j = 0; j < v; ++j) {
    z[j] = std::exp(logits[j] - mx);
    denom += z[j];
  }
  for (auto& zz : z) zz /= denom;

  const Tensor fd_hess = fd_hessian_full(ce, logits, step);
  double dev = 0.0;
  for (std::size_t i = 0; i < v; ++i)
    for (std::size_t j = 0; j < v; ++j) {
      const double analytic = (i == j ? z[i] : 0.0) - z[i] * z[j];
      dev = std::max(dev, std::fabs(fd_hess.at(i, j) - analytic));
    }
  return dev;
}

double jacobian_frobenius_norm(Tape& tape, Var output, Var input) {
  const Tensor& out = tape.value(output);
  double sq = 0.0;
  Tensor seed(out.shape());
  for (std::size_t k = 0; k < out.size(); ++k) {
    for (auto& s : seed.data()) s = 0.0;
    seed[k] = 1.0;
    tape.backward_seeded(output, seed);
    const Tensor& row = tape.adjoint(input);
    sq += dot(row, row);
  }
  return std::sqrt(sq);
}

ProbeTarget::ProbeTarget(const ModelConfig& cfg, const TransformerParams& params,
                         std::vector<int> src, std::vector<int> tgt, std::string slot,
                         double label_smoothing)
    : cfg_(cfg),
      params_(params),
      src_(std::move(src)),
      tgt_(std::move(tgt)),
      slot_(std::move(slot)),
      smoothing_(label_smoothing) {
  if (slot_ == "input-embeddings") slot_ = "src_embed";
  Tape tape;
  ParamVars pv = register_params(tape, params_);
  TraceHooks hooks;
  hooks.capture = true;
  SeqLoss sl =
      sequence_loss(tape, cfg_, pv, src_, tgt_, smoothing_, nullptr, nullptr, nullptr, &hooks);
  Var loss = tape.scale(sl.loss_sum, 1.0 / sl.tokens);
  auto it = hooks.captured.find(slot_);
  if (it == hooks.captured.end()) throw Error("probe target: unknown slot '" + slot_ + "'");
  nominal_ = it->second;
  base_loss_ = tape.value(loss).item();
}

double ProbeTarget::loss_at(const Tensor& h) const {
  Tape tape;
  ParamVars pv = register_params(tape, params_);
  TraceHooks hooks;
  hooks.injections[slot_] = h;
  SeqLoss sl =
      sequence_loss(tape, cfg_, pv, src_, tgt_, smoothing_, nullptr, nullptr, nullptr, &hooks);
  return tape.value(tape.scale(sl.loss_sum, 1.0 / sl.tokens)).item();
}

Tensor ProbeTarget::gradient_at(const Tensor& h) const {
  Tape tape;
  ParamVars pv = register_params(tape, params_);
  TraceHooks hooks;
  hooks.injections[slot_] = h;
  SeqLoss sl =
      sequence_loss(tape, cfg_, pv, src_, tgt_, smoothing_, nullptr, nullptr, nullptr, &hooks);
  Var loss = tape.scale(sl.loss_sum, 1.0 / sl.tokens);
  tape.backward(loss);
  return tape.adjoint(hooks.slot_vars.at(slot_));
}

ScalarField ProbeTarget::field() const {
  return ScalarField{[this](const Tensor& h) { return loss_at(h); },
                     [this](const Tensor& h) { return gradient_at(h); }};
}

double ProbeTarget::jacobian_norm() const {
  Tape tape;
  ParamVars pv = register_params(tape, params_);
  TraceHooks hooks;
  hooks.injections[slot_] = nominal_;
  SeqLoss sl =
      sequence_loss(tape, cfg_, pv, src_, tgt_, smoothing_, nullptr, nullptr, nullptr, &hooks);
  return jacobian_frobenius_norm(tape, sl.logits, hooks.slot_vars.at(slot_));
}

OrthogonalityReport layer_norm_orthogonality(const ProbeTarget& target) {
  OrthogonalityReport r;
  const Tensor& h = target.nominal();
  const Tensor g = target.gradient_at(h);
  r.inner = std::fabs(dot(h, g));
  r.h_norm = l2_norm(h);
  r.grad_norm = l2_norm(g);
  const double denom = r.h_norm * r.grad_norm;
  r.ratio = denom > 0.0 ? r.inner / denom : 0.0;
  return r;
}

std::string to_json_string(const RegularizerReport& r) {
  nlohmann::json j{{"kind", r.kind},
                   {"slot", r.slot},
                   {"p", r.p},
                   {"n_samples", r.n_samples},
                   {"base_loss", r.base_loss},
                   {"mc_mean", r.mc_mean},
                   {"mc_std_error", r.mc_std_error},
                   {"mc_gap", r.mc_gap},
                   {"predicted", r.predicted},
                   {"first_order", r.first_order},
                   {"second_order", r.second_order},
                   {"cross_order", r.cross_order},
                   {"predicted_without_cross", r.predicted_without_cross},
                   {"predicted_display_form", r.predicted_display_form},
                   {"rel_mismatch", r.rel_mismatch},
                   {"rel_mismatch_display_form", r.rel_mismatch_display_form},
                   {"mismatch_floor", r.mismatch_floor},
                   {"tolerance", r.tolerance},
                   {"excluded_samples", r.excluded_samples},
                   {"se_exceeds_half_gap", r.se_exceeds_half_gap}};
  return j.dump();
}

}  // namespace unidrop
