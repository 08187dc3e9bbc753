#pragma once

#include <functional>
#include <memory>
#include <string>

#include "unidrop/fd.hpp"
#include "unidrop/model.hpp"

namespace unidrop {

// Monte-Carlo vs. Taylor-predicted regularizer comparison record. The
// predicted gap is always re-derived from the mask moments
// (E[xi]=0, E[xi^2]=p/(1-p); E[eta]=-p, E[eta^2]=p; E[beta]=-p,
// E[beta^2]=p, E[beta_i beta_j]=p^2), and the displayed-form prediction
// (coefficient p on the quadratic term, no cross term) is reported next to
// it for comparison.
struct RegularizerReport {
  std::string kind;  // "feature" | "structure" | "data"
  std::string slot;
  double p = 0.0;
  int n_samples = 0;
  double base_loss = 0.0;
  double mc_mean = 0.0;
  double mc_std_error = 0.0;
  double mc_gap = 0.0;  // mc_mean - base_loss

  double predicted = 0.0;      // derived second-order prediction of the gap
  double first_order = 0.0;    // -p * h^T grad (structure/data; 0 for feature)
  double second_order = 0.0;   // quadratic term with derived coefficient
  double cross_order = 0.0;    // data only: (p^2/2) * off-diagonal block sum
  double predicted_without_cross = 0.0;
  double predicted_display_form = 0.0;  // the stated regularized-loss form

  double rel_mismatch = 0.0;  // |mc_gap - predicted| / max(|predicted|, floor)
  double rel_mismatch_display_form = 0.0;
  double mismatch_floor = 1e-8;
  double tolerance = 0.0;  // 0 when the caller asserts nothing

  int excluded_samples = 0;       // non-finite losses under some mask
  bool se_exceeds_half_gap = false;

  bool within_tolerance() const { return tolerance <= 0.0 || rel_mismatch <= tolerance; }
};

std::string to_json_string(const RegularizerReport& r);

// A scalar function of a tensor plus (optionally) its exact gradient.
// When gradient is absent the oracle falls back to central differences.
struct ScalarField {
  ScalarFn value;
  std::function<Tensor(const Tensor&)> gradient;

  Tensor grad(const Tensor& at) const {
    return gradient ? gradient(at) : fd_gradient(value, at);
  }
};

struct McOptions {
  int n_samples = 200000;
  double mismatch_floor = 1e-8;
  double tolerance = 0.0;
};

// E_xi L((1+xi) ⊙ h) vs L(h) + p/(2(1-p)) * sum_j D2_jj L * h_j^2.
RegularizerReport verify_feature_dropout(const ScalarField& f, const Tensor& h, double p,
                                         const McOptions& opt, RngStream& rng,
                                         const std::string& slot = "");

// E_eta L((1+eta) h) vs L(h) - p h^T grad + (p/2) h^T (D2 L) h.
RegularizerReport verify_structure_dropout(const ScalarField& f, const Tensor& h, double p,
                                           const McOptions& opt, RngStream& rng,
                                           const std::string& slot = "");

// E_beta L((1+beta) ⊙ x) with per-token (per-row) beta, vs the derived
// expansion: -p sum_i g_i + (p/2) sum_i H_ii + (p^2/2) sum_{i≠j} H_ij, where
// g_i and H_ij are the per-token first/second directional terms. x must be
// rank 2 with one row per token.
RegularizerReport verify_data_dropout(const ScalarField& f, const Tensor& x, double p,
                                      const McOptions& opt, RngStream& rng,
                                      const std::string& slot = "");

// Max-abs deviation between the finite-difference Hessian of unsmoothed
// cross entropy at `logits` (rank 1) and the analytic diag(z) - z z^T.
double verify_ce_hessian(const Tensor& logits, int target_class,
                         double step = kFdHessStep);

// Frobenius norm of d(output)/d(input) assembled by one seeded backward
// pass per output coordinate.
double jacobian_frobenius_norm(Tape& tape, Var output, Var input);

// Loss of a frozen model as a function of one named activation, via
// capture + injection on a fixed source/target pair. All evaluations are
// dropout-free; f(nominal()) reproduces base_loss() bitwise.
class ProbeTarget {
 public:
  ProbeTarget(const ModelConfig& cfg, const TransformerParams& params, std::vector<int> src,
              std::vector<int> tgt, std::string slot, double label_smoothing);

  const Tensor& nominal() const { return nominal_; }
  double base_loss() const { return base_loss_; }
  const std::string& slot() const { return slot_; }

  double loss_at(const Tensor& h) const;
  Tensor gradient_at(const Tensor& h) const;

  ScalarField field() const;

  // Frobenius norm of the slot-to-logits Jacobian at the nominal activation.
  double jacobian_norm() const;

 private:
  const ModelConfig& cfg_;
  const TransformerParams& params_;
  std::vector<int> src_, tgt_;
  std::string slot_;
  double smoothing_;
  Tensor nominal_;
  double base_loss_ = 0.0;
};

// |h^T grad| / (|h| |grad|) at the nominal activation; the layer-norm
// orthogonality measurement. Guarded against zero norms.
struct OrthogonalityReport {
  double inner = 0.0;
  double h_norm = 0.0;
  double grad_norm = 0.0;
  double ratio = 0.0;
};
OrthogonalityReport layer_norm_orthogonality(const ProbeTarget& target);

// Deterministic pairwise-summation reduction; independent of any future
// parallel split of the sample buffer.
double pairwise_sum(const double* data, std::size_t n);

}  // namespace unidrop
