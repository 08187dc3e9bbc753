#pragma once

#include <vector>

#include "unidrop/rng.hpp"
#include "unidrop/tensor.hpp"

namespace unidrop {

enum class LayerDropScope { decoder_only, encoder_only, both, none };

// All dropout positions and rates. Rates apply at training time only;
// evaluation runs with the spec absent and every apply_* becomes identity.
struct DropoutSpec {
  // Feature dropout positions (attention weights, FFN activation,
  // pre-projection Q/K/V, final features).
  double fd1_rate = 0.1;
  double fd2_rate = 0.1;
  double fd3_rate = 0.1;
  double fd4_rate = 0.1;

  // Residual-path dropout on each sub-layer output, distinct from FD-1..4.
  double residual_rate = 0.1;

  double layerdrop_rate = 0.1;
  LayerDropScope layerdrop_scope = LayerDropScope::decoder_only;

  // Alternative placements, default off: post-projection Q/K/V dropout,
  // dropout on output logits, and whole-encoder drop for cross-attention.
  double qkv_proj_rate = 0.0;
  double logits_drop_rate = 0.0;
  double encoder_drop_rate = 0.0;

  // Two-stage data dropout: keep the sequence verbatim with probability
  // dd_keep_prob, otherwise delete each token independently with
  // probability dd_token_prob.
  double dd_keep_prob = 0.5;
  double dd_token_prob = 0.2;

  // Throws on out-of-range rates.
  void validate() const;

  // Everything off: rates 0, dd_keep_prob 1.
  static DropoutSpec disabled();
};

// Per-coordinate scaling mask xi with entries in {-1, p/(1-p)}:
// -1 with probability p, p/(1-p) otherwise, so E[1+xi] = 1 and survivors
// are scaled by 1/(1-p) at train time (no rescale at evaluation).
struct FeatureMask {
  Tensor xi;
};

// Per-layer scalar eta in {-1, 0}: -1 with probability rate.
struct StructureMask {
  std::vector<double> eta;
  bool dropped(std::size_t layer) const { return eta[layer] == -1.0; }
};

// Two-stage per-token mask: `applied` is false with probability p_k
// (sequence kept verbatim, beta all zero); otherwise each token's beta is
// -1 independently with probability p.
struct DataMask {
  bool applied = false;
  std::vector<double> beta;
};

FeatureMask sample_feature_mask(const std::vector<std::size_t>& shape, double p, RngStream& rng);

// (1 + xi) ⊙ h. Coordinates with xi = -1 are exactly zero.
Tensor apply_feature_dropout(const Tensor& h, const FeatureMask& mask);

// Independent per-layer draws; if every layer would drop, the deepest layer
// is forced to survive so the stack never collapses to identity.
StructureMask sample_layer_mask(std::size_t num_layers, double rate, RngStream& rng);

DataMask sample_data_mask(std::size_t num_tokens, double keep_prob, double token_prob,
                          RngStream& rng);

// Token-removal view used by the training pipeline: returns the surviving
// subsequence. If stage 2 marks every token, one uniformly chosen token is
// kept (re-drawing would bias the per-token rate; the kept-token bias is
// O(p^m)). Input must be non-empty and free of padding ids.
std::vector<int> apply_two_stage_data_dropout(const std::vector<int>& tokens,
                                              const DropoutSpec& spec, RngStream& rng);

}  // namespace unidrop
