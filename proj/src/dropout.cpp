#include "unidrop/dropout.hpp"

#include <string>

namespace unidrop {

namespace {

void check_rate(const char* name, double r, double hi_exclusive) {
  if (!(r >= 0.0 && r < hi_exclusive))
    throw Error(std::string("dropout spec: ") + name + " = " + std::to_string(r) +
                " outside [0, " + std::to_string(hi_exclusive) + ")");
}

}  // namespace

void DropoutSpec::validate() const {
  check_rate("fd1_rate", fd1_rate, 1.0);
  check_rate("fd2_rate", fd2_rate, 1.0);
  check_rate("fd3_rate", fd3_rate, 1.0);
  check_rate("fd4_rate", fd4_rate, 1.0);
  check_rate("residual_rate", residual_rate, 1.0);
  check_rate("layerdrop_rate", layerdrop_rate, 1.0);
  check_rate("qkv_proj_rate", qkv_proj_rate, 1.0);
  check_rate("logits_drop_rate", logits_drop_rate, 1.0);
  check_rate("encoder_drop_rate", encoder_drop_rate, 1.0);
  check_rate("dd_token_prob", dd_token_prob, 1.0);
  if (!(dd_keep_prob >= 0.0 && dd_keep_prob <= 1.0))
    throw Error("dropout spec: dd_keep_prob = " + std::to_string(dd_keep_prob) +
                " outside [0, 1]");
}

DropoutSpec DropoutSpec::disabled() {
  DropoutSpec s;
  s.fd1_rate = s.fd2_rate = s.fd3_rate = s.fd4_rate = 0.0;
  s.residual_rate = 0.0;
  s.layerdrop_rate = 0.0;
  s.layerdrop_scope = LayerDropScope::none;
  s.qkv_proj_rate = s.logits_drop_rate = s.encoder_drop_rate = 0.0;
  s.dd_keep_prob = 1.0;
  s.dd_token_prob = 0.0;
  return s;
}

FeatureMask sample_feature_mask(const std::vector<std::size_t>& shape, double p, RngStream& rng) {
  check_rate("feature mask p", p, 1.0);
  FeatureMask m{Tensor(shape)};
  if (p == 0.0) return m;  // xi all zero, h unchanged
  const double survive = p / (1.0 - p);
  for (auto& x : m.xi.data()) x = rng.uniform() < p ? -1.0 : survive;
  return m;
}

Tensor apply_feature_dropout(const Tensor& h, const FeatureMask& mask) {
  if (!h.same_shape(mask.xi))
    throw ShapeError("apply_feature_dropout: mask " + shape_str(mask.xi) + " vs input " +
                     shape_str(h));
  Tensor out = h;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= 1.0 + mask.xi[i];
  return out;
}

StructureMask sample_layer_mask(std::size_t num_layers, double rate, RngStream& rng) {
  check_rate("layerdrop rate", rate, 1.0);
  StructureMask m{std::vector<double>(num_layers, 0.0)};
  if (rate == 0.0) return m;
  bool all_dropped = num_layers > 0;
  for (std::size_t l = 0; l < num_layers; ++l) {
    if (rng.uniform() < rate)
      m.eta[l] = -1.0;
    else
      all_dropped = false;
  }
  if (all_dropped) m.eta[num_layers - 1] = 0.0;
  return m;
}

DataMask sample_data_mask(std::size_t num_tokens, double keep_prob, double token_prob,
                          RngStream& rng) {
  check_rate("dd_token_prob", token_prob, 1.0);
  DataMask m;
  m.beta.assign(num_tokens, 0.0);
  if (rng.uniform() < keep_prob) return m;  // stage 1: kept verbatim
  m.applied = true;
  for (auto& b : m.beta)
    if (rng.uniform() < token_prob) b = -1.0;
  return m;
}

std::vector<int> apply_two_stage_data_dropout(const std::vector<int>& tokens,
                                              const DropoutSpec& spec, RngStream& rng) {
  if (tokens.empty()) throw Error("apply_two_stage_data_dropout: empty sequence");
  DataMask m = sample_data_mask(tokens.size(), spec.dd_keep_prob, spec.dd_token_prob, rng);
  if (!m.applied) return tokens;
  std::vector<int> kept;
  kept.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (m.beta[i] == 0.0) kept.push_back(tokens[i]);
  if (kept.empty()) kept.push_back(tokens[rng.below(tokens.size())]);
  return kept;
}

}  // namespace unidrop
