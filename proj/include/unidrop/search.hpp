#pragma once

#include <vector>

#include "unidrop/model.hpp"

namespace unidrop {

struct DecodeParams {
  int beam_width = 5;
  double length_penalty = 1.0;
};

// Greedy decode for one source sequence (bos ... eos ids). Returns the
// generated interior tokens (no bos/eos). Deterministic; ties broken toward
// the lowest token id. Generation stops at eos or when the sequence would
// exceed cfg.max_len.
std::vector<int> greedy_decode(const ModelConfig& cfg, const TransformerParams& params,
                               const std::vector<int>& src);

// Beam search. Finished hypotheses are scored by log-prob / length^penalty
// where length counts generated tokens including eos. beam_width 1
// reproduces greedy_decode exactly.
std::vector<int> beam_decode(const ModelConfig& cfg, const TransformerParams& params,
                             const std::vector<int>& src, const DecodeParams& dp);

}  // namespace unidrop
