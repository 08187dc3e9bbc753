#include "unidrop/search.hpp"

#include <algorithm>
#include <cmath>

namespace unidrop {

namespace {

// Log-softmax of the last row of a logits matrix, computed on values.
std::vector<double> last_row_log_probs(const Tensor& logits) {
  const std::size_t t = logits.rows() - 1, v = logits.cols();
  double mx = logits.at(t, 0);
  for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, logits.at(t, j));
  double denom = 0.0;
  for (std::size_t j = 0; j < v; ++j) denom += std::exp(logits.at(t, j) - mx);
  const double lse = mx + std::log(denom);
  std::vector<double> lp(v);
  for (std::size_t j = 0; j < v; ++j) lp[j] = logits.at(t, j) - lse;
  return lp;
}

std::vector<int> strip_bos(const std::vector<int>& seq_with_bos, bool drop_trailing_eos) {
  std::vector<int> out(seq_with_bos.begin() + 1, seq_with_bos.end());
  if (drop_trailing_eos && !out.empty() && out.back() == Vocabulary::eos_id) out.pop_back();
  return out;
}

}  // namespace

std::vector<int> greedy_decode(const ModelConfig& cfg, const TransformerParams& params,
                               const std::vector<int>& src) {
  Tape tape;
  ParamVars pv = register_params(tape, params);
  Var memory = encode_source(tape, cfg, pv, src, nullptr, nullptr, nullptr, nullptr);
  std::vector<int> prefix{Vocabulary::bos_id};
  while (static_cast<int>(prefix.size()) < cfg.max_len) {
    Var logits = decode_target(tape, cfg, pv, memory, prefix, nullptr, nullptr, nullptr, nullptr);
    const auto lp = last_row_log_probs(tape.value(logits));
    int best = 0;
    for (std::size_t j = 1; j < lp.size(); ++j)
      if (lp[j] > lp[best]) best = static_cast<int>(j);
    prefix.push_back(best);
    if (best == Vocabulary::eos_id) break;
  }
  return strip_bos(prefix, true);
}

std::vector<int> beam_decode(const ModelConfig& cfg, const TransformerParams& params,
                             const std::vector<int>& src, const DecodeParams& dp) {
  if (dp.beam_width < 1) throw Error("beam_decode: beam width must be >= 1");

  struct Hyp {
    std::vector<int> tokens;  // starts with bos
    double log_prob = 0.0;
  };
  auto final_score = [&](const Hyp& h) {
    // Generated length includes eos, excludes bos.
    const double len = static_cast<double>(h.tokens.size() - 1);
    return h.log_prob / std::pow(std::max(len, 1.0), dp.length_penalty);
  };

  Tape tape;
  ParamVars pv = register_params(tape, params);
  Var memory = encode_source(tape, cfg, pv, src, nullptr, nullptr, nullptr, nullptr);

  std::vector<Hyp> live{Hyp{{Vocabulary::bos_id}, 0.0}};
  std::vector<Hyp> finished;

  while (!live.empty() && static_cast<int>(live.front().tokens.size()) < cfg.max_len) {
    struct Cand {
      std::size_t hyp;
      int token;
      double log_prob;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      Var logits =
          decode_target(tape, cfg, pv, memory, live[h].tokens, nullptr, nullptr, nullptr, nullptr);
      const auto lp = last_row_log_probs(tape.value(logits));
      for (std::size_t j = 0; j < lp.size(); ++j)
        cands.push_back({h, static_cast<int>(j), live[h].log_prob + lp[j]});
    }
    // Deterministic order: score desc, then token id asc, then source hyp.
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.token != b.token) return a.token < b.token;
      return a.hyp < b.hyp;
    });

    // Top beam_width candidates in total; a hypothesis that emits eos
    // retires to the finished pool and frees its beam slot.
    std::vector<Hyp> next;
    int taken = 0;
    for (const Cand& c : cands) {
      if (taken >= dp.beam_width) break;
      ++taken;
      Hyp h = live[c.hyp];
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      if (c.token == Vocabulary::eos_id)
        finished.push_back(std::move(h));
      else
        next.push_back(std::move(h));
    }
    live = std::move(next);
  }

  // Length cap reached: remaining live hypotheses compete as-is.
  for (auto& h : live) finished.push_back(std::move(h));
  if (finished.empty()) return {};
  const Hyp* best = &finished[0];
  for (const auto& h : finished)
    if (final_score(h) > final_score(*best)) best = &h;
  return strip_bos(best->tokens, true);
}

}  // namespace unidrop
