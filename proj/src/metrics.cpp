#include "unidrop/metrics.hpp"

#include <cmath>
#include <map>

#include "unidrop/tensor.hpp"

namespace unidrop {

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const TokenSeq& seq, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i)
    ++counts[std::vector<std::string>(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

}  // namespace

BleuResult corpus_bleu(const std::vector<TokenSeq>& candidates,
                       const std::vector<TokenSeq>& references) {
  if (candidates.size() != references.size())
    throw Error("corpus_bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                std::to_string(references.size()) + " references");
  BleuResult r;
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    r.candidate_length += candidates[s].size();
    r.reference_length += references[s].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      auto cand = ngram_counts(candidates[s], n);
      auto ref = ngram_counts(references[s], n);
      for (const auto& [gram, c] : cand) {
        auto it = ref.find(gram);
        if (it != ref.end()) matches[n - 1] += std::min(c, it->second);
        totals[n - 1] += c;
      }
    }
  }
  if (totals[0] == 0 || matches[0] == 0) return r;  // bleu 0

  double log_prec_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double p;
    if (n == 0)
      p = static_cast<double>(matches[0]) / static_cast<double>(totals[0]);
    else
      p = (static_cast<double>(matches[n]) + 1.0) / (static_cast<double>(totals[n]) + 1.0);
    r.precisions[n] = p;
    log_prec_sum += 0.25 * std::log(p);
  }
  r.brevity_penalty =
      r.candidate_length >= r.reference_length
          ? 1.0
          : std::exp(1.0 - static_cast<double>(r.reference_length) /
                               static_cast<double>(r.candidate_length));
  r.bleu = 100.0 * r.brevity_penalty * std::exp(log_prec_sum);
  return r;
}

double exact_match(const std::vector<TokenSeq>& candidates,
                   const std::vector<TokenSeq>& references) {
  if (candidates.size() != references.size() || candidates.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t s = 0; s < candidates.size(); ++s)
    if (candidates[s] == references[s]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(candidates.size());
}

double token_accuracy(const std::vector<TokenSeq>& candidates,
                      const std::vector<TokenSeq>& references) {
  std::size_t hits = 0, total = 0;
  for (std::size_t s = 0; s < candidates.size() && s < references.size(); ++s) {
    total += references[s].size();
    const std::size_t overlap = std::min(candidates[s].size(), references[s].size());
    for (std::size_t i = 0; i < overlap; ++i)
      if (candidates[s][i] == references[s][i]) ++hits;
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double classification_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (predicted[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace unidrop
