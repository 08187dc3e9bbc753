#pragma once

#include <string>
#include <vector>

namespace unidrop {

using TokenSeq = std::vector<std::string>;

// Corpus BLEU-4: uniform weights, multiplicative brevity penalty, add-one
// smoothing on n-gram counts for n >= 2 at corpus level (tiny corpora would
// otherwise hit zero counts; absolute values are not comparable to
// unsmoothed scripts). A corpus with no unigram matches scores 0.
struct BleuResult {
  double bleu = 0.0;  // 0..100
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 1.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

BleuResult corpus_bleu(const std::vector<TokenSeq>& candidates,
                       const std::vector<TokenSeq>& references);

// Fraction of candidates exactly equal to their reference, in [0,1].
double exact_match(const std::vector<TokenSeq>& candidates,
                   const std::vector<TokenSeq>& references);

// Position-wise match fraction, denominator = total reference tokens.
double token_accuracy(const std::vector<TokenSeq>& candidates,
                      const std::vector<TokenSeq>& references);

// Fraction of positions where predicted class id equals the true id.
double classification_accuracy(const std::vector<int>& predicted,
                               const std::vector<int>& truth);

}  // namespace unidrop
