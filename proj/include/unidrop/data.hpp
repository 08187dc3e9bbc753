#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "unidrop/dropout.hpp"
#include "unidrop/rng.hpp"

namespace unidrop {

struct DataError : Error {
  using Error::Error;
};

// Token/id maps with fixed reserved ids. Non-reserved tokens are bijective
// with ids >= 4; unknown tokens map to unk on lookup.
class Vocabulary {
 public:
  static constexpr int pad_id = 0;
  static constexpr int bos_id = 1;
  static constexpr int eos_id = 2;
  static constexpr int unk_id = 3;

  Vocabulary();

  int add(const std::string& token);            // idempotent
  int id(const std::string& token) const;       // unk_id if absent
  const std::string& token(int id) const;
  std::size_t size() const { return id_to_token_.size(); }

  std::vector<int> tokenize(const std::vector<std::string>& tokens) const;
  std::vector<std::string> detokenize(const std::vector<int>& ids) const;

  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Whitespace tokenization of a line; detokenize joins with single spaces.
std::vector<std::string> split_tokens(const std::string& line);
std::string join_tokens(const std::vector<std::string>& tokens);

struct SentencePair {
  std::vector<std::string> src;
  std::vector<std::string> tgt;
};

struct Corpus {
  std::vector<SentencePair> pairs;
  bool empty() const { return pairs.empty(); }
  std::size_t size() const { return pairs.size(); }
};

enum class TaskKind { copy, reverse, sort, noisy_lexicon };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind k);

// Synthetic seq2seq task generator. Source sequences are unique across the
// whole corpus, so the train/dev/test splits are pairwise disjoint. The
// noisy-lexicon task maps each token through a fixed random bijection and
// corrupts each target token with probability noise_rate.
struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  int vocab_size = 30;        // number of real (non-reserved) symbols
  int min_len = 3;
  int max_len = 12;
  int pairs = 200;            // training pairs; dev/test each get pairs/5 (min 10)
  double noise_rate = 0.1;    // noisy_lexicon only
  std::uint64_t seed = 1;
};

struct SplitCorpora {
  Corpus train, dev, test;
};

SplitCorpora generate_task(const TaskSpec& spec);

// One "source<TAB>target" pair per line, whitespace-tokenized. A line with
// no tab is a fatal error naming the line number; a line longer than
// max_len tokens on either side is dropped and counted in *dropped_lines.
Corpus load_tsv(const std::string& path, int max_len, std::size_t* dropped_lines = nullptr);
void save_tsv(const Corpus& corpus, const std::string& path);

// Tokenized, padded batch. Sequences carry bos ... eos; masks are 1 exactly
// where the id is not pad.
struct Batch {
  std::vector<std::vector<int>> src;           // [B, Ws], padded
  std::vector<std::vector<int>> tgt;           // [B, Wt], padded
  std::vector<std::vector<std::uint8_t>> src_mask;
  std::vector<std::vector<std::uint8_t>> tgt_mask;
  std::vector<int> src_len;                    // incl. bos/eos
  std::vector<int> tgt_len;
  std::size_t size() const { return src.size(); }
};

// Length-bucketed (bucket boundary 8 tokens) then shuffled batches, padded
// to the per-batch maximum. Same shuffle stream state -> same batch order.
std::vector<Batch> make_batches(const Corpus& corpus, const Vocabulary& vocab,
                                std::size_t batch_size, RngStream& shuffle_rng);

// Applies two-stage data dropout to each source sequence (bos/eos never
// dropped), then re-pads. Targets are untouched.
Batch train_view_with_data_dropout(const Batch& batch, const DropoutSpec& spec, RngStream& rng);

// Vocabulary over all source and target tokens of a corpus, insertion
// ordered by frequency (desc) then token (asc) for determinism.
Vocabulary build_vocabulary(const Corpus& corpus);

}  // namespace unidrop
