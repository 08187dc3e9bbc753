#include "unidrop/data.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace unidrop {

Vocabulary::Vocabulary() {
  id_to_token_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (int i = 0; i < 4; ++i) token_to_id_[id_to_token_[i]] = i;
}

int Vocabulary::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  int id = static_cast<int>(id_to_token_.size());
  id_to_token_.push_back(token);
  token_to_id_[token] = id;
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? unk_id : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= static_cast<int>(id_to_token_.size()))
    throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
  return id_to_token_[id];
}

std::vector<int> Vocabulary::tokenize(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "copy") return TaskKind::copy;
  if (s == "reverse") return TaskKind::reverse;
  if (s == "sort") return TaskKind::sort;
  if (s == "noisy_lexicon") return TaskKind::noisy_lexicon;
  throw DataError("unknown task kind '" + s +
                  "' (expected copy, reverse, sort, or noisy_lexicon)");
}

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::sort: return "sort";
    case TaskKind::noisy_lexicon: return "noisy_lexicon";
  }
  return "?";
}

namespace {

std::string symbol_name(int i) { return "w" + std::to_string(i); }

}  // namespace

SplitCorpora generate_task(const TaskSpec& spec) {
  if (spec.pairs < 10) throw DataError("generate_task: need at least 10 pairs");
  if (spec.min_len < 1 || spec.max_len < spec.min_len)
    throw DataError("generate_task: invalid length range [" + std::to_string(spec.min_len) +
                    ", " + std::to_string(spec.max_len) + "]");
  if (spec.vocab_size < 2) throw DataError("generate_task: vocab too small");
  if (spec.kind == TaskKind::noisy_lexicon && spec.vocab_size < 2)
    throw DataError("generate_task: vocab too small for a lexicon bijection");

  RngStream rng(spec.seed, "task-generation");

  // Fixed random bijection over symbols (Fisher-Yates), used by noisy_lexicon.
  std::vector<int> lexicon(spec.vocab_size);
  for (int i = 0; i < spec.vocab_size; ++i) lexicon[i] = i;
  for (int i = spec.vocab_size - 1; i > 0; --i)
    std::swap(lexicon[i], lexicon[rng.below(static_cast<std::uint64_t>(i) + 1)]);

  const int dev_pairs = std::max(10, spec.pairs / 5);
  const int test_pairs = dev_pairs;
  const int total = spec.pairs + dev_pairs + test_pairs;

  std::set<std::vector<int>> seen;
  std::vector<SentencePair> all;
  all.reserve(total);
  int attempts = 0;
  const int max_attempts = total * 200;
  while (static_cast<int>(all.size()) < total) {
    if (++attempts > max_attempts)
      throw DataError("generate_task: could not draw enough distinct sources; "
                      "increase vocab or length range");
    const int len =
        spec.min_len + static_cast<int>(rng.below(spec.max_len - spec.min_len + 1));
    std::vector<int> src(len);
    for (auto& s : src) s = static_cast<int>(rng.below(spec.vocab_size));
    if (!seen.insert(src).second) continue;

    std::vector<int> tgt;
    switch (spec.kind) {
      case TaskKind::copy:
        tgt = src;
        break;
      case TaskKind::reverse:
        tgt.assign(src.rbegin(), src.rend());
        break;
      case TaskKind::sort:
        tgt = src;
        std::sort(tgt.begin(), tgt.end());
        break;
      case TaskKind::noisy_lexicon:
        tgt.reserve(src.size());
        for (int s : src) {
          int t = lexicon[s];
          if (spec.noise_rate > 0.0 && rng.uniform() < spec.noise_rate)
            t = static_cast<int>(rng.below(spec.vocab_size));
          tgt.push_back(t);
        }
        break;
    }

    SentencePair p;
    for (int s : src) p.src.push_back(symbol_name(s));
    for (int t : tgt) p.tgt.push_back(symbol_name(t));
    all.push_back(std::move(p));
  }

  SplitCorpora out;
  out.train.pairs.assign(all.begin(), all.begin() + spec.pairs);
  out.dev.pairs.assign(all.begin() + spec.pairs, all.begin() + spec.pairs + dev_pairs);
  out.test.pairs.assign(all.begin() + spec.pairs + dev_pairs, all.end());
  return out;
}

Corpus load_tsv(const std::string& path, int max_len, std::size_t* dropped_lines) {
  std::ifstream in(path);
  if (!in) throw DataError("load_tsv: cannot open '" + path + "'");
  Corpus corpus;
  std::size_t dropped = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("load_tsv: line " + std::to_string(line_no) + " of '" + path +
                      "' has no tab separator");
    SentencePair p;
    p.src = split_tokens(line.substr(0, tab));
    p.tgt = split_tokens(line.substr(tab + 1));
    if (static_cast<int>(p.src.size()) > max_len || static_cast<int>(p.tgt.size()) > max_len) {
      ++dropped;
      continue;
    }
    corpus.pairs.push_back(std::move(p));
  }
  if (dropped > 0)
    std::cerr << "load_tsv: dropped " << dropped << " line(s) exceeding max_len " << max_len
              << " from '" << path << "'\n";
  if (corpus.empty())
    std::cerr << "load_tsv: '" << path << "' produced an empty corpus\n";
  if (dropped_lines) *dropped_lines = dropped;
  return corpus;
}

void save_tsv(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("save_tsv: cannot open '" + path + "' for writing");
  for (const auto& p : corpus.pairs)
    out << join_tokens(p.src) << '\t' << join_tokens(p.tgt) << '\n';
}

Vocabulary build_vocabulary(const Corpus& corpus) {
  std::map<std::string, std::size_t> freq;
  for (const auto& p : corpus.pairs) {
    for (const auto& t : p.src) ++freq[t];
    for (const auto& t : p.tgt) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, n] : items) v.add(tok);
  return v;
}

namespace {

std::vector<int> with_bos_eos(const std::vector<int>& ids) {
  std::vector<int> out;
  out.reserve(ids.size() + 2);
  out.push_back(Vocabulary::bos_id);
  out.insert(out.end(), ids.begin(), ids.end());
  out.push_back(Vocabulary::eos_id);
  return out;
}

void pad_into_batch(const std::vector<std::vector<int>>& seqs, std::vector<std::vector<int>>& out,
                    std::vector<std::vector<std::uint8_t>>& mask, std::vector<int>& lens) {
  std::size_t width = 0;
  for (const auto& s : seqs) width = std::max(width, s.size());
  out.clear();
  mask.clear();
  lens.clear();
  for (const auto& s : seqs) {
    std::vector<int> row(width, Vocabulary::pad_id);
    std::vector<std::uint8_t> mrow(width, 0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      row[i] = s[i];
      mrow[i] = 1;
    }
    out.push_back(std::move(row));
    mask.push_back(std::move(mrow));
    lens.push_back(static_cast<int>(s.size()));
  }
}

}  // namespace

std::vector<Batch> make_batches(const Corpus& corpus, const Vocabulary& vocab,
                                std::size_t batch_size, RngStream& shuffle_rng) {
  if (batch_size == 0) throw DataError("make_batches: batch_size must be positive");

  struct Item {
    std::vector<int> src, tgt;
    std::size_t bucket;
  };
  std::vector<Item> items;
  items.reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    Item it;
    it.src = with_bos_eos(vocab.tokenize(p.src));
    it.tgt = with_bos_eos(vocab.tokenize(p.tgt));
    it.bucket = p.src.size() / 8;  // bucket boundary: 8 source tokens
    items.push_back(std::move(it));
  }

  // Stable bucket order, then shuffle within buckets and shuffle batch order.
  std::stable_sort(items.begin(), items.end(),
                   [](const Item& a, const Item& b) { return a.bucket < b.bucket; });
  for (std::size_t lo = 0; lo < items.size();) {
    std::size_t hi = lo;
    while (hi < items.size() && items[hi].bucket == items[lo].bucket) ++hi;
    for (std::size_t i = hi - lo; i > 1; --i)
      std::swap(items[lo + i - 1], items[lo + shuffle_rng.below(i)]);
    lo = hi;
  }

  std::vector<Batch> batches;
  for (std::size_t lo = 0; lo < items.size(); lo += batch_size) {
    const std::size_t hi = std::min(items.size(), lo + batch_size);
    std::vector<std::vector<int>> srcs, tgts;
    for (std::size_t i = lo; i < hi; ++i) {
      srcs.push_back(items[i].src);
      tgts.push_back(items[i].tgt);
    }
    Batch b;
    pad_into_batch(srcs, b.src, b.src_mask, b.src_len);
    pad_into_batch(tgts, b.tgt, b.tgt_mask, b.tgt_len);
    batches.push_back(std::move(b));
  }
  for (std::size_t i = batches.size(); i > 1; --i)
    std::swap(batches[i - 1], batches[shuffle_rng.below(i)]);
  return batches;
}

Batch train_view_with_data_dropout(const Batch& batch, const DropoutSpec& spec, RngStream& rng) {
  std::vector<std::vector<int>> srcs;
  srcs.reserve(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    // Interior tokens only; bos/eos are never dropped.
    std::vector<int> interior(batch.src[s].begin() + 1,
                              batch.src[s].begin() + batch.src_len[s] - 1);
    if (!interior.empty()) interior = apply_two_stage_data_dropout(interior, spec, rng);
    srcs.push_back(with_bos_eos(interior));
  }
  Batch out;
  pad_into_batch(srcs, out.src, out.src_mask, out.src_len);
  out.tgt = batch.tgt;
  out.tgt_mask = batch.tgt_mask;
  out.tgt_len = batch.tgt_len;
  return out;
}

}  // namespace unidrop
