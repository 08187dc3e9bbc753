#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "unidrop/data.hpp"

using namespace unidrop;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& content) {
    path = std::string("unidrop_test_") + std::to_string(rand()) + ".tsv";
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("vocabulary reserved ids and unk fallback") {
  Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.id("<pad>") == Vocabulary::pad_id);
  CHECK(v.id("<bos>") == Vocabulary::bos_id);
  CHECK(v.id("<eos>") == Vocabulary::eos_id);
  CHECK(v.id("missing") == Vocabulary::unk_id);
  const int id = v.add("hello");
  CHECK(id == 4);
  CHECK(v.add("hello") == 4);
  CHECK(v.token(4) == "hello");
  CHECK_THROWS_AS(v.token(99), DataError);
}

TEST_CASE("tokenize/detokenize round trip on whitespace-normalized text") {
  Vocabulary v;
  v.add("the");
  v.add("cat");
  v.add("sat");
  const std::string s = "the cat sat";
  const auto toks = split_tokens(s);
  CHECK(join_tokens(v.detokenize(v.tokenize(toks))) == s);
  // Extra whitespace normalizes away.
  CHECK(join_tokens(split_tokens("  the   cat  ")) == "the cat");
}

TEST_CASE("copy, reverse and sort tasks") {
  TaskSpec spec;
  spec.pairs = 20;
  spec.vocab_size = 20;
  spec.min_len = 3;
  spec.max_len = 6;
  spec.seed = 5;

  spec.kind = TaskKind::copy;
  auto copy = generate_task(spec);
  for (const auto& p : copy.train.pairs) CHECK(p.src == p.tgt);

  spec.kind = TaskKind::reverse;
  auto rev = generate_task(spec);
  for (const auto& p : rev.train.pairs) {
    std::vector<std::string> r(p.src.rbegin(), p.src.rend());
    CHECK(p.tgt == r);
  }

  spec.kind = TaskKind::sort;
  auto sorted = generate_task(spec);
  for (const auto& p : sorted.train.pairs) {
    CHECK(std::is_sorted(p.tgt.begin(), p.tgt.end(), [](const auto& a, const auto& b) {
      return std::stoi(a.substr(1)) < std::stoi(b.substr(1));
    }));
    CHECK(p.tgt.size() == p.src.size());
  }
}

TEST_CASE("noisy lexicon is a bijection plus noise") {
  TaskSpec spec;
  spec.kind = TaskKind::noisy_lexicon;
  spec.pairs = 200;
  spec.vocab_size = 30;
  spec.noise_rate = 0.0;
  spec.seed = 11;
  auto clean = generate_task(spec);
  // Noise-free: the per-symbol mapping is a consistent bijection.
  std::map<std::string, std::string> mapping;
  std::set<std::string> images;
  for (const auto& p : clean.train.pairs) {
    REQUIRE(p.src.size() == p.tgt.size());
    for (std::size_t i = 0; i < p.src.size(); ++i) {
      auto it = mapping.find(p.src[i]);
      if (it == mapping.end()) {
        mapping[p.src[i]] = p.tgt[i];
        images.insert(p.tgt[i]);
      } else {
        CHECK(it->second == p.tgt[i]);
      }
    }
  }
  CHECK(images.size() == mapping.size());

  spec.noise_rate = 0.3;
  auto noisy = generate_task(spec);
  long mismatches = 0, total = 0;
  // Against the noise-free mapping, roughly noise_rate of tokens deviate
  // (a noise draw can also hit the correct symbol).
  for (const auto& p : noisy.train.pairs)
    for (std::size_t i = 0; i < p.src.size(); ++i) {
      if (mapping.count(p.src[i])) {
        ++total;
        if (p.tgt[i] != mapping[p.src[i]]) ++mismatches;
      }
    }
  const double rate = static_cast<double>(mismatches) / total;
  CHECK(rate > 0.15);
  CHECK(rate < 0.4);
}

TEST_CASE("task generation is deterministic and splits are disjoint") {
  TaskSpec spec;
  spec.kind = TaskKind::copy;
  spec.pairs = 100;
  spec.vocab_size = 50;
  spec.min_len = 5;
  spec.max_len = 15;
  spec.seed = 7;
  auto a = generate_task(spec);
  auto b = generate_task(spec);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train.pairs[i].src == b.train.pairs[i].src);
    CHECK(a.train.pairs[i].tgt == b.train.pairs[i].tgt);
  }

  auto key = [](const SentencePair& p) { return join_tokens(p.src); };
  std::set<std::string> train_set, dev_set, test_set;
  for (const auto& p : a.train.pairs) train_set.insert(key(p));
  for (const auto& p : a.dev.pairs) dev_set.insert(key(p));
  for (const auto& p : a.test.pairs) test_set.insert(key(p));
  for (const auto& k : dev_set) CHECK(train_set.count(k) == 0);
  for (const auto& k : test_set) {
    CHECK(train_set.count(k) == 0);
    CHECK(dev_set.count(k) == 0);
  }

  // Different seeds share almost nothing.
  spec.seed = 8;
  auto c = generate_task(spec);
  std::set<std::string> c_set;
  for (const auto& p : c.train.pairs) c_set.insert(key(p));
  std::size_t overlap = 0;
  for (const auto& k : c_set) overlap += train_set.count(k);
  const double jaccard = static_cast<double>(overlap) /
                         static_cast<double>(train_set.size() + c_set.size() - overlap);
  CHECK(jaccard < 0.05);
}

TEST_CASE("tsv load basics") {
  TempFile f("hello world\tbonjour monde\n");
  Corpus c = load_tsv(f.path, 16);
  REQUIRE(c.size() == 1);
  CHECK(c.pairs[0].src == std::vector<std::string>{"hello", "world"});
  CHECK(c.pairs[0].tgt == std::vector<std::string>{"bonjour", "monde"});
}

TEST_CASE("tsv strict mode: missing tab is fatal with line number") {
  std::string content;
  for (int i = 0; i < 60; ++i) content += "a b\tc d\n";
  content += "no tab here\n";
  for (int i = 0; i < 39; ++i) content += "a b\tc d\n";
  TempFile f(content);
  CHECK_THROWS_WITH_AS(load_tsv(f.path, 16), doctest::Contains("line 61"), DataError);
}

TEST_CASE("tsv: empty file and overlong lines") {
  TempFile empty("");
  CHECK(load_tsv(empty.path, 16).empty());

  TempFile f("a b c d e f\tg\nx\ty\n");
  std::size_t dropped = 0;
  Corpus c = load_tsv(f.path, 4, &dropped);
  CHECK(dropped == 1);
  REQUIRE(c.size() == 1);
  CHECK(c.pairs[0].src == std::vector<std::string>{"x"});
}

TEST_CASE("tsv round trip") {
  Corpus c;
  c.pairs.push_back({{"a", "b"}, {"c"}});
  c.pairs.push_back({{"d"}, {"e", "f"}});
  TempFile f("");
  save_tsv(c, f.path);
  Corpus back = load_tsv(f.path, 16);
  REQUIRE(back.size() == 2);
  CHECK(back.pairs[0].src == c.pairs[0].src);
  CHECK(back.pairs[1].tgt == c.pairs[1].tgt);
}

TEST_CASE("batch padding, masks and determinism") {
  Corpus c;
  c.pairs.push_back({{"a", "b", "c"}, {"a", "b", "c"}});
  c.pairs.push_back({{"a", "b", "c", "d", "e"}, {"a"}});
  Vocabulary vocab = build_vocabulary(c);
  RngStream shuffle(1, "data-shuffle");
  auto batches = make_batches(c, vocab, 2, shuffle);
  REQUIRE(batches.size() == 1);
  const Batch& b = batches[0];
  REQUIRE(b.size() == 2);
  // Width = longest sequence + bos/eos.
  CHECK(b.src[0].size() == 7);
  CHECK(b.src[1].size() == 7);
  for (std::size_t s = 0; s < b.size(); ++s) {
    long mask_sum = 0;
    for (std::size_t i = 0; i < b.src[s].size(); ++i) {
      CHECK((b.src_mask[s][i] == 1) == (b.src[s][i] != Vocabulary::pad_id));
      mask_sum += b.src_mask[s][i];
    }
    CHECK(mask_sum == b.src_len[s]);
    CHECK(b.src[s][0] == Vocabulary::bos_id);
    CHECK(b.src[s][b.src_len[s] - 1] == Vocabulary::eos_id);
  }
  // Same shuffle seed -> same order.
  RngStream s1(5, "data-shuffle"), s2(5, "data-shuffle");
  Corpus big;
  for (int i = 0; i < 40; ++i)
    big.pairs.push_back({{"t" + std::to_string(i)}, {"t" + std::to_string(i)}});
  Vocabulary bv = build_vocabulary(big);
  auto b1 = make_batches(big, bv, 8, s1);
  auto b2 = make_batches(big, bv, 8, s2);
  REQUIRE(b1.size() == b2.size());
  for (std::size_t i = 0; i < b1.size(); ++i) CHECK(b1[i].src == b2[i].src);
}

TEST_CASE("unknown tokens map to unk at batch time") {
  Corpus train;
  train.pairs.push_back({{"known"}, {"known"}});
  Vocabulary vocab = build_vocabulary(train);
  Corpus dev;
  dev.pairs.push_back({{"novel"}, {"known"}});
  RngStream shuffle(1, "data-shuffle");
  auto batches = make_batches(dev, vocab, 1, shuffle);
  CHECK(batches[0].src[0][1] == Vocabulary::unk_id);
}

TEST_CASE("data dropout view: keep prob 1 is identity") {
  Corpus c;
  c.pairs.push_back({{"a", "b", "c", "d"}, {"a"}});
  Vocabulary vocab = build_vocabulary(c);
  RngStream shuffle(1, "data-shuffle"), data(1, "data-masks");
  auto batches = make_batches(c, vocab, 1, shuffle);
  DropoutSpec spec;
  spec.dd_keep_prob = 1.0;
  Batch out = train_view_with_data_dropout(batches[0], spec, data);
  CHECK(out.src == batches[0].src);
  CHECK(out.tgt == batches[0].tgt);
}

TEST_CASE("data dropout view: surviving length and invariants") {
  // Length-10 interiors, p_k = 0, p = 0.2: mean surviving interior 8 +- 0.1.
  Corpus c;
  std::vector<std::string> toks;
  for (int i = 0; i < 10; ++i) toks.push_back("t" + std::to_string(i));
  c.pairs.push_back({toks, {"x"}});
  Vocabulary vocab = build_vocabulary(c);
  RngStream shuffle(1, "data-shuffle"), data(11, "data-masks");
  auto batches = make_batches(c, vocab, 1, shuffle);
  DropoutSpec spec;
  spec.dd_keep_prob = 0.0;
  spec.dd_token_prob = 0.2;

  double total_interior = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    Batch out = train_view_with_data_dropout(batches[0], spec, data);
    // bos/eos survive; targets untouched; masks consistent.
    CHECK(out.src[0][0] == Vocabulary::bos_id);
    CHECK(out.src[0][out.src_len[0] - 1] == Vocabulary::eos_id);
    CHECK(out.tgt == batches[0].tgt);
    for (std::size_t j = 0; j < out.src[0].size(); ++j)
      CHECK((out.src_mask[0][j] == 1) == (out.src[0][j] != Vocabulary::pad_id));
    CHECK(out.src_len[0] >= 3);  // bos + >= 1 token + eos
    total_interior += out.src_len[0] - 2;
  }
  CHECK(total_interior / n == doctest::Approx(8.0).epsilon(0.0125));
}

TEST_CASE("vocabulary build order is deterministic") {
  Corpus c;
  c.pairs.push_back({{"b", "a", "b"}, {"c"}});
  Vocabulary v = build_vocabulary(c);
  // "b" has frequency 2, then ties broken lexicographically.
  CHECK(v.id("b") == 4);
  CHECK(v.id("a") == 5);
  CHECK(v.id("c") == 6);
}
