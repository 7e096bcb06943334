#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "notebert/rng.hpp"
#include "notebert/tokenizer.hpp"

using namespace notebert;

namespace {

Vocab manual_vocab(std::vector<std::string> extra) {
  std::vector<std::string> tokens = Vocab::special_tokens();
  tokens.insert(tokens.end(), extra.begin(), extra.end());
  return Vocab(std::move(tokens));
}

}  // namespace

TEST_CASE("train_vocab learns merges from a tiny corpus") {
  std::vector<std::string> corpus;
  for (int i = 0; i < 10; ++i) {
    corpus.push_back("aa");
    corpus.push_back("ab");
  }
  Vocab v = train_vocab(corpus, 10, 1);
  CHECK(v.size() <= 10);
  CHECK(v.contains("a"));
  CHECK(v.contains("##a"));
  CHECK(v.contains("##b"));
  // The (a, ##a) pair wins the first merge on the lexicographic tie-break.
  CHECK(v.contains("aa"));
}

TEST_CASE("train_vocab rejects target_size below the alphabet") {
  std::vector<std::string> corpus = {"abcdefgh"};
  CHECK_THROWS_AS(train_vocab(corpus, 6, 1), ConfigError);
}

TEST_CASE("train_vocab rejects empty corpus") {
  CHECK_THROWS_AS(train_vocab({}, 100, 1), DataError);
}

TEST_CASE("train_vocab is deterministic") {
  std::vector<std::string> corpus = {"the patient is stable", "the patient improved",
                                     "patient was admitted", "stable overnight"};
  Vocab a = train_vocab(corpus, 60, 1);
  Vocab b = train_vocab(corpus, 60, 1);
  CHECK(a.tokens() == b.tokens());
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("tokenize whole-word hit") {
  Vocab v = manual_vocab({"hello", "world"});
  auto seq = tokenize("hello world", v);
  REQUIRE(seq.size() == 2);
  CHECK(seq.pieces[0] == "hello");
  CHECK(seq.pieces[1] == "world");
}

TEST_CASE("tokenize greedy longest match") {
  Vocab v = manual_vocab({"un", "##want", "##ed", "##w"});
  auto seq = tokenize("unwanted", v);
  REQUIRE(seq.pieces == std::vector<std::string>{"un", "##want", "##ed"});
}

TEST_CASE("tokenize unmatched remainder becomes UNK") {
  Vocab v = manual_vocab({"un", "##want"});
  auto seq = tokenize("unwanted", v);  // "##ed" missing
  REQUIRE(seq.size() == 1);
  CHECK(seq.ids[0] == Vocab::kUnk);

  auto seq2 = tokenize("xyz", v);
  REQUIRE(seq2.size() == 1);
  CHECK(seq2.ids[0] == Vocab::kUnk);
}

TEST_CASE("tokenize splits punctuation and lowercases on request") {
  Vocab v = manual_vocab({"stable", ",", "improving"});
  auto seq = tokenize("Stable, improving", v, /*lowercase=*/true);
  REQUIRE(seq.pieces == std::vector<std::string>{"stable", ",", "improving"});
}

TEST_CASE("tokenize output never contains CLS/SEP/MASK") {
  std::vector<std::string> corpus = {"alpha beta gamma", "delta epsilon"};
  Vocab v = train_vocab(corpus, 64, 1);
  for (const auto& s : corpus) {
    auto seq = tokenize(s, v);
    for (TokenId id : seq.ids) {
      CHECK(id != Vocab::kCls);
      CHECK(id != Vocab::kSep);
      CHECK(id != Vocab::kMask);
    }
  }
}

TEST_CASE("detokenize inverts tokenize for covered text") {
  std::vector<std::string> corpus = {"the patient is stable",  "patient was admitted",
                                     "no acute distress noted", "monitor fluids overnight"};
  Vocab v = train_vocab(corpus, 120, 1);
  for (const auto& s : corpus) {
    auto seq = tokenize(s, v);
    for (TokenId id : seq.ids) REQUIRE(id != Vocab::kUnk);
    CHECK(detokenize(seq.pieces) == s);
  }
}

TEST_CASE("detokenize basics") {
  CHECK(detokenize({"un", "##want", "##ed"}) == "unwanted");
  CHECK(detokenize({"hello", "world"}) == "hello world");
  CHECK(detokenize({}) == "");
}

TEST_CASE("encode_for_model single sequence layout") {
  Vocab v = manual_vocab({"a", "b"});
  std::vector<TokenId> a = {v.id("a"), v.id("b")};
  auto enc = encode_for_model(a, nullptr, v, 8);
  REQUIRE(enc.ids.size() == 8);
  CHECK(enc.ids[0] == Vocab::kCls);
  CHECK(enc.ids[3] == Vocab::kSep);
  for (size_t i = 4; i < 8; ++i) CHECK(enc.ids[i] == Vocab::kPad);
  for (int32_t s : enc.segment_ids) CHECK(s == 0);
  int mask_sum = std::accumulate(enc.attention_mask.begin(), enc.attention_mask.end(), 0);
  CHECK(mask_sum == 4);
}

TEST_CASE("encode_for_model pair layout") {
  Vocab v = manual_vocab({"a", "b"});
  std::vector<TokenId> a(3, v.id("a")), b(3, v.id("b"));
  auto enc = encode_for_model(a, &b, v, 9);
  REQUIRE(enc.ids.size() == 9);
  CHECK(enc.ids[0] == Vocab::kCls);
  CHECK(enc.ids[4] == Vocab::kSep);
  CHECK(enc.ids[8] == Vocab::kSep);
  std::vector<int32_t> want_seg = {0, 0, 0, 0, 0, 1, 1, 1, 1};
  CHECK(enc.segment_ids == want_seg);
}

TEST_CASE("encode_for_model trims the longer segment first") {
  Vocab v = manual_vocab({"a", "b"});
  std::vector<TokenId> a(10, v.id("a")), b(2, v.id("b"));
  auto enc = encode_for_model(a, &b, v, 9);
  // Budget 6: A trimmed to 4, B kept at 2.
  int a_count = 0, b_count = 0;
  for (size_t i = 0; i < enc.ids.size(); ++i) {
    if (enc.ids[i] == v.id("a")) ++a_count;
    if (enc.ids[i] == v.id("b")) ++b_count;
  }
  CHECK(a_count == 4);
  CHECK(b_count == 2);
}

TEST_CASE("encode_for_model requires room for specials") {
  Vocab v = manual_vocab({"a"});
  std::vector<TokenId> a = {v.id("a")};
  CHECK_THROWS_AS(encode_for_model(a, nullptr, v, 2), ConfigError);
}

TEST_CASE("attention mask counts non-PAD ids") {
  Vocab v = manual_vocab({"a", "b", "c"});
  Rng rng(3);
  for (int round = 0; round < 100; ++round) {
    std::vector<TokenId> a(static_cast<size_t>(rng.next_int(1, 12)), v.id("a"));
    std::vector<TokenId> b(static_cast<size_t>(rng.next_int(1, 12)), v.id("b"));
    bool pair = rng.next_bool(0.5);
    auto enc = encode_for_model(a, pair ? &b : nullptr, v, 16);
    int mask_sum = std::accumulate(enc.attention_mask.begin(), enc.attention_mask.end(), 0);
    int non_pad = 0;
    for (TokenId id : enc.ids)
      if (id != Vocab::kPad) ++non_pad;
    CHECK(mask_sum == non_pad);
  }
}

TEST_CASE("vocab save/load round trip preserves ids and fingerprint") {
  std::vector<std::string> corpus = {"alpha beta", "beta gamma"};
  Vocab v = train_vocab(corpus, 40, 1);
  auto path = (std::filesystem::temp_directory_path() / "nb_vocab.txt").string();
  v.save(path);
  Vocab loaded = Vocab::load(path);
  CHECK(loaded.tokens() == v.tokens());
  CHECK(loaded.fingerprint() == v.fingerprint());
}

TEST_CASE("vocab rejects duplicates and bad specials") {
  std::vector<std::string> bad = Vocab::special_tokens();
  bad.push_back("tok");
  bad.push_back("tok");
  CHECK_THROWS_AS(Vocab(std::move(bad)), DataError);

  std::vector<std::string> wrong = {"[PAD]", "[CLS]", "[UNK]", "[SEP]", "[MASK]"};
  CHECK_THROWS_AS(Vocab(std::move(wrong)), DataError);
}
