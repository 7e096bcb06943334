#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "notebert/pretrain_data.hpp"

using namespace notebert;

namespace {

Vocab tiny_vocab() {
  std::vector<std::string> tokens = Vocab::special_tokens();
  for (char c = 'a'; c <= 'z'; ++c) tokens.push_back(std::string(1, c));
  return Vocab(std::move(tokens));
}

std::vector<Document> synthetic_documents(const Vocab& vocab, int n_docs, int sentences_per_doc,
                                          uint64_t seed) {
  Rng rng(seed);
  std::vector<Document> docs;
  int lo = Vocab::kNumSpecials;
  int hi = static_cast<int>(vocab.size()) - 1;
  for (int d = 0; d < n_docs; ++d) {
    Document doc;
    for (int s = 0; s < sentences_per_doc; ++s) {
      std::vector<TokenId> sent;
      int len = rng.next_int(3, 9);
      for (int t = 0; t < len; ++t) sent.push_back(rng.next_int(lo, hi));
      doc.sentences.push_back(std::move(sent));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

PackedSequence simple_packed(int real_tokens) {
  PackedSequence p;
  p.ids.push_back(Vocab::kCls);
  for (int i = 0; i < real_tokens - 3; ++i)
    p.ids.push_back(Vocab::kNumSpecials + (i % 20));
  p.ids.push_back(Vocab::kSep);
  p.ids.push_back(Vocab::kSep);
  p.segment_ids.assign(p.ids.size(), 0);
  p.is_next = true;
  return p;
}

}  // namespace

TEST_CASE("prediction count formula") {
  PretrainConfig cfg;
  CHECK(num_predictions_for_length(128, cfg) == 19);
  CHECK(num_predictions_for_length(10, cfg) == 2);
  CHECK(num_predictions_for_length(4, cfg) == 1);
}

TEST_CASE("prediction count property against an independent oracle") {
  PretrainConfig cfg;
  for (int len = 3; len <= 512; ++len) {
    // Oracle: independent restatement of the rule.
    long expect = std::lround(0.15 * len);
    if (expect < 1) expect = 1;
    if (expect > 20) expect = 20;
    CHECK(num_predictions_for_length(len, cfg) == static_cast<int>(expect));
  }
}

TEST_CASE("mask_instance invariants") {
  Vocab vocab = tiny_vocab();
  PretrainConfig cfg;
  cfg.max_seq_len = 40;
  Rng rng(5);
  for (int round = 0; round < 200; ++round) {
    int real = rng.next_int(5, 40);
    PackedSequence packed = simple_packed(real);
    MLMInstance inst = mask_instance(packed, cfg, vocab, rng);

    CHECK(inst.ids.size() == 40);
    CHECK(inst.masked_positions.size() == inst.masked_labels.size());
    CHECK(static_cast<int>(inst.masked_positions.size()) ==
          std::min(num_predictions_for_length(real, cfg), real - 3));

    int32_t prev = -1;
    for (size_t i = 0; i < inst.masked_positions.size(); ++i) {
      int32_t p = inst.masked_positions[i];
      CHECK(p > prev);  // strictly increasing
      prev = p;
      CHECK(packed.ids[static_cast<size_t>(p)] == inst.masked_labels[i]);
      CHECK(packed.ids[static_cast<size_t>(p)] != Vocab::kCls);
      CHECK(packed.ids[static_cast<size_t>(p)] != Vocab::kSep);
      CHECK(p < real);
    }
    // CLS first, PAD only as suffix.
    CHECK(inst.ids[0] == Vocab::kCls);
    for (int i = 0; i < 40; ++i) {
      if (i < real) CHECK(inst.ids[static_cast<size_t>(i)] != Vocab::kPad);
      else CHECK(inst.ids[static_cast<size_t>(i)] == Vocab::kPad);
    }
  }
}

TEST_CASE("mask_instance replacement mix approximates 80/10/10") {
  Vocab vocab = tiny_vocab();
  PretrainConfig cfg;
  cfg.max_seq_len = 128;
  Rng rng(7);
  long masked = 0, unchanged = 0, random_tok = 0, total = 0;
  for (int round = 0; round < 2000; ++round) {
    PackedSequence packed = simple_packed(128);
    MLMInstance inst = mask_instance(packed, cfg, vocab, rng);
    for (size_t i = 0; i < inst.masked_positions.size(); ++i) {
      ++total;
      TokenId now = inst.ids[static_cast<size_t>(inst.masked_positions[i])];
      if (now == Vocab::kMask) ++masked;
      else if (now == inst.masked_labels[i]) ++unchanged;
      else ++random_tok;
    }
  }
  double m = double(masked) / double(total);
  double u = double(unchanged) / double(total);
  double r = double(random_tok) / double(total);
  CHECK(m > 0.77);
  CHECK(m < 0.83);
  CHECK(u > 0.08);
  CHECK(r > 0.06);  // random draws can coincide with the original token
}

TEST_CASE("mask_instance with no maskable positions") {
  Vocab vocab = tiny_vocab();
  PretrainConfig cfg;
  cfg.max_seq_len = 8;
  PackedSequence p;
  p.ids = {Vocab::kCls, Vocab::kSep};
  p.segment_ids = {0, 0};
  Rng rng(1);
  CHECK_THROWS_AS(mask_instance(p, cfg, vocab, rng), DataError);
}

TEST_CASE("pack_segments requires two documents for NSP") {
  Vocab vocab = tiny_vocab();
  PretrainConfig cfg;
  auto docs = synthetic_documents(vocab, 1, 5, 3);
  Rng rng(1);
  CHECK_THROWS_AS(pack_segments(docs, cfg, rng), ConfigError);
}

TEST_CASE("pack_segments without NSP emits single-segment instances") {
  Vocab vocab = tiny_vocab();
  PretrainConfig cfg;
  cfg.nsp_enabled = false;
  cfg.max_seq_len = 32;
  auto docs = synthetic_documents(vocab, 3, 6, 3);
  Rng rng(1);
  auto packed = pack_segments(docs, cfg, rng);
  CHECK(!packed.empty());
  for (const auto& p : packed) {
    CHECK(p.is_next);
    for (int32_t s : p.segment_ids) CHECK(s == 0);
    CHECK(p.ids.front() == Vocab::kCls);
    CHECK(p.ids.back() == Vocab::kSep);
    CHECK(p.ids.size() <= 32);
  }
}

TEST_CASE("pack_segments NSP layout and determinism") {
  Vocab vocab = tiny_vocab();
  PretrainConfig cfg;
  cfg.max_seq_len = 32;
  auto docs = synthetic_documents(vocab, 6, 8, 9);

  Rng rng1(42), rng2(42);
  auto packed1 = pack_segments(docs, cfg, rng1);
  auto packed2 = pack_segments(docs, cfg, rng2);
  REQUIRE(packed1.size() == packed2.size());
  size_t next_count = 0;
  for (size_t i = 0; i < packed1.size(); ++i) {
    CHECK(packed1[i].ids == packed2[i].ids);
    CHECK(packed1[i].is_next == packed2[i].is_next);
    const auto& p = packed1[i];
    CHECK(p.ids.front() == Vocab::kCls);
    CHECK(p.ids.back() == Vocab::kSep);
    CHECK(std::count(p.ids.begin(), p.ids.end(), Vocab::kSep) == 2);
    CHECK(p.ids.size() <= 32);
    // Segment ids: zeros then ones, flipping right after the first SEP.
    size_t first_sep = static_cast<size_t>(
        std::find(p.ids.begin(), p.ids.end(), Vocab::kSep) - p.ids.begin());
    for (size_t j = 0; j < p.ids.size(); ++j)
      CHECK(p.segment_ids[j] == (j <= first_sep ? 0 : 1));
    if (p.is_next) ++next_count;
  }
  CHECK(next_count > 0);
  CHECK(next_count < packed1.size());
}

TEST_CASE("create_instances multiplies by dup factor with fresh masks") {
  Vocab vocab = tiny_vocab();
  PretrainConfig cfg;
  cfg.max_seq_len = 32;
  cfg.dup_factor = 5;
  cfg.seed = 11;
  auto docs = synthetic_documents(vocab, 4, 6, 21);

  Rng probe_rng(cfg.seed);
  size_t packed_count = pack_segments(docs, cfg, probe_rng).size();

  auto instances = create_instances(docs, cfg, vocab);
  CHECK(instances.size() == packed_count * 5);

  cfg.dup_factor = 1;
  auto single = create_instances(docs, cfg, vocab);
  CHECK(single.size() == packed_count);

  // Duplicates share token content (pre-mask) but differ in masked positions.
  cfg.dup_factor = 5;
  size_t differing = 0;
  for (size_t i = 0; i < packed_count; ++i) {
    const auto& d0 = instances[i];
    const auto& d1 = instances[i + packed_count];
    CHECK(d0.is_next == d1.is_next);
    if (d0.masked_positions != d1.masked_positions) ++differing;
  }
  CHECK(differing > packed_count / 2);
}

TEST_CASE("create_instances is deterministic") {
  Vocab vocab = tiny_vocab();
  PretrainConfig cfg;
  cfg.max_seq_len = 24;
  cfg.dup_factor = 2;
  cfg.seed = 77;
  auto docs = synthetic_documents(vocab, 3, 5, 5);
  auto a = create_instances(docs, cfg, vocab);
  auto b = create_instances(docs, cfg, vocab);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].ids == b[i].ids);
    CHECK(a[i].masked_positions == b[i].masked_positions);
    CHECK(a[i].masked_labels == b[i].masked_labels);
  }
}

TEST_CASE("build_documents maps sentences and drops empty notes") {
  Vocab vocab = tiny_vocab();
  NoteCollection c;
  c.notes.push_back({"one", "Nursing", "ab cd. ef gh."});
  c.notes.push_back({"two", "Nursing", "   \n  "});
  auto result = build_documents(c, vocab);
  CHECK(result.documents.size() == 1);
  CHECK(result.dropped_notes == 1);
  CHECK(result.documents[0].sentences.size() == 2);
}

TEST_CASE("instance binary serialization round trip") {
  Vocab vocab = tiny_vocab();
  PretrainConfig cfg;
  cfg.max_seq_len = 24;
  cfg.dup_factor = 2;
  auto docs = synthetic_documents(vocab, 3, 5, 31);
  auto instances = create_instances(docs, cfg, vocab);

  auto path = (std::filesystem::temp_directory_path() / "nb_instances.bin").string();
  write_instances_binary(instances, cfg.max_seq_len, path);
  int msl = 0;
  auto loaded = read_instances_binary(path, &msl);
  CHECK(msl == cfg.max_seq_len);
  REQUIRE(loaded.size() == instances.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].ids == instances[i].ids);
    CHECK(loaded[i].segment_ids == instances[i].segment_ids);
    CHECK(loaded[i].attention_mask == instances[i].attention_mask);
    CHECK(loaded[i].masked_positions == instances[i].masked_positions);
    CHECK(loaded[i].masked_labels == instances[i].masked_labels);
    CHECK(loaded[i].is_next == instances[i].is_next);
  }
}

TEST_CASE("instance jsonl serialization round trip") {
  Vocab vocab = tiny_vocab();
  PretrainConfig cfg;
  cfg.max_seq_len = 16;
  cfg.dup_factor = 1;
  auto docs = synthetic_documents(vocab, 2, 4, 8);
  auto instances = create_instances(docs, cfg, vocab);

  auto path = (std::filesystem::temp_directory_path() / "nb_instances.jsonl").string();
  write_instances_jsonl(instances, path);
  auto loaded = read_instances_jsonl(path);
  REQUIRE(loaded.size() == instances.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].ids == instances[i].ids);
    CHECK(loaded[i].attention_mask == instances[i].attention_mask);
    CHECK(loaded[i].is_next == instances[i].is_next);
  }
}

TEST_CASE("config validation") {
  PretrainConfig cfg;
  cfg.mlm_prob = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PretrainConfig{};
  cfg.dup_factor = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PretrainConfig{};
  cfg.max_predictions = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
