#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "notebert/corpus.hpp"
#include "notebert/rng.hpp"
#include "notebert/tokenizer.hpp"

namespace notebert {

struct PretrainConfig {
  int max_seq_len = 128;
  double mlm_prob = 0.15;
  int max_predictions = 20;
  int dup_factor = 5;
  bool nsp_enabled = true;
  double short_seq_prob = 0.1;
  uint64_t seed = 1;

  void validate() const;
};

/// One packed, masked pretraining example. Arrays are padded to max_seq_len;
/// masked_positions are strictly increasing and never point at specials/PAD.
struct MLMInstance {
  std::vector<TokenId> ids;
  std::vector<int32_t> segment_ids;
  std::vector<int8_t> attention_mask;
  std::vector<int32_t> masked_positions;
  std::vector<TokenId> masked_labels;
  bool is_next = true;
};

/// One note as an ordered list of tokenized sentences.
struct Document {
  std::vector<std::vector<TokenId>> sentences;
};

struct PackedSequence {
  std::vector<TokenId> ids;          // [CLS] A [SEP] (B [SEP]) without padding
  std::vector<int32_t> segment_ids;  // parallel
  bool is_next = true;
};

struct BuildDocumentsResult {
  std::vector<Document> documents;
  size_t dropped_notes = 0;  // notes with no non-empty sentences
};

BuildDocumentsResult build_documents(const NoteCollection& collection, const Vocab& vocab,
                                     bool lowercase = false);

std::vector<PackedSequence> pack_segments(const std::vector<Document>& documents,
                                          const PretrainConfig& config, Rng& rng);

// Mask count rule shared with the acceptance oracle:
// min(max_predictions, max(1, round(mlm_prob * len))).
int num_predictions_for_length(int num_tokens, const PretrainConfig& config);

MLMInstance mask_instance(const PackedSequence& packed, const PretrainConfig& config,
                          const Vocab& vocab, Rng& rng);

// Derived seed for duplicate pass d (documented for reproducibility).
inline uint64_t seed_for_dup(uint64_t seed, int d) {
  return seed * 1000003ull + static_cast<uint64_t>(d);
}

std::vector<MLMInstance> create_instances(const std::vector<Document>& documents,
                                          const PretrainConfig& config, const Vocab& vocab);

// Binary format: magic "NBMI", u32 version, u32 max_seq_len, u64 count, then
// length-prefixed records. JSONL alternative mirrors the same fields.
void write_instances_binary(const std::vector<MLMInstance>& instances, int max_seq_len,
                            const std::string& path);
std::vector<MLMInstance> read_instances_binary(const std::string& path, int* max_seq_len_out);

void write_instances_jsonl(const std::vector<MLMInstance>& instances, const std::string& path);
std::vector<MLMInstance> read_instances_jsonl(const std::string& path);

}  // namespace notebert
