#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "notebert/common.hpp"

namespace notebert {

using TokenId = int32_t;

/// WordPiece vocabulary. Ids are dense in [0, size); the five special tokens
/// occupy the first five slots. Continuation pieces carry the "##" prefix.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kMask = 4;
  static constexpr int kNumSpecials = 5;

  static const std::vector<std::string>& special_tokens();

  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  TokenId id(const std::string& token) const;  // -1 when absent
  const std::string& piece(TokenId id) const { return tokens_.at(static_cast<size_t>(id)); }
  size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool contains(const std::string& token) const { return id(token) >= 0; }

  /// FNV-1a over the token list; used as the checkpoint compatibility guard.
  std::string fingerprint() const;

  void save(const std::string& path) const;  // one token per line, line = id
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenSeq {
  std::vector<TokenId> ids;
  std::vector<std::string> pieces;

  size_t size() const { return ids.size(); }
};

struct EncodedInput {
  std::vector<TokenId> ids;
  std::vector<int32_t> segment_ids;
  std::vector<int8_t> attention_mask;
};

// Whitespace split with punctuation broken out into single-char tokens.
std::vector<std::string> basic_tokenize(const std::string& text, bool lowercase = false);

Vocab train_vocab(const std::vector<std::string>& sentences, int target_size,
                  int min_freq, bool lowercase = false);

TokenSeq tokenize(const std::string& text, const Vocab& vocab, bool lowercase = false);

EncodedInput encode_for_model(const std::vector<TokenId>& seq_a,
                              const std::vector<TokenId>* seq_b, const Vocab& vocab,
                              int max_len);

std::string detokenize(const std::vector<std::string>& pieces);

}  // namespace notebert
