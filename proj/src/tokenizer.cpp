#include "notebert/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "notebert/hashing.hpp"

namespace notebert {

namespace {
constexpr size_t kMaxWordChars = 100;  // longer words become a single UNK
}

const std::vector<std::string>& Vocab::special_tokens() {
  static const std::vector<std::string> specials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return specials;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& specials = special_tokens();
  if (tokens_.size() < specials.size())
    throw DataError("vocab too small to hold special tokens");
  for (size_t i = 0; i < specials.size(); ++i) {
    if (tokens_[i] != specials[i])
      throw DataError("vocab slot " + std::to_string(i) + " must be " + specials[i] +
                      ", found '" + tokens_[i] + "'");
  }
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw DataError("duplicate vocab token '" + tokens_[i] + "'");
  }
}

TokenId Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

std::string Vocab::fingerprint() const {
  uint64_t h = kFnvOffset;
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  return to_hex(h);
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocab file: " + path);
  for (const auto& t : tokens_) out << t << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::vector<std::string> tokens = read_lines(path);
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return Vocab(std::move(tokens));
}

std::vector<std::string> basic_tokenize(const std::string& text, bool lowercase) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&]() {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(lowercase && c < 0x80 ? static_cast<char>(std::tolower(c))
                                          : static_cast<char>(c));
    }
  }
  flush();
  return out;
}

Vocab train_vocab(const std::vector<std::string>& sentences, int target_size,
                  int min_freq, bool lowercase) {
  if (sentences.empty()) throw DataError("train_vocab: empty corpus");
  if (min_freq < 1) min_freq = 1;

  // Word frequencies under the same basic tokenization used at inference.
  std::map<std::string, int64_t> word_freq;
  for (const auto& s : sentences)
    for (auto& w : basic_tokenize(s, lowercase))
      if (w.size() <= kMaxWordChars) word_freq[w] += 1;
  if (word_freq.empty()) throw DataError("train_vocab: corpus has no tokens");

  // Character alphabet: a char seen at least min_freq times gets both its
  // word-initial piece and its "##" continuation piece.
  std::map<char, int64_t> char_freq;
  for (const auto& [w, f] : word_freq)
    for (char c : w) char_freq[c] += f;
  std::vector<std::string> alphabet;
  for (const auto& [c, f] : char_freq) {
    if (f >= min_freq) {
      alphabet.push_back(std::string(1, c));
      alphabet.push_back("##" + std::string(1, c));
    }
  }
  std::sort(alphabet.begin(), alphabet.end());

  const auto& specials = Vocab::special_tokens();
  if (static_cast<size_t>(target_size) < specials.size() + alphabet.size())
    throw ConfigError("train_vocab: target_size " + std::to_string(target_size) +
                      " cannot hold " + std::to_string(specials.size()) + " specials + " +
                      std::to_string(alphabet.size()) + " alphabet pieces");

  std::vector<std::string> vocab_tokens = specials;
  vocab_tokens.insert(vocab_tokens.end(), alphabet.begin(), alphabet.end());

  std::map<std::string, int64_t> have;
  for (const auto& t : vocab_tokens) have[t] = 1;

  // Each trainable word as its current unit sequence; words containing
  // below-threshold characters are excluded (they tokenize to UNK anyway).
  struct WordUnits {
    std::vector<std::string> units;
    int64_t freq;
  };
  std::vector<WordUnits> words;
  for (const auto& [w, f] : word_freq) {
    std::vector<std::string> units;
    bool ok = true;
    for (size_t i = 0; i < w.size(); ++i) {
      std::string u = (i == 0) ? std::string(1, w[i]) : "##" + std::string(1, w[i]);
      if (!have.count(u)) {
        ok = false;
        break;
      }
      units.push_back(std::move(u));
    }
    if (ok && !units.empty()) words.push_back({std::move(units), f});
  }

  // Iterative pair merging within words; most frequent pair first, ties broken
  // lexicographically so training is reproducible.
  while (vocab_tokens.size() < static_cast<size_t>(target_size)) {
    std::map<std::pair<std::string, std::string>, int64_t> pair_freq;
    for (const auto& wu : words)
      for (size_t i = 0; i + 1 < wu.units.size(); ++i)
        pair_freq[{wu.units[i], wu.units[i + 1]}] += wu.freq;

    std::pair<std::string, std::string> best;
    int64_t best_freq = 0;
    for (const auto& [p, f] : pair_freq) {
      if (f > best_freq) {
        best = p;
        best_freq = f;
      }
    }
    if (best_freq < std::max<int64_t>(min_freq, 2)) break;

    std::string merged = best.first + (best.second.rfind("##", 0) == 0
                                           ? best.second.substr(2)
                                           : best.second);
    if (have.count(merged)) break;  // nothing new to add
    vocab_tokens.push_back(merged);
    have[merged] = 1;

    for (auto& wu : words) {
      std::vector<std::string> next;
      next.reserve(wu.units.size());
      size_t i = 0;
      while (i < wu.units.size()) {
        if (i + 1 < wu.units.size() && wu.units[i] == best.first &&
            wu.units[i + 1] == best.second) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(wu.units[i]);
          ++i;
        }
      }
      wu.units = std::move(next);
    }
  }

  return Vocab(std::move(vocab_tokens));
}

TokenSeq tokenize(const std::string& text, const Vocab& vocab, bool lowercase) {
  TokenSeq out;
  for (const auto& word : basic_tokenize(text, lowercase)) {
    if (word.size() > kMaxWordChars) {
      out.pieces.push_back(vocab.piece(Vocab::kUnk));
      out.ids.push_back(Vocab::kUnk);
      continue;
    }
    std::vector<TokenId> word_ids;
    std::vector<std::string> word_pieces;
    size_t start = 0;
    bool bad = false;
    while (start < word.size()) {
      size_t end = word.size();
      TokenId found = -1;
      std::string found_piece;
      while (end > start) {
        std::string piece = word.substr(start, end - start);
        if (start > 0) piece = "##" + piece;
        TokenId id = vocab.id(piece);
        if (id >= 0) {
          found = id;
          found_piece = std::move(piece);
          break;
        }
        --end;
      }
      if (found < 0) {
        bad = true;
        break;
      }
      word_ids.push_back(found);
      word_pieces.push_back(std::move(found_piece));
      start = end;
    }
    if (bad) {
      out.pieces.push_back(vocab.piece(Vocab::kUnk));
      out.ids.push_back(Vocab::kUnk);
    } else {
      out.ids.insert(out.ids.end(), word_ids.begin(), word_ids.end());
      out.pieces.insert(out.pieces.end(), word_pieces.begin(), word_pieces.end());
    }
  }
  return out;
}

EncodedInput encode_for_model(const std::vector<TokenId>& seq_a,
                              const std::vector<TokenId>* seq_b, const Vocab& vocab,
                              int max_len) {
  (void)vocab;
  if (max_len < 3) throw ConfigError("encode_for_model: max_len must be >= 3");
  bool pair = seq_b != nullptr;
  size_t budget = static_cast<size_t>(max_len) - (pair ? 3 : 2);

  std::vector<TokenId> a = seq_a;
  std::vector<TokenId> b = pair ? *seq_b : std::vector<TokenId>{};
  // Trim the longer segment from its end, one token at a time (ties trim A).
  while (a.size() + b.size() > budget) {
    if (b.size() > a.size())
      b.pop_back();
    else
      a.pop_back();
  }

  EncodedInput enc;
  enc.ids.reserve(static_cast<size_t>(max_len));
  enc.ids.push_back(Vocab::kCls);
  enc.ids.insert(enc.ids.end(), a.begin(), a.end());
  enc.ids.push_back(Vocab::kSep);
  size_t a_len = enc.ids.size();
  if (pair) {
    enc.ids.insert(enc.ids.end(), b.begin(), b.end());
    enc.ids.push_back(Vocab::kSep);
  }
  size_t real = enc.ids.size();
  enc.segment_ids.assign(real, 0);
  for (size_t i = a_len; i < real; ++i) enc.segment_ids[i] = 1;
  enc.attention_mask.assign(real, 1);

  enc.ids.resize(static_cast<size_t>(max_len), Vocab::kPad);
  enc.segment_ids.resize(static_cast<size_t>(max_len), 0);
  enc.attention_mask.resize(static_cast<size_t>(max_len), 0);
  return enc;
}

std::string detokenize(const std::vector<std::string>& pieces) {
  std::string out;
  for (const auto& p : pieces) {
    if (p.rfind("##", 0) == 0) {
      out += p.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += p;
    }
  }
  return out;
}

}  // namespace notebert
