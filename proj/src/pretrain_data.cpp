#include "notebert/pretrain_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace notebert {

void PretrainConfig::validate() const {
  if (!(mlm_prob > 0.0 && mlm_prob < 1.0))
    throw ConfigError("pretrain: mlm_prob must be in (0,1)");
  if (max_predictions < 1) throw ConfigError("pretrain: max_predictions must be >= 1");
  if (dup_factor < 1) throw ConfigError("pretrain: dup_factor must be >= 1");
  if (max_seq_len < 3) throw ConfigError("pretrain: max_seq_len must be >= 3");
  if (short_seq_prob < 0.0 || short_seq_prob >= 1.0)
    throw ConfigError("pretrain: short_seq_prob must be in [0,1)");
}

BuildDocumentsResult build_documents(const NoteCollection& collection, const Vocab& vocab,
                                     bool lowercase) {
  BuildDocumentsResult out;
  for (const auto& note : collection.notes) {
    Document doc;
    for (const auto& section : sectionize(note)) {
      for (const auto& sentence : split_sentences(section)) {
        TokenSeq seq = tokenize(sentence.text, vocab, lowercase);
        if (!seq.ids.empty()) doc.sentences.push_back(std::move(seq.ids));
      }
    }
    if (doc.sentences.empty())
      ++out.dropped_notes;
    else
      out.documents.push_back(std::move(doc));
  }
  return out;
}

namespace {

void append_all(std::vector<TokenId>& dst, const std::vector<TokenId>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

// Trim the longer sequence from its end until the pair fits (ties trim A).
void truncate_pair(std::vector<TokenId>& a, std::vector<TokenId>& b, size_t max_tokens) {
  while (a.size() + b.size() > max_tokens) {
    if (b.size() > a.size())
      b.pop_back();
    else
      a.pop_back();
  }
}

PackedSequence assemble(const std::vector<TokenId>& a, const std::vector<TokenId>* b,
                        bool is_next) {
  PackedSequence p;
  p.ids.push_back(Vocab::kCls);
  append_all(p.ids, a);
  p.ids.push_back(Vocab::kSep);
  p.segment_ids.assign(p.ids.size(), 0);
  if (b) {
    append_all(p.ids, *b);
    p.ids.push_back(Vocab::kSep);
    p.segment_ids.resize(p.ids.size(), 1);
  }
  p.is_next = is_next;
  return p;
}

}  // namespace

std::vector<PackedSequence> pack_segments(const std::vector<Document>& documents,
                                          const PretrainConfig& config, Rng& rng) {
  config.validate();
  if (config.nsp_enabled && documents.size() < 2)
    throw ConfigError("pack_segments: NSP requires at least 2 documents for random-next pairs");

  const size_t max_tokens =
      static_cast<size_t>(config.max_seq_len) - (config.nsp_enabled ? 3 : 2);
  std::vector<PackedSequence> out;

  for (size_t di = 0; di < documents.size(); ++di) {
    const Document& doc = documents[di];

    size_t target = max_tokens;
    if (config.short_seq_prob > 0 && rng.next_bool(config.short_seq_prob))
      target = static_cast<size_t>(rng.next_int(2, static_cast<int>(max_tokens)));

    std::vector<const std::vector<TokenId>*> chunk;
    size_t chunk_len = 0;
    size_t i = 0;
    while (i < doc.sentences.size()) {
      chunk.push_back(&doc.sentences[i]);
      chunk_len += doc.sentences[i].size();
      bool last = (i + 1 == doc.sentences.size());
      if (last || chunk_len >= target) {
        if (!config.nsp_enabled) {
          std::vector<TokenId> a;
          for (const auto* s : chunk) append_all(a, *s);
          if (a.size() > max_tokens) a.resize(max_tokens);
          if (!a.empty()) out.push_back(assemble(a, nullptr, true));
        } else {
          size_t a_end = chunk.size() == 1
                             ? 1
                             : static_cast<size_t>(rng.next_int(1, static_cast<int>(chunk.size()) - 1));
          std::vector<TokenId> a;
          for (size_t k = 0; k < a_end; ++k) append_all(a, *chunk[k]);

          std::vector<TokenId> b;
          bool is_next;
          if (chunk.size() == 1 || rng.next_bool(0.5)) {
            is_next = false;
            size_t b_budget = target > a.size() ? target - a.size() : 1;
            size_t dj = di;
            while (dj == di)
              dj = static_cast<size_t>(rng.next_below(documents.size()));
            const Document& other = documents[dj];
            size_t start = static_cast<size_t>(rng.next_below(other.sentences.size()));
            for (size_t k = start; k < other.sentences.size() && b.size() < b_budget; ++k)
              append_all(b, other.sentences[k]);
            // Unused tail of the chunk goes back to the stream.
            size_t unused = chunk.size() - a_end;
            i -= unused;
          } else {
            is_next = true;
            for (size_t k = a_end; k < chunk.size(); ++k) append_all(b, *chunk[k]);
          }
          truncate_pair(a, b, max_tokens);
          if (!a.empty() && !b.empty()) out.push_back(assemble(a, &b, is_next));
        }
        chunk.clear();
        chunk_len = 0;
      }
      ++i;
    }
  }
  return out;
}

int num_predictions_for_length(int num_tokens, const PretrainConfig& config) {
  long by_prob = std::lround(config.mlm_prob * num_tokens);
  long n = std::max(1l, by_prob);
  return static_cast<int>(std::min<long>(config.max_predictions, n));
}

MLMInstance mask_instance(const PackedSequence& packed, const PretrainConfig& config,
                          const Vocab& vocab, Rng& rng) {
  std::vector<int32_t> candidates;
  for (size_t i = 0; i < packed.ids.size(); ++i) {
    TokenId id = packed.ids[i];
    if (id != Vocab::kCls && id != Vocab::kSep) candidates.push_back(static_cast<int32_t>(i));
  }
  if (candidates.empty()) throw DataError("mask_instance: no maskable positions");

  int n_pred = num_predictions_for_length(static_cast<int>(packed.ids.size()), config);
  n_pred = std::min<int>(n_pred, static_cast<int>(candidates.size()));

  rng.shuffle(candidates);
  std::vector<int32_t> chosen(candidates.begin(), candidates.begin() + n_pred);
  std::sort(chosen.begin(), chosen.end());

  MLMInstance inst;
  inst.ids = packed.ids;
  inst.is_next = packed.is_next;
  const int vocab_size = static_cast<int>(vocab.size());
  for (int32_t pos : chosen) {
    inst.masked_positions.push_back(pos);
    inst.masked_labels.push_back(packed.ids[static_cast<size_t>(pos)]);
    double roll = rng.next_double();
    if (roll < 0.8) {
      inst.ids[static_cast<size_t>(pos)] = Vocab::kMask;
    } else if (roll < 0.9) {
      inst.ids[static_cast<size_t>(pos)] =
          static_cast<TokenId>(Vocab::kNumSpecials +
                               rng.next_below(static_cast<uint64_t>(vocab_size - Vocab::kNumSpecials)));
    }  // else keep the original token
  }

  size_t real = inst.ids.size();
  inst.segment_ids = packed.segment_ids;
  inst.ids.resize(static_cast<size_t>(config.max_seq_len), Vocab::kPad);
  inst.segment_ids.resize(static_cast<size_t>(config.max_seq_len), 0);
  inst.attention_mask.assign(real, 1);
  inst.attention_mask.resize(static_cast<size_t>(config.max_seq_len), 0);
  return inst;
}

std::vector<MLMInstance> create_instances(const std::vector<Document>& documents,
                                          const PretrainConfig& config, const Vocab& vocab) {
  config.validate();
  Rng pack_rng(config.seed);
  std::vector<PackedSequence> packed = pack_segments(documents, config, pack_rng);

  std::vector<MLMInstance> out;
  out.reserve(packed.size() * static_cast<size_t>(config.dup_factor));
  for (int d = 0; d < config.dup_factor; ++d) {
    Rng mask_rng(seed_for_dup(config.seed, d));
    for (const auto& seq : packed) out.push_back(mask_instance(seq, config, vocab, mask_rng));
  }
  return out;
}

namespace {

constexpr char kInstancesMagic[4] = {'N', 'B', 'M', 'I'};
constexpr uint32_t kInstancesVersion = 1;

void wr_u32(std::ostream& os, uint32_t v) {
  char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
               static_cast<char>(v >> 24)};
  os.write(b, 4);
}

void wr_u64(std::ostream& os, uint64_t v) {
  wr_u32(os, static_cast<uint32_t>(v));
  wr_u32(os, static_cast<uint32_t>(v >> 32));
}

uint32_t rd_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("truncated instance file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t rd_u64(std::istream& is) {
  uint64_t lo = rd_u32(is);
  uint64_t hi = rd_u32(is);
  return lo | (hi << 32);
}

size_t real_length(const MLMInstance& inst) {
  size_t n = inst.ids.size();
  while (n > 0 && inst.ids[n - 1] == Vocab::kPad) --n;
  return n;
}

}  // namespace

void write_instances_binary(const std::vector<MLMInstance>& instances, int max_seq_len,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write instance file: " + path);
  out.write(kInstancesMagic, 4);
  wr_u32(out, kInstancesVersion);
  wr_u32(out, static_cast<uint32_t>(max_seq_len));
  wr_u64(out, instances.size());
  for (const auto& inst : instances) {
    uint32_t real = static_cast<uint32_t>(real_length(inst));
    wr_u32(out, real);
    for (uint32_t i = 0; i < real; ++i) wr_u32(out, static_cast<uint32_t>(inst.ids[i]));
    for (uint32_t i = 0; i < real; ++i)
      out.put(static_cast<char>(inst.segment_ids[i]));
    wr_u32(out, static_cast<uint32_t>(inst.masked_positions.size()));
    for (int32_t p : inst.masked_positions) wr_u32(out, static_cast<uint32_t>(p));
    for (TokenId l : inst.masked_labels) wr_u32(out, static_cast<uint32_t>(l));
    out.put(inst.is_next ? 1 : 0);
  }
  if (!out) throw DataError("short write: " + path);
}

std::vector<MLMInstance> read_instances_binary(const std::string& path, int* max_seq_len_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open instance file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kInstancesMagic, 4) != 0)
    throw DataError("not an instance file (bad magic): " + path);
  uint32_t version = rd_u32(in);
  if (version != kInstancesVersion)
    throw DataError("unsupported instance file version " + std::to_string(version));
  uint32_t max_seq_len = rd_u32(in);
  uint64_t count = rd_u64(in);
  std::vector<MLMInstance> out;
  out.reserve(count);
  for (uint64_t r = 0; r < count; ++r) {
    MLMInstance inst;
    uint32_t real = rd_u32(in);
    if (real > max_seq_len) throw DataError("corrupt instance record in " + path);
    inst.ids.resize(real);
    for (uint32_t i = 0; i < real; ++i) inst.ids[i] = static_cast<TokenId>(rd_u32(in));
    inst.segment_ids.resize(real);
    for (uint32_t i = 0; i < real; ++i) {
      int c = in.get();
      if (c == EOF) throw DataError("truncated instance file: " + path);
      inst.segment_ids[i] = static_cast<int32_t>(c);
    }
    uint32_t n_masked = rd_u32(in);
    inst.masked_positions.resize(n_masked);
    for (uint32_t i = 0; i < n_masked; ++i)
      inst.masked_positions[i] = static_cast<int32_t>(rd_u32(in));
    inst.masked_labels.resize(n_masked);
    for (uint32_t i = 0; i < n_masked; ++i)
      inst.masked_labels[i] = static_cast<TokenId>(rd_u32(in));
    int next = in.get();
    if (next == EOF) throw DataError("truncated instance file: " + path);
    inst.is_next = next != 0;

    inst.ids.resize(max_seq_len, Vocab::kPad);
    inst.segment_ids.resize(max_seq_len, 0);
    inst.attention_mask.assign(real, 1);
    inst.attention_mask.resize(max_seq_len, 0);
    out.push_back(std::move(inst));
  }
  if (max_seq_len_out) *max_seq_len_out = static_cast<int>(max_seq_len);
  return out;
}

void write_instances_jsonl(const std::vector<MLMInstance>& instances, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write instance file: " + path);
  for (const auto& inst : instances) {
    nlohmann::json j;
    j["ids"] = inst.ids;
    j["segment_ids"] = inst.segment_ids;
    j["masked_positions"] = inst.masked_positions;
    j["masked_labels"] = inst.masked_labels;
    j["is_next"] = inst.is_next;
    out << j.dump() << "\n";
  }
}

std::vector<MLMInstance> read_instances_jsonl(const std::string& path) {
  std::vector<MLMInstance> out;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    MLMInstance inst;
    inst.ids = j.at("ids").get<std::vector<TokenId>>();
    inst.segment_ids = j.at("segment_ids").get<std::vector<int32_t>>();
    inst.masked_positions = j.at("masked_positions").get<std::vector<int32_t>>();
    inst.masked_labels = j.at("masked_labels").get<std::vector<TokenId>>();
    inst.is_next = j.at("is_next").get<bool>();
    size_t real = inst.ids.size();
    while (real > 0 && inst.ids[real - 1] == Vocab::kPad) --real;
    inst.attention_mask.assign(real, 1);
    inst.attention_mask.resize(inst.ids.size(), 0);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace notebert
