#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "notebert/model.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian f32");

namespace notebert {

namespace {

constexpr char kMagic[4] = {'C', 'L', 'D', 'P'};
constexpr uint32_t kVersion = 1;

void wr_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

void wr_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}

uint32_t rd_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw DataError("truncated checkpoint file");
  return v;
}

uint64_t rd_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw DataError("truncated checkpoint file");
  return v;
}

nlohmann::json head_to_json(const HeadSpec& h) {
  return {{"kind", head_kind_name(h.kind)},
          {"num_classes", h.num_classes},
          {"tied_mlm", h.tied_mlm}};
}

HeadSpec head_from_json(const nlohmann::json& j) {
  HeadSpec h;
  h.kind = head_kind_from_name(j.at("kind").get<std::string>());
  h.num_classes = j.at("num_classes").get<int>();
  h.tied_mlm = j.at("tied_mlm").get<bool>();
  return h;
}

void write_arrays(std::ostream& os, const ParamSet<float>& p) {
  for (const auto& a : p.arrays)
    os.write(reinterpret_cast<const char*>(a.v.data()),
             static_cast<std::streamsize>(a.v.size() * sizeof(float)));
}

void read_arrays(std::istream& is, ParamSet<float>& p, const std::string& path) {
  for (auto& a : p.arrays) {
    is.read(reinterpret_cast<char*>(a.v.data()),
            static_cast<std::streamsize>(a.v.size() * sizeof(float)));
    if (!is) throw DataError("truncated checkpoint payload: " + path);
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  auto manifest = parameter_manifest(ckpt.config, ckpt.head);
  if (manifest.size() != ckpt.params.arrays.size())
    throw DataError("checkpoint params do not match the manifest");

  nlohmann::json header;
  header["config"] = nlohmann::json::parse(ckpt.config.to_json());
  header["head"] = head_to_json(ckpt.head);
  header["vocab_fingerprint"] = ckpt.vocab_fingerprint;
  header["lineage"] = ckpt.lineage;
  header["step"] = ckpt.step;

  uint64_t offset = 0;
  nlohmann::json arrays = nlohmann::json::array();
  for (size_t i = 0; i < manifest.size(); ++i) {
    const auto& [name, shape] = manifest[i];
    const auto& arr = ckpt.params.arrays[i];
    if (arr.name != name || arr.shape != shape)
      throw DataError("checkpoint array order mismatch at " + name);
    arrays.push_back({{"name", name},
                      {"shape", shape},
                      {"offset", offset},
                      {"numel", arr.numel()}});
    offset += static_cast<uint64_t>(arr.numel()) * sizeof(float);
  }
  header["arrays"] = arrays;
  header["optimizer_present"] = ckpt.optimizer.has_value();
  if (ckpt.optimizer) header["optimizer_step"] = ckpt.optimizer->step;
  header["rng_present"] = ckpt.rng_state.has_value();
  if (ckpt.rng_state) header["rng_state"] = *ckpt.rng_state;

  std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  wr_u32(out, kVersion);
  wr_u64(out, header_text.size());
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  write_arrays(out, ckpt.params);
  if (ckpt.optimizer) {
    write_arrays(out, ckpt.optimizer->m);
    write_arrays(out, ckpt.optimizer->v);
  }
  if (!out) throw DataError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path);
  uint32_t version = rd_u32(in);
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  uint64_t header_len = rd_u64(in);
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("truncated checkpoint header: " + path);
  nlohmann::json header = nlohmann::json::parse(header_text);

  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(header.at("config").dump());
  ckpt.head = head_from_json(header.at("head"));
  ckpt.vocab_fingerprint = header.at("vocab_fingerprint").get<std::string>();
  ckpt.lineage = header.at("lineage").get<std::string>();
  ckpt.step = header.at("step").get<int64_t>();

  auto manifest = parameter_manifest(ckpt.config, ckpt.head);
  const auto& arrays = header.at("arrays");
  if (arrays.size() != manifest.size())
    throw DataError("checkpoint manifest size mismatch: " + path);
  for (size_t i = 0; i < manifest.size(); ++i) {
    if (arrays[i].at("name").get<std::string>() != manifest[i].first)
      throw DataError("unexpected checkpoint array " +
                      arrays[i].at("name").get<std::string>() + ": " + path);
    if (arrays[i].at("shape").get<std::vector<int>>() != manifest[i].second)
      throw DataError("checkpoint shape mismatch at " + manifest[i].first + ": " + path);
  }

  for (const auto& [name, shape] : manifest)
    ckpt.params.arrays.emplace_back(name, shape);
  read_arrays(in, ckpt.params, path);

  if (header.at("optimizer_present").get<bool>()) {
    AdamState<float> st = AdamState<float>::for_params(ckpt.params);
    st.step = header.at("optimizer_step").get<int64_t>();
    read_arrays(in, st.m, path);
    read_arrays(in, st.v, path);
    ckpt.optimizer = std::move(st);
  }
  if (header.at("rng_present").get<bool>())
    ckpt.rng_state = header.at("rng_state").get<uint64_t>();
  return ckpt;
}

ParamSet<float> params_for_head(const Checkpoint& ckpt, const HeadSpec& head, Rng& init_rng) {
  ParamSet<float> fresh = init_parameters<float>(ckpt.config, head, init_rng);
  for (auto& arr : fresh.arrays) {
    bool body = arr.name.rfind("embeddings.", 0) == 0 || arr.name.rfind("encoder.", 0) == 0;
    bool copy = body || ckpt.head == head;
    if (!copy) continue;  // fresh head stays freshly initialized
    const auto& src = ckpt.params.at(arr.name);
    if (src.shape != arr.shape)
      throw DataError("checkpoint array shape mismatch at " + arr.name);
    arr.v = src.v;
  }
  return fresh;
}

}  // namespace notebert
