#include "notebert/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "json.hpp"
#include "nn_kernels.hpp"

namespace notebert {

using namespace kernels;

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("model: layers must be >= 1");
  if (hidden < 1 || heads < 1 || hidden % heads != 0)
    throw ConfigError("model: hidden must be a positive multiple of heads");
  if (ff_dim < 1) throw ConfigError("model: ff_dim must be >= 1");
  if (vocab_size < 6) throw ConfigError("model: vocab_size too small");
  if (max_positions < 3) throw ConfigError("model: max_positions must be >= 3");
  if (type_vocab < 1) throw ConfigError("model: type_vocab must be >= 1");
  if (dropout < 0.0f || dropout >= 1.0f) throw ConfigError("model: dropout must be in [0,1)");
  if (activation != "gelu_tanh") throw ConfigError("model: unknown activation " + activation);
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["layers"] = layers;
  j["hidden"] = hidden;
  j["heads"] = heads;
  j["ff_dim"] = ff_dim;
  j["vocab_size"] = vocab_size;
  j["max_positions"] = max_positions;
  j["type_vocab"] = type_vocab;
  j["dropout"] = dropout;
  j["activation"] = activation;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  ModelConfig c;
  c.layers = j.at("layers").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.type_vocab = j.at("type_vocab").get<int>();
  c.dropout = j.at("dropout").get<float>();
  c.activation = j.value("activation", std::string("gelu_tanh"));
  c.validate();
  return c;
}

std::string head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::mlm_nsp: return "mlm_nsp";
    case HeadKind::token_classify: return "token_classify";
    case HeadKind::seq_classify: return "seq_classify";
  }
  throw ConfigError("bad head kind");
}

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "mlm_nsp") return HeadKind::mlm_nsp;
  if (name == "token_classify") return HeadKind::token_classify;
  if (name == "seq_classify") return HeadKind::seq_classify;
  throw ConfigError("unknown head kind: " + name);
}

std::vector<std::pair<std::string, std::vector<int>>> parameter_manifest(
    const ModelConfig& c, const HeadSpec& head) {
  std::vector<std::pair<std::string, std::vector<int>>> m;
  m.push_back({"embeddings.token", {c.vocab_size, c.hidden}});
  m.push_back({"embeddings.position", {c.max_positions, c.hidden}});
  m.push_back({"embeddings.segment", {c.type_vocab, c.hidden}});
  m.push_back({"embeddings.ln.gain", {c.hidden}});
  m.push_back({"embeddings.ln.bias", {c.hidden}});
  for (int l = 0; l < c.layers; ++l) {
    std::string p = "encoder." + std::to_string(l) + ".";
    m.push_back({p + "attn.q.w", {c.hidden, c.hidden}});
    m.push_back({p + "attn.q.b", {c.hidden}});
    m.push_back({p + "attn.k.w", {c.hidden, c.hidden}});
    m.push_back({p + "attn.k.b", {c.hidden}});
    m.push_back({p + "attn.v.w", {c.hidden, c.hidden}});
    m.push_back({p + "attn.v.b", {c.hidden}});
    m.push_back({p + "attn.out.w", {c.hidden, c.hidden}});
    m.push_back({p + "attn.out.b", {c.hidden}});
    m.push_back({p + "attn.ln.gain", {c.hidden}});
    m.push_back({p + "attn.ln.bias", {c.hidden}});
    m.push_back({p + "ff.in.w", {c.hidden, c.ff_dim}});
    m.push_back({p + "ff.in.b", {c.ff_dim}});
    m.push_back({p + "ff.out.w", {c.ff_dim, c.hidden}});
    m.push_back({p + "ff.out.b", {c.hidden}});
    m.push_back({p + "ff.ln.gain", {c.hidden}});
    m.push_back({p + "ff.ln.bias", {c.hidden}});
  }
  switch (head.kind) {
    case HeadKind::mlm_nsp:
      if (!head.tied_mlm) m.push_back({"head.mlm.w", {c.hidden, c.vocab_size}});
      m.push_back({"head.mlm.bias", {c.vocab_size}});
      m.push_back({"head.nsp.w", {c.hidden, 2}});
      m.push_back({"head.nsp.b", {2}});
      break;
    case HeadKind::token_classify:
    case HeadKind::seq_classify:
      if (head.num_classes < 1) throw ConfigError("classify head requires num_classes >= 1");
      m.push_back({"head.cls.w", {c.hidden, head.num_classes}});
      m.push_back({"head.cls.b", {head.num_classes}});
      break;
  }
  return m;
}

namespace {

bool is_no_init_array(const std::string& name) {
  // Zero-initialized: every bias and LN offset.
  return name.ends_with(".b") || name.ends_with(".bias");
}

bool is_one_init_array(const std::string& name) { return name.ends_with(".gain"); }

}  // namespace

template <typename T>
ParamSet<T> init_parameters(const ModelConfig& config, const HeadSpec& head, Rng& rng) {
  config.validate();
  ParamSet<T> p;
  for (const auto& [name, shape] : parameter_manifest(config, head)) {
    Tensor<T> t(name, shape);
    if (is_one_init_array(name)) {
      std::fill(t.v.begin(), t.v.end(), T(1));
    } else if (!is_no_init_array(name)) {
      for (auto& x : t.v) x = static_cast<T>(rng.next_trunc_normal(0.02));
    }
    p.arrays.push_back(std::move(t));
  }
  return p;
}

template ParamSet<float> init_parameters<float>(const ModelConfig&, const HeadSpec&, Rng&);
template ParamSet<double> init_parameters<double>(const ModelConfig&, const HeadSpec&, Rng&);

template <typename T>
EncoderModel<T>::EncoderModel(ModelConfig config, HeadSpec head)
    : config_(std::move(config)), head_(head) {
  config_.validate();
}

template <typename T>
void EncoderModel<T>::init_params(Rng& rng) {
  params_ = init_parameters<T>(config_, head_, rng);
}

namespace {

// Serially draws a dropout keep-mask (deterministic rng order), then scales
// kept entries by 1/(1-rate). No-op in eval mode or at rate 0.
template <typename T>
void apply_dropout(std::vector<T>& x, std::vector<uint8_t>& mask_out, float rate, bool train,
                   Rng* rng) {
  if (!train || rate <= 0.0f) {
    mask_out.clear();
    return;
  }
  mask_out.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    mask_out[i] = rng->next_double() >= rate ? 1 : 0;
  const T scale = T(1) / (T(1) - static_cast<T>(rate));
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(x.size()); ++i)
    x[static_cast<size_t>(i)] = mask_out[static_cast<size_t>(i)] ? x[static_cast<size_t>(i)] * scale : T(0);
}

// Backward of apply_dropout given the recorded mask.
template <typename T>
void dropout_backward(std::vector<T>& d, const std::vector<uint8_t>& mask, float rate) {
  if (mask.empty()) return;
  const T scale = T(1) / (T(1) - static_cast<T>(rate));
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(d.size()); ++i)
    d[static_cast<size_t>(i)] = mask[static_cast<size_t>(i)] ? d[static_cast<size_t>(i)] * scale : T(0);
}

}  // namespace

template <typename T>
ForwardResult<T> EncoderModel<T>::forward(const Batch& batch, bool train_mode, Rng* dropout_rng,
                                          const FinalHiddenHook& hook) const {
  const int B = batch.batch, S = batch.seq_len, H = config_.hidden, A = config_.heads;
  const int dh = H / A, F = config_.ff_dim, V = config_.vocab_size;
  const int BS = B * S;
  if (S > config_.max_positions) throw DataError("batch seq_len exceeds max_positions");
  if (static_cast<int>(batch.ids.size()) != BS ||
      static_cast<int>(batch.segment_ids.size()) != BS ||
      static_cast<int>(batch.attention_mask.size()) != BS)
    throw DataError("batch array shape mismatch");
  for (int i = 0; i < BS; ++i) {
    if (batch.ids[i] < 0 || batch.ids[i] >= V) throw DataError("token id out of range");
    if (batch.segment_ids[i] < 0 || batch.segment_ids[i] >= config_.type_vocab)
      throw DataError("segment id out of range");
  }
  if (train_mode && config_.dropout > 0.0f && dropout_rng == nullptr)
    throw ConfigError("train-mode forward with dropout requires an rng");

  ForwardResult<T> out;
  ForwardCache<T>& cache = out.cache;
  cache.train_mode = train_mode;

  const T* tok = params_.at("embeddings.token").data();
  const T* pos = params_.at("embeddings.position").data();
  const T* seg = params_.at("embeddings.segment").data();

  cache.emb_sum.resize(static_cast<size_t>(BS) * H);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < BS; ++i) {
    int s = i % S;
    const T* trow = tok + static_cast<int64_t>(batch.ids[i]) * H;
    const T* prow = pos + static_cast<int64_t>(s) * H;
    const T* grow = seg + static_cast<int64_t>(batch.segment_ids[i]) * H;
    T* o = cache.emb_sum.data() + static_cast<int64_t>(i) * H;
    for (int h = 0; h < H; ++h) o[h] = trow[h] + prow[h] + grow[h];
  }

  cache.x0.resize(static_cast<size_t>(BS) * H);
  cache.emb_mean.resize(BS);
  cache.emb_rstd.resize(BS);
  layernorm_forward(cache.emb_sum.data(), params_.at("embeddings.ln.gain").data(),
                    params_.at("embeddings.ln.bias").data(), cache.x0.data(),
                    cache.emb_mean.data(), cache.emb_rstd.data(), BS, H);
  apply_dropout(cache.x0, cache.emb_drop, config_.dropout, train_mode, dropout_rng);

  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> x = cache.x0;
  cache.layers.resize(static_cast<size_t>(config_.layers));

  for (int l = 0; l < config_.layers; ++l) {
    LayerCache<T>& lc = cache.layers[static_cast<size_t>(l)];
    std::string p = "encoder." + std::to_string(l) + ".";
    lc.x_in = x;

    lc.q.resize(static_cast<size_t>(BS) * H);
    lc.k.resize(static_cast<size_t>(BS) * H);
    lc.v.resize(static_cast<size_t>(BS) * H);
    matmul(x.data(), params_.at(p + "attn.q.w").data(), lc.q.data(), BS, H, H);
    add_bias(lc.q.data(), params_.at(p + "attn.q.b").data(), BS, H);
    matmul(x.data(), params_.at(p + "attn.k.w").data(), lc.k.data(), BS, H, H);
    add_bias(lc.k.data(), params_.at(p + "attn.k.b").data(), BS, H);
    matmul(x.data(), params_.at(p + "attn.v.w").data(), lc.v.data(), BS, H, H);
    add_bias(lc.v.data(), params_.at(p + "attn.v.b").data(), BS, H);

    // Masked softmax attention. PAD keys get probability exactly 0.
    lc.probs.assign(static_cast<size_t>(B) * A * S * S, T(0));
#pragma omp parallel for schedule(static)
    for (int ba = 0; ba < B * A; ++ba) {
      int b = ba / A, a = ba % A;
      const int8_t* am = batch.attention_mask.data() + static_cast<int64_t>(b) * S;
      for (int s = 0; s < S; ++s) {
        const T* qrow = lc.q.data() + (static_cast<int64_t>(b) * S + s) * H + a * dh;
        T* prow = lc.probs.data() + ((static_cast<int64_t>(ba)) * S + s) * S;
        double mx = -1e300;
        for (int t = 0; t < S; ++t) {
          if (!am[t]) continue;
          const T* krow = lc.k.data() + (static_cast<int64_t>(b) * S + t) * H + a * dh;
          T dot = T(0);
          for (int d = 0; d < dh; ++d) dot += qrow[d] * krow[d];
          prow[t] = dot * inv_sqrt_dh;
          mx = std::max(mx, static_cast<double>(prow[t]));
        }
        double sum = 0;
        for (int t = 0; t < S; ++t) {
          if (!am[t]) continue;
          double e = std::exp(static_cast<double>(prow[t]) - mx);
          prow[t] = static_cast<T>(e);
          sum += e;
        }
        for (int t = 0; t < S; ++t) prow[t] = am[t] ? static_cast<T>(prow[t] / sum) : T(0);
      }
    }

    // Attention-probability dropout (mask recorded; dropped values are fused
    // into the context computation below).
    const bool drop_on = train_mode && config_.dropout > 0.0f;
    if (drop_on) {
      lc.attn_drop.resize(lc.probs.size());
      for (size_t i = 0; i < lc.probs.size(); ++i)
        lc.attn_drop[i] = dropout_rng->next_double() >= config_.dropout ? 1 : 0;
    }
    const T attn_scale = drop_on ? T(1) / (T(1) - static_cast<T>(config_.dropout)) : T(1);

    lc.ctx.assign(static_cast<size_t>(BS) * H, T(0));
#pragma omp parallel for schedule(static)
    for (int ba = 0; ba < B * A; ++ba) {
      int b = ba / A, a = ba % A;
      for (int s = 0; s < S; ++s) {
        const T* prow = lc.probs.data() + ((static_cast<int64_t>(ba)) * S + s) * S;
        const uint8_t* drow =
            drop_on ? lc.attn_drop.data() + ((static_cast<int64_t>(ba)) * S + s) * S : nullptr;
        T* crow = lc.ctx.data() + (static_cast<int64_t>(b) * S + s) * H + a * dh;
        for (int t = 0; t < S; ++t) {
          T w = prow[t];
          if (w == T(0)) continue;
          if (drop_on) w = drow[t] ? w * attn_scale : T(0);
          if (w == T(0)) continue;
          const T* vrow = lc.v.data() + (static_cast<int64_t>(b) * S + t) * H + a * dh;
          for (int d = 0; d < dh; ++d) crow[d] += w * vrow[d];
        }
      }
    }

    std::vector<T> attn_out(static_cast<size_t>(BS) * H);
    matmul(lc.ctx.data(), params_.at(p + "attn.out.w").data(), attn_out.data(), BS, H, H);
    add_bias(attn_out.data(), params_.at(p + "attn.out.b").data(), BS, H);
    apply_dropout(attn_out, lc.out_drop, config_.dropout, train_mode, dropout_rng);

    lc.res1.resize(static_cast<size_t>(BS) * H);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < static_cast<int64_t>(lc.res1.size()); ++i)
      lc.res1[static_cast<size_t>(i)] = lc.x_in[static_cast<size_t>(i)] + attn_out[static_cast<size_t>(i)];

    lc.x_mid.resize(static_cast<size_t>(BS) * H);
    lc.ln1_mean.resize(BS);
    lc.ln1_rstd.resize(BS);
    layernorm_forward(lc.res1.data(), params_.at(p + "attn.ln.gain").data(),
                      params_.at(p + "attn.ln.bias").data(), lc.x_mid.data(),
                      lc.ln1_mean.data(), lc.ln1_rstd.data(), BS, H);

    lc.ff_pre.resize(static_cast<size_t>(BS) * F);
    matmul(lc.x_mid.data(), params_.at(p + "ff.in.w").data(), lc.ff_pre.data(), BS, H, F);
    add_bias(lc.ff_pre.data(), params_.at(p + "ff.in.b").data(), BS, F);

    lc.ff_act.resize(lc.ff_pre.size());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < static_cast<int64_t>(lc.ff_pre.size()); ++i)
      lc.ff_act[static_cast<size_t>(i)] = gelu(lc.ff_pre[static_cast<size_t>(i)]);

    std::vector<T> ff_out(static_cast<size_t>(BS) * H);
    matmul(lc.ff_act.data(), params_.at(p + "ff.out.w").data(), ff_out.data(), BS, F, H);
    add_bias(ff_out.data(), params_.at(p + "ff.out.b").data(), BS, H);
    apply_dropout(ff_out, lc.ff_drop, config_.dropout, train_mode, dropout_rng);

    lc.res2.resize(static_cast<size_t>(BS) * H);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < static_cast<int64_t>(lc.res2.size()); ++i)
      lc.res2[static_cast<size_t>(i)] = lc.x_mid[static_cast<size_t>(i)] + ff_out[static_cast<size_t>(i)];

    x.resize(static_cast<size_t>(BS) * H);
    lc.ln2_mean.resize(BS);
    lc.ln2_rstd.resize(BS);
    layernorm_forward(lc.res2.data(), params_.at(p + "ff.ln.gain").data(),
                      params_.at(p + "ff.ln.bias").data(), x.data(), lc.ln2_mean.data(),
                      lc.ln2_rstd.data(), BS, H);
  }

  cache.h_final = std::move(x);
  if (hook) hook(cache.h_final.data(), B, S, H);

  switch (head_.kind) {
    case HeadKind::mlm_nsp: {
      const int M = static_cast<int>(batch.mlm_positions.size());
      cache.mlm_gather.resize(static_cast<size_t>(M) * H);
      for (int r = 0; r < M; ++r) {
        int32_t gp = batch.mlm_positions[static_cast<size_t>(r)];
        if (gp < 0 || gp >= BS) throw DataError("mlm position out of range");
        std::memcpy(cache.mlm_gather.data() + static_cast<int64_t>(r) * H,
                    cache.h_final.data() + static_cast<int64_t>(gp) * H,
                    sizeof(T) * static_cast<size_t>(H));
      }
      out.mlm_logits.resize(static_cast<size_t>(M) * V);
      if (head_.tied_mlm) {
        matmul_nt(cache.mlm_gather.data(), tok, out.mlm_logits.data(), M, H, V);
      } else {
        matmul(cache.mlm_gather.data(), params_.at("head.mlm.w").data(), out.mlm_logits.data(),
               M, H, V);
      }
      add_bias(out.mlm_logits.data(), params_.at("head.mlm.bias").data(), M, V);

      std::vector<T> cls_rows(static_cast<size_t>(B) * H);
      for (int b = 0; b < B; ++b)
        std::memcpy(cls_rows.data() + static_cast<int64_t>(b) * H,
                    cache.h_final.data() + static_cast<int64_t>(b) * S * H,
                    sizeof(T) * static_cast<size_t>(H));
      out.nsp_logits.resize(static_cast<size_t>(B) * 2);
      matmul(cls_rows.data(), params_.at("head.nsp.w").data(), out.nsp_logits.data(), B, H, 2);
      add_bias(out.nsp_logits.data(), params_.at("head.nsp.b").data(), B, 2);
      break;
    }
    case HeadKind::token_classify: {
      const int K = head_.num_classes;
      out.cls_logits.resize(static_cast<size_t>(BS) * K);
      matmul(cache.h_final.data(), params_.at("head.cls.w").data(), out.cls_logits.data(), BS,
             H, K);
      add_bias(out.cls_logits.data(), params_.at("head.cls.b").data(), BS, K);
      break;
    }
    case HeadKind::seq_classify: {
      const int K = head_.num_classes;
      std::vector<T> cls_rows(static_cast<size_t>(B) * H);
      for (int b = 0; b < B; ++b)
        std::memcpy(cls_rows.data() + static_cast<int64_t>(b) * H,
                    cache.h_final.data() + static_cast<int64_t>(b) * S * H,
                    sizeof(T) * static_cast<size_t>(H));
      out.cls_logits.resize(static_cast<size_t>(B) * K);
      matmul(cls_rows.data(), params_.at("head.cls.w").data(), out.cls_logits.data(), B, H, K);
      add_bias(out.cls_logits.data(), params_.at("head.cls.b").data(), B, K);
      break;
    }
  }
  return out;
}

template <typename T>
LossResult<T> EncoderModel<T>::loss(const ForwardResult<T>& fwd, const Batch& batch,
                                    bool include_nsp) const {
  LossResult<T> res;
  const int B = batch.batch, S = batch.seq_len, V = config_.vocab_size;

  switch (head_.kind) {
    case HeadKind::mlm_nsp: {
      const int M = static_cast<int>(batch.mlm_positions.size());
      if (M == 0) throw DataError("loss: empty masked set");
      res.d_mlm_logits.assign(static_cast<size_t>(M) * V, T(0));
      std::vector<double> logp(static_cast<size_t>(V));
      double total = 0;
      for (int r = 0; r < M; ++r) {
        const T* row = fwd.mlm_logits.data() + static_cast<int64_t>(r) * V;
        log_softmax_row(row, logp.data(), V);
        int32_t label = batch.mlm_labels[static_cast<size_t>(r)];
        if (label < 0 || label >= V) throw DataError("mlm label out of range");
        total -= logp[static_cast<size_t>(label)];
        T* drow = res.d_mlm_logits.data() + static_cast<int64_t>(r) * V;
        for (int vtok = 0; vtok < V; ++vtok)
          drow[vtok] = static_cast<T>(std::exp(logp[static_cast<size_t>(vtok)]) / M);
        drow[label] -= static_cast<T>(1.0 / M);
      }
      res.mlm_loss = total / M;
      res.loss = res.mlm_loss;

      if (include_nsp) {
        if (static_cast<int>(batch.nsp_labels.size()) != B)
          throw DataError("loss: nsp labels missing");
        res.d_nsp_logits.assign(static_cast<size_t>(B) * 2, T(0));
        double ntotal = 0;
        double logp2[2];
        for (int b = 0; b < B; ++b) {
          const T* row = fwd.nsp_logits.data() + static_cast<int64_t>(b) * 2;
          log_softmax_row(row, logp2, 2);
          int32_t label = batch.nsp_labels[static_cast<size_t>(b)];
          if (label < 0 || label > 1) throw DataError("nsp label out of range");
          ntotal -= logp2[label];
          T* drow = res.d_nsp_logits.data() + static_cast<int64_t>(b) * 2;
          for (int kk = 0; kk < 2; ++kk) drow[kk] = static_cast<T>(std::exp(logp2[kk]) / B);
          drow[label] -= static_cast<T>(1.0 / B);
        }
        res.nsp_loss = ntotal / B;
        res.loss += res.nsp_loss;
      }
      break;
    }
    case HeadKind::token_classify: {
      const int K = head_.num_classes;
      const int BS = B * S;
      if (static_cast<int>(batch.token_labels.size()) != BS)
        throw DataError("loss: token labels missing");
      long labeled = 0;
      for (int i = 0; i < BS; ++i)
        if (batch.token_labels[i] >= 0) ++labeled;
      if (labeled == 0) throw DataError("loss: no labeled token positions");
      res.d_cls_logits.assign(static_cast<size_t>(BS) * K, T(0));
      std::vector<double> logp(static_cast<size_t>(K));
      double total = 0;
      for (int i = 0; i < BS; ++i) {
        int32_t label = batch.token_labels[i];
        if (label < 0) continue;
        if (label >= K) throw DataError("token label out of range");
        const T* row = fwd.cls_logits.data() + static_cast<int64_t>(i) * K;
        log_softmax_row(row, logp.data(), K);
        total -= logp[static_cast<size_t>(label)];
        T* drow = res.d_cls_logits.data() + static_cast<int64_t>(i) * K;
        for (int kk = 0; kk < K; ++kk)
          drow[kk] = static_cast<T>(std::exp(logp[static_cast<size_t>(kk)]) / labeled);
        drow[label] -= static_cast<T>(1.0 / static_cast<double>(labeled));
      }
      res.loss = total / static_cast<double>(labeled);
      break;
    }
    case HeadKind::seq_classify: {
      const int K = head_.num_classes;
      if (static_cast<int>(batch.seq_labels.size()) != B)
        throw DataError("loss: sequence labels missing");
      res.d_cls_logits.assign(static_cast<size_t>(B) * K, T(0));
      std::vector<double> logp(static_cast<size_t>(K));
      double total = 0;
      for (int b = 0; b < B; ++b) {
        int32_t label = batch.seq_labels[static_cast<size_t>(b)];
        if (label < 0 || label >= K) throw DataError("sequence label out of range");
        const T* row = fwd.cls_logits.data() + static_cast<int64_t>(b) * K;
        log_softmax_row(row, logp.data(), K);
        total -= logp[static_cast<size_t>(label)];
        T* drow = res.d_cls_logits.data() + static_cast<int64_t>(b) * K;
        for (int kk = 0; kk < K; ++kk)
          drow[kk] = static_cast<T>(std::exp(logp[static_cast<size_t>(kk)]) / B);
        drow[label] -= static_cast<T>(1.0 / B);
      }
      res.loss = total / B;
      break;
    }
  }
  return res;
}

template <typename T>
ParamSet<T> EncoderModel<T>::backward(const Batch& batch, const ForwardResult<T>& fwd,
                                      const LossResult<T>& loss) const {
  const ForwardCache<T>& cache = fwd.cache;
  if (!cache.train_mode) throw DataError("backward requires a train-mode forward cache");
  const int B = batch.batch, S = batch.seq_len, H = config_.hidden, A = config_.heads;
  const int dh = H / A, F = config_.ff_dim, V = config_.vocab_size;
  const int BS = B * S;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

  ParamSet<T> grads = params_.zeros_like();
  std::vector<T> dh_final(static_cast<size_t>(BS) * H, T(0));

  switch (head_.kind) {
    case HeadKind::mlm_nsp: {
      const int M = static_cast<int>(batch.mlm_positions.size());
      const T* dml = loss.d_mlm_logits.data();
      std::vector<T> dG(static_cast<size_t>(M) * H);
      if (head_.tied_mlm) {
        matmul(dml, params_.at("embeddings.token").data(), dG.data(), M, V, H);
        matmul_tn(dml, cache.mlm_gather.data(), grads.at("embeddings.token").data(), M, V, H);
      } else {
        matmul_nt(dml, params_.at("head.mlm.w").data(), dG.data(), M, V, H);
        matmul_tn(cache.mlm_gather.data(), dml, grads.at("head.mlm.w").data(), M, H, V);
      }
      bias_grad(dml, grads.at("head.mlm.bias").data(), M, V);
#pragma omp parallel for schedule(static)
      for (int h = 0; h < H; ++h) {
        for (int r = 0; r < M; ++r) {
          int32_t gp = batch.mlm_positions[static_cast<size_t>(r)];
          dh_final[static_cast<int64_t>(gp) * H + h] += dG[static_cast<int64_t>(r) * H + h];
        }
      }

      if (!loss.d_nsp_logits.empty()) {
        const T* dn = loss.d_nsp_logits.data();
        std::vector<T> cls_rows(static_cast<size_t>(B) * H);
        for (int b = 0; b < B; ++b)
          std::memcpy(cls_rows.data() + static_cast<int64_t>(b) * H,
                      cache.h_final.data() + static_cast<int64_t>(b) * S * H,
                      sizeof(T) * static_cast<size_t>(H));
        matmul_tn(cls_rows.data(), dn, grads.at("head.nsp.w").data(), B, H, 2);
        bias_grad(dn, grads.at("head.nsp.b").data(), B, 2);
        std::vector<T> dcls(static_cast<size_t>(B) * H);
        matmul_nt(dn, params_.at("head.nsp.w").data(), dcls.data(), B, 2, H);
        for (int b = 0; b < B; ++b) {
          T* dst = dh_final.data() + static_cast<int64_t>(b) * S * H;
          const T* src = dcls.data() + static_cast<int64_t>(b) * H;
          for (int h = 0; h < H; ++h) dst[h] += src[h];
        }
      }
      break;
    }
    case HeadKind::token_classify: {
      const int K = head_.num_classes;
      const T* dc = loss.d_cls_logits.data();
      matmul_tn(cache.h_final.data(), dc, grads.at("head.cls.w").data(), BS, H, K);
      bias_grad(dc, grads.at("head.cls.b").data(), BS, K);
      matmul_nt(dc, params_.at("head.cls.w").data(), dh_final.data(), BS, K, H, /*acc=*/true);
      break;
    }
    case HeadKind::seq_classify: {
      const int K = head_.num_classes;
      const T* dc = loss.d_cls_logits.data();
      std::vector<T> cls_rows(static_cast<size_t>(B) * H);
      for (int b = 0; b < B; ++b)
        std::memcpy(cls_rows.data() + static_cast<int64_t>(b) * H,
                    cache.h_final.data() + static_cast<int64_t>(b) * S * H,
                    sizeof(T) * static_cast<size_t>(H));
      matmul_tn(cls_rows.data(), dc, grads.at("head.cls.w").data(), B, H, K);
      bias_grad(dc, grads.at("head.cls.b").data(), B, K);
      std::vector<T> dcls(static_cast<size_t>(B) * H);
      matmul_nt(dc, params_.at("head.cls.w").data(), dcls.data(), B, K, H);
      for (int b = 0; b < B; ++b) {
        T* dst = dh_final.data() + static_cast<int64_t>(b) * S * H;
        const T* src = dcls.data() + static_cast<int64_t>(b) * H;
        for (int h = 0; h < H; ++h) dst[h] += src[h];
      }
      break;
    }
  }

  std::vector<T> dx = std::move(dh_final);

  for (int l = config_.layers - 1; l >= 0; --l) {
    const LayerCache<T>& lc = cache.layers[static_cast<size_t>(l)];
    std::string p = "encoder." + std::to_string(l) + ".";

    // LN after the feed-forward block.
    std::vector<T> d_res2(static_cast<size_t>(BS) * H);
    layernorm_backward(dx.data(), lc.res2.data(), params_.at(p + "ff.ln.gain").data(),
                       lc.ln2_mean.data(), lc.ln2_rstd.data(), d_res2.data(),
                       grads.at(p + "ff.ln.gain").data(), grads.at(p + "ff.ln.bias").data(),
                       BS, H);

    std::vector<T> d_x_mid = d_res2;  // residual branch
    std::vector<T> d_ff_out = std::move(d_res2);
    dropout_backward(d_ff_out, lc.ff_drop, config_.dropout);

    std::vector<T> d_ff_act(static_cast<size_t>(BS) * F);
    matmul_nt(d_ff_out.data(), params_.at(p + "ff.out.w").data(), d_ff_act.data(), BS, H, F);
    matmul_tn(lc.ff_act.data(), d_ff_out.data(), grads.at(p + "ff.out.w").data(), BS, F, H);
    bias_grad(d_ff_out.data(), grads.at(p + "ff.out.b").data(), BS, H);

#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < static_cast<int64_t>(d_ff_act.size()); ++i)
      d_ff_act[static_cast<size_t>(i)] *= gelu_grad(lc.ff_pre[static_cast<size_t>(i)]);

    matmul_nt(d_ff_act.data(), params_.at(p + "ff.in.w").data(), d_x_mid.data(), BS, F, H,
              /*acc=*/true);
    matmul_tn(lc.x_mid.data(), d_ff_act.data(), grads.at(p + "ff.in.w").data(), BS, H, F);
    bias_grad(d_ff_act.data(), grads.at(p + "ff.in.b").data(), BS, F);

    // LN after attention.
    std::vector<T> d_res1(static_cast<size_t>(BS) * H);
    layernorm_backward(d_x_mid.data(), lc.res1.data(), params_.at(p + "attn.ln.gain").data(),
                       lc.ln1_mean.data(), lc.ln1_rstd.data(), d_res1.data(),
                       grads.at(p + "attn.ln.gain").data(), grads.at(p + "attn.ln.bias").data(),
                       BS, H);

    std::vector<T> d_x_in = d_res1;  // residual branch
    std::vector<T> d_attn_out = std::move(d_res1);
    dropout_backward(d_attn_out, lc.out_drop, config_.dropout);

    std::vector<T> d_ctx(static_cast<size_t>(BS) * H);
    matmul_nt(d_attn_out.data(), params_.at(p + "attn.out.w").data(), d_ctx.data(), BS, H, H);
    matmul_tn(lc.ctx.data(), d_attn_out.data(), grads.at(p + "attn.out.w").data(), BS, H, H);
    bias_grad(d_attn_out.data(), grads.at(p + "attn.out.b").data(), BS, H);

    std::vector<T> dq(static_cast<size_t>(BS) * H, T(0));
    std::vector<T> dk(static_cast<size_t>(BS) * H, T(0));
    std::vector<T> dv(static_cast<size_t>(BS) * H, T(0));
    const bool drop_on = !lc.attn_drop.empty();
    const T attn_scale = drop_on ? T(1) / (T(1) - static_cast<T>(config_.dropout)) : T(1);

#pragma omp parallel for schedule(static)
    for (int ba = 0; ba < B * A; ++ba) {
      int b = ba / A, a = ba % A;
      std::vector<T> dprobs(static_cast<size_t>(S));
      for (int s = 0; s < S; ++s) {
        const T* prow = lc.probs.data() + ((static_cast<int64_t>(ba)) * S + s) * S;
        const uint8_t* drow =
            drop_on ? lc.attn_drop.data() + ((static_cast<int64_t>(ba)) * S + s) * S : nullptr;
        const T* dcrow = d_ctx.data() + (static_cast<int64_t>(b) * S + s) * H + a * dh;

        // Grad wrt dropped probabilities, plus dv accumulation.
        for (int t = 0; t < S; ++t) {
          const T* vrow = lc.v.data() + (static_cast<int64_t>(b) * S + t) * H + a * dh;
          T g = T(0);
          for (int d = 0; d < dh; ++d) g += dcrow[d] * vrow[d];
          T w = prow[t];
          if (drop_on) w = drow[t] ? w * attn_scale : T(0);
          if (w != T(0)) {
            T* dvrow = dv.data() + (static_cast<int64_t>(b) * S + t) * H + a * dh;
            for (int d = 0; d < dh; ++d) dvrow[d] += w * dcrow[d];
          }
          // Through dropout back to raw probabilities.
          dprobs[static_cast<size_t>(t)] = drop_on ? (drow[t] ? g * attn_scale : T(0)) : g;
        }

        // Softmax backward; masked keys carry prob 0 and drop out naturally.
        double inner = 0;
        for (int t = 0; t < S; ++t)
          inner += static_cast<double>(prow[t]) * static_cast<double>(dprobs[static_cast<size_t>(t)]);
        T* dqrow = dq.data() + (static_cast<int64_t>(b) * S + s) * H + a * dh;
        const T* qrow = lc.q.data() + (static_cast<int64_t>(b) * S + s) * H + a * dh;
        for (int t = 0; t < S; ++t) {
          T ds = static_cast<T>(static_cast<double>(prow[t]) *
                                (static_cast<double>(dprobs[static_cast<size_t>(t)]) - inner));
          if (ds == T(0)) continue;
          ds *= inv_sqrt_dh;
          const T* krow = lc.k.data() + (static_cast<int64_t>(b) * S + t) * H + a * dh;
          T* dkrow = dk.data() + (static_cast<int64_t>(b) * S + t) * H + a * dh;
          for (int d = 0; d < dh; ++d) {
            dqrow[d] += ds * krow[d];
            dkrow[d] += ds * qrow[d];
          }
        }
      }
    }

    matmul_tn(lc.x_in.data(), dq.data(), grads.at(p + "attn.q.w").data(), BS, H, H);
    bias_grad(dq.data(), grads.at(p + "attn.q.b").data(), BS, H);
    matmul_tn(lc.x_in.data(), dk.data(), grads.at(p + "attn.k.w").data(), BS, H, H);
    bias_grad(dk.data(), grads.at(p + "attn.k.b").data(), BS, H);
    matmul_tn(lc.x_in.data(), dv.data(), grads.at(p + "attn.v.w").data(), BS, H, H);
    bias_grad(dv.data(), grads.at(p + "attn.v.b").data(), BS, H);

    matmul_nt(dq.data(), params_.at(p + "attn.q.w").data(), d_x_in.data(), BS, H, H, true);
    matmul_nt(dk.data(), params_.at(p + "attn.k.w").data(), d_x_in.data(), BS, H, H, true);
    matmul_nt(dv.data(), params_.at(p + "attn.v.w").data(), d_x_in.data(), BS, H, H, true);

    dx = std::move(d_x_in);
  }

  // Embedding dropout + LN.
  dropout_backward(dx, cache.emb_drop, config_.dropout);
  std::vector<T> d_emb_sum(static_cast<size_t>(BS) * H);
  layernorm_backward(dx.data(), cache.emb_sum.data(), params_.at("embeddings.ln.gain").data(),
                     cache.emb_mean.data(), cache.emb_rstd.data(), d_emb_sum.data(),
                     grads.at("embeddings.ln.gain").data(),
                     grads.at("embeddings.ln.bias").data(), BS, H);

  T* d_tok = grads.at("embeddings.token").data();
  T* d_pos = grads.at("embeddings.position").data();
  T* d_seg = grads.at("embeddings.segment").data();
#pragma omp parallel for schedule(static)
  for (int h = 0; h < H; ++h) {
    for (int i = 0; i < BS; ++i) {
      T g = d_emb_sum[static_cast<int64_t>(i) * H + h];
      d_tok[static_cast<int64_t>(batch.ids[i]) * H + h] += g;
      d_pos[static_cast<int64_t>(i % S) * H + h] += g;
      d_seg[static_cast<int64_t>(batch.segment_ids[i]) * H + h] += g;
    }
  }

  return grads;
}

template class EncoderModel<float>;
template class EncoderModel<double>;

template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr,
               const AdamConfig& config) {
  if (params.arrays.size() != grads.arrays.size())
    throw DataError("adam_step: parameter/gradient mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

  for (size_t ai = 0; ai < params.arrays.size(); ++ai) {
    Tensor<T>& theta = params.arrays[ai];
    const Tensor<T>& g = grads.arrays[ai];
    if (g.name != theta.name || g.v.size() != theta.v.size())
      throw DataError("adam_step: array mismatch at " + theta.name);
    for (const T gv : g.v) {
      if (!std::isfinite(static_cast<double>(gv)))
        throw NumericError("non-finite gradient in array '" + theta.name + "'");
    }
    Tensor<T>& m = state.m.arrays[ai];
    Tensor<T>& v = state.v.arrays[ai];
    const bool decay_this = config.weight_decay > 0 && !is_no_init_array(theta.name) &&
                            !is_one_init_array(theta.name);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < static_cast<int64_t>(theta.v.size()); ++i) {
      size_t idx = static_cast<size_t>(i);
      double gd = static_cast<double>(g.v[idx]);
      double md = config.beta1 * static_cast<double>(m.v[idx]) + (1.0 - config.beta1) * gd;
      double vd = config.beta2 * static_cast<double>(v.v[idx]) + (1.0 - config.beta2) * gd * gd;
      m.v[idx] = static_cast<T>(md);
      v.v[idx] = static_cast<T>(vd);
      double update = (md / bc1) / (std::sqrt(vd / bc2) + config.eps);
      if (decay_this) update += config.weight_decay * static_cast<double>(theta.v[idx]);
      theta.v[idx] = static_cast<T>(static_cast<double>(theta.v[idx]) - lr * update);
    }
  }
}

template void adam_step<float>(ParamSet<float>&, const ParamSet<float>&, AdamState<float>&,
                               double, const AdamConfig&);
template void adam_step<double>(ParamSet<double>&, const ParamSet<double>&, AdamState<double>&,
                                double, const AdamConfig&);

}  // namespace notebert
