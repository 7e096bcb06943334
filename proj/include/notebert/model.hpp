#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "notebert/rng.hpp"
#include "notebert/tensor.hpp"

namespace notebert {

struct ModelConfig {
  int layers = 4;
  int hidden = 128;
  int heads = 4;
  int ff_dim = 512;
  int vocab_size = 8000;
  int max_positions = 256;
  int type_vocab = 2;
  float dropout = 0.1f;
  // Activation is the tanh-approximate GELU; kept explicit so serialized
  // checkpoints are self-describing.
  std::string activation = "gelu_tanh";

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& json_text);
  bool operator==(const ModelConfig&) const = default;
};

enum class HeadKind { mlm_nsp, token_classify, seq_classify };

std::string head_kind_name(HeadKind k);
HeadKind head_kind_from_name(const std::string& name);

struct HeadSpec {
  HeadKind kind = HeadKind::mlm_nsp;
  int num_classes = 0;   // K for the classify heads, ignored for mlm_nsp
  bool tied_mlm = true;  // MLM projection shares the token embedding table

  bool operator==(const HeadSpec&) const = default;
};

/// One padded batch plus whichever targets the active head consumes.
struct Batch {
  int batch = 0;
  int seq_len = 0;
  std::vector<int32_t> ids;           // batch*seq_len
  std::vector<int32_t> segment_ids;   // batch*seq_len
  std::vector<int8_t> attention_mask; // batch*seq_len, 1 = real token

  std::vector<int32_t> mlm_positions; // flattened b*seq_len+s, grouped by example
  std::vector<int32_t> mlm_labels;    // parallel to mlm_positions
  std::vector<int32_t> nsp_labels;    // batch; 0 = actual next, 1 = random
  std::vector<int32_t> token_labels;  // batch*seq_len; -1 = ignore
  std::vector<int32_t> seq_labels;    // batch
};

template <typename T>
struct LayerCache {
  std::vector<T> x_in;        // layer input (B,S,H)
  std::vector<T> q, k, v;     // (B,S,H)
  std::vector<T> probs;       // raw attention probabilities (B,A,S,S)
  std::vector<uint8_t> attn_drop;
  std::vector<T> ctx;         // (B,S,H) heads re-concatenated
  std::vector<uint8_t> out_drop;
  std::vector<T> res1;        // x_in + dropped attention output, pre-LN
  std::vector<T> ln1_mean, ln1_rstd;
  std::vector<T> x_mid;       // post first LN (B,S,H)
  std::vector<T> ff_pre;      // (B,S,F) before activation
  std::vector<T> ff_act;      // (B,S,F) after GELU
  std::vector<uint8_t> ff_drop;
  std::vector<T> res2;        // x_mid + dropped ff output, pre-LN
  std::vector<T> ln2_mean, ln2_rstd;
};

template <typename T>
struct ForwardCache {
  bool train_mode = false;
  std::vector<T> emb_sum;  // (B,S,H) pre-LN embedding sum
  std::vector<T> emb_mean, emb_rstd;
  std::vector<uint8_t> emb_drop;
  std::vector<T> x0;  // post embedding LN+dropout
  std::vector<LayerCache<T>> layers;
  std::vector<T> h_final;    // (B,S,H)
  std::vector<T> mlm_gather; // (M,H) hidden rows at masked positions
};

template <typename T>
struct ForwardResult {
  std::vector<T> mlm_logits;  // (M, V) rows follow batch.mlm_positions
  std::vector<T> nsp_logits;  // (B, 2)
  std::vector<T> cls_logits;  // token: (B*S, K); seq: (B, K)
  ForwardCache<T> cache;      // populated when train_mode
};

template <typename T>
struct LossResult {
  double loss = 0;      // what backward differentiates
  double mlm_loss = 0;  // components, already included in loss
  double nsp_loss = 0;
  std::vector<T> d_mlm_logits;
  std::vector<T> d_nsp_logits;
  std::vector<T> d_cls_logits;
};

/// Transformer encoder with interchangeable heads. The scalar type is a
/// template parameter: float for training, double for the finite-difference
/// gradient harness.
template <typename T>
class EncoderModel {
 public:
  EncoderModel(ModelConfig config, HeadSpec head);

  void init_params(Rng& rng);  // truncated normal sigma=0.02, zero biases

  const ModelConfig& config() const { return config_; }
  const HeadSpec& head() const { return head_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Optional test hook applied to the final hidden states before heads run.
  using FinalHiddenHook = std::function<void(T* h, int batch, int seq_len, int hidden)>;

  ForwardResult<T> forward(const Batch& batch, bool train_mode, Rng* dropout_rng,
                           const FinalHiddenHook& hook = nullptr) const;

  LossResult<T> loss(const ForwardResult<T>& fwd, const Batch& batch,
                     bool include_nsp = true) const;

  ParamSet<T> backward(const Batch& batch, const ForwardResult<T>& fwd,
                       const LossResult<T>& loss) const;

 private:
  ModelConfig config_;
  HeadSpec head_;
  ParamSet<T> params_;
};

extern template class EncoderModel<float>;
extern template class EncoderModel<double>;

/// Canonical parameter list (names + shapes) for a config/head pair; also the
/// checkpoint manifest order.
std::vector<std::pair<std::string, std::vector<int>>> parameter_manifest(
    const ModelConfig& config, const HeadSpec& head);

template <typename T>
ParamSet<T> init_parameters(const ModelConfig& config, const HeadSpec& head, Rng& rng);

extern template ParamSet<float> init_parameters<float>(const ModelConfig&, const HeadSpec&, Rng&);
extern template ParamSet<double> init_parameters<double>(const ModelConfig&, const HeadSpec&,
                                                         Rng&);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.0;  // decoupled; skipped for biases and LN arrays
};

template <typename T>
struct AdamState {
  ParamSet<T> m, v;
  int64_t step = 0;

  static AdamState<T> for_params(const ParamSet<T>& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

/// One bias-corrected Adam update. Throws NumericError naming the offending
/// array when a gradient is non-finite.
template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr,
               const AdamConfig& config);

extern template void adam_step<float>(ParamSet<float>&, const ParamSet<float>&,
                                      AdamState<float>&, double, const AdamConfig&);
extern template void adam_step<double>(ParamSet<double>&, const ParamSet<double>&,
                                       AdamState<double>&, double, const AdamConfig&);

// ---------------------------------------------------------------------------
// Checkpoints: magic "CLDP", u32 version, u64 header length, JSON header
// (config + head + array manifest with shapes/offsets), then raw
// little-endian f32 payload.

struct Checkpoint {
  ModelConfig config;
  HeadSpec head;
  std::string vocab_fingerprint;
  std::string lineage;  // fingerprint of the base checkpoint file, or empty
  int64_t step = 0;
  ParamSet<float> params;
  std::optional<AdamState<float>> optimizer;
  std::optional<uint64_t> rng_state;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Load for fine-tuning: body arrays are copied from the stored checkpoint;
/// when the stored head differs from `head`, head arrays are freshly drawn
/// (truncated normal sigma=0.02, zero bias) from `init_rng`.
ParamSet<float> params_for_head(const Checkpoint& ckpt, const HeadSpec& head, Rng& init_rng);

}  // namespace notebert
