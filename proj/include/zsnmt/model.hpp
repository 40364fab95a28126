#pragma once

#include <map>
#include <string>
#include <vector>

#include "zsnmt/autodiff.hpp"

namespace zsnmt {

// Model-side vocabulary: specials first, then every language's surface block.
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kNumSpecials = 3;

inline int surface_to_model(int surface_token) { return surface_token + kNumSpecials; }
inline int model_to_surface(int model_id) { return model_id - kNumSpecials; }

enum class EncoderVariant { baseline, mean_pool, attn_pool };
enum class Side { source, target };

std::string to_string(EncoderVariant v);
EncoderVariant encoder_variant_from(const std::string& s);

struct ModelConfig {
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int d_model = 64;
  int d_inner = 256;
  int n_heads = 4;
  int n_languages = 5;
  int vocab_size = 0;  // kNumSpecials + n_languages * base_vocab
  int max_len = 32;
  EncoderVariant encoder_variant = EncoderVariant::baseline;
  int n_pooled_states = 4;
  float dropout_residual = 0.2f;
  float dropout_word = 0.1f;
  // Cross-attention contexts are captured after head concatenation; this flag
  // moves the capture point after the output projection instead.
  bool attn_context_post_projection = false;
  bool lang_embed_encoder = true;
  bool lang_embed_decoder = true;
  bool share_embed_output = true;

  int d_head() const { return d_model / n_heads; }
  void validate() const;
};

// Named parameter tensors. std::map keeps iteration (and thus serialization
// and update order) deterministic.
struct Parameters {
  std::map<std::string, Tensor> map;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return map.count(name) != 0; }
  void zero_grads();
  size_t total_scalars() const;
};

// The name -> shape set is a pure function of the config.
std::map<std::string, std::vector<size_t>> parameter_shapes(const ModelConfig& config);
Parameters init_parameters(const ModelConfig& config, uint64_t seed);

bool is_decoder_param(const std::string& name);  // dec.* and the untied output projection
bool is_encoder_param(const std::string& name);  // enc.* and pool.*
bool is_shared_param(const std::string& name);   // embeddings used by both sides

// View of the parameter map where everything the decoder consumes (decoder
// stack, embeddings, output projection) no longer propagates gradients.
// stop_grad shares the value buffers; frozen_copy deep-copies them, matching
// the synchronized-frozen-decoder formulation. Both leave encoder parameters
// live.
enum class DetachMode { stop_grad, frozen_copy };
Parameters decoder_frozen_view(const Parameters& params, DetachMode mode);

// Dropout context for training-mode forwards. A null rng means evaluation
// mode: fully deterministic, no dropout applied.
struct ForwardOpts {
  RngStream* residual_rng = nullptr;
  float p_residual = 0.0f;
  float p_word = 0.0f;
  uint64_t word_seed = 0;
  uint64_t step = 0;
};

struct EncoderOutput {
  Tensor states;               // [T_enc x H]; T_enc == n_pooled_states for pooling variants
  std::vector<uint8_t> valid;  // per-state validity
};

// Full trace of one teacher-forced decoder run.
struct DecodePass {
  Tensor logits;                      // [T_dec x V]
  std::vector<Tensor> attn_contexts;  // n_layers_dec tensors of [T_dec x H]
  Tensor dec_states;                  // [T_dec x H], after the final layer norm
};

Tensor embed_inputs(Tape& tape, const std::vector<int>& tokens, int language, Side side,
                    const Parameters& params, const ModelConfig& config);

// Zeroes whole embedding rows with probability p, scales survivors by
// 1/(1-p). Deterministic in (seed, step).
Tensor apply_word_dropout(Tape& tape, const Tensor& embedded, float p, uint64_t seed,
                          uint64_t step);

EncoderOutput encode(Tape& tape, const std::vector<int>& tokens, int language,
                     const Parameters& params, const ModelConfig& config,
                     const std::vector<uint8_t>& valid = {}, const ForwardOpts& opts = {});

DecodePass decode_teacher_forced(Tape& tape, const std::vector<int>& prefix_tokens,
                                 int tgt_language, const EncoderOutput& enc,
                                 const Parameters& params, const ModelConfig& config,
                                 const std::vector<uint8_t>& prefix_valid = {},
                                 const ForwardOpts& opts = {},
                                 std::vector<Tensor>* cross_attn_weights = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints: header (format version, config digest, schedule step) then one
// record per parameter (name, shape, little-endian float32 payload).
// Round-trips bit-exactly.
// ---------------------------------------------------------------------------

struct Checkpoint {
  Parameters params;
  std::string config_digest;
  uint64_t schedule_step = 0;
};

void save_checkpoint(const std::string& path, const Parameters& params,
                     const std::string& config_digest, uint64_t schedule_step);
Checkpoint load_checkpoint(const std::string& path);
// Loads and verifies the parameter name/shape set against the config.
Checkpoint load_checkpoint(const std::string& path, const ModelConfig& config);

bool params_bitwise_equal(const Parameters& a, const Parameters& b);

}  // namespace zsnmt
