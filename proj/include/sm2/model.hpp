#pragma once

// Transformer-Transducer: a chunk-masked streaming Transformer encoder shared
// by one or more output branches. Each branch owns a recurrent prediction
// network and a feedforward joint network for one target language.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sm2/attention_mask.hpp"
#include "sm2/autodiff.hpp"
#include "sm2/tensor.hpp"

namespace sm2 {

using TokenId = std::uint32_t;
inline constexpr TokenId kBlank = 0;

struct ModelConfig {
  std::size_t feature_dim = 16;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  std::size_t encoder_layers = 4;
  std::size_t predictor_layers = 1;
  std::size_t predictor_dim = 64;
  std::size_t joint_dim = 64;
  // Training-time streaming mask; num_layers is kept equal to encoder_layers.
  ChunkMaskSpec mask{4, 1, 4};
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Acoustic input x_1..x_T (T x D). Carries no language identity: the model
/// only ever sees frames.
class FeatureSequence {
 public:
  FeatureSequence() = default;
  explicit FeatureSequence(Tensor frames);

  std::size_t frames() const { return frames_ == 0 ? 0 : data_.rows(); }
  std::size_t dim() const { return frames_ == 0 ? 0 : data_.cols(); }
  bool empty() const { return frames_ == 0; }
  const Tensor& tensor() const { return data_; }
  std::span<const double> frame(std::size_t t) const;
  /// Frames [begin, end); empty when begin == end.
  FeatureSequence slice(std::size_t begin, std::size_t end) const;

 private:
  Tensor data_;
  std::size_t frames_ = 0;
};

/// Consecutive frames delivered to a streaming encoder.
struct FeatureChunk {
  std::size_t first_frame = 0;
  FeatureSequence frames;
};

/// Splits features into mask-aligned chunks of spec.chunk_size frames.
std::vector<FeatureChunk> split_into_chunks(const FeatureSequence& features,
                                            const ChunkMaskSpec& spec);

/// Encoder rows for frames [first_frame, first_frame + frames).
struct EncoderOutput {
  std::size_t first_frame = 0;
  std::size_t frames = 0;
  Tensor hidden;  // frames x H; unset when frames == 0
};

/// Per-utterance streaming encoder state: layer-wise key/value caches for the
/// chunks later frames may still attend to.
struct StreamState {
  struct LayerCache {
    std::size_t first_frame = 0;
    std::size_t frames = 0;
    std::vector<double> keys;    // cached_frames x H
    std::vector<double> values;  // cached_frames x H
  };
  ChunkMaskSpec spec;
  std::size_t frames_consumed = 0;
  bool finished = false;  // a short (final) chunk has been consumed
  std::vector<LayerCache> layers;

  std::size_t cached_frames(std::size_t layer) const;
};

struct PredictorState {
  std::vector<std::vector<double>> hidden;  // one vector per layer
  TokenId last_token = 0;
  bool started = false;
};

struct PredictorOutput {
  std::vector<double> h_pre;
  PredictorState state;
};

using BranchId = std::size_t;

struct Branch {
  BranchId id = 0;
  std::string target_lang;
  std::size_t vocab_size = 0;  // real tokens are 1..vocab_size, 0 is blank
  std::string prefix() const { return "branch/" + target_lang + "/"; }
  std::size_t output_dim() const { return vocab_size + 1; }
  /// Start-of-sequence input id for the prediction network.
  TokenId sos() const { return static_cast<TokenId>(vocab_size + 1); }
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  /// Registers a fresh branch; the encoder and other branches are untouched.
  BranchId add_branch(const std::string& target_lang, std::size_t vocab_size,
                      std::uint64_t seed);
  const Branch& branch(BranchId id) const;
  const Branch& branch(const std::string& target_lang) const;
  bool has_branch(const std::string& target_lang) const;
  const std::vector<Branch>& branches() const { return branches_; }

  void freeze_encoder();
  bool encoder_frozen() const;
  /// Marks every parameter of a branch (non-)trainable.
  void set_branch_trainable(BranchId id, bool trainable);

  std::size_t encoder_param_count() const;
  std::size_t branch_param_count(BranchId id) const;
  std::size_t param_count() const { return params_.numel(); }

  // --- Differentiable forward pieces -------------------------------------

  /// Full-utterance encoder output (T x H) under the chunk mask.
  ad::Var encode(ad::Graph& g, const FeatureSequence& features,
                 const ChunkMaskSpec& spec) const;
  /// Prediction-network outputs for inputs [sos, y_1 .. y_U]: (U+1) x P.
  ad::Var predict_sequence(ad::Graph& g, BranchId id,
                           std::span<const TokenId> targets) const;
  /// Joint logits for every (t, u) pair, row t * (U+1) + u, width |Y|+1.
  ad::Var joint_lattice(ad::Graph& g, BranchId id, ad::Var enc,
                        ad::Var pred) const;

  // --- Inference ------------------------------------------------------------

  EncoderOutput encode(const FeatureSequence& features,
                       const ChunkMaskSpec& spec) const;
  StreamState start_stream(const ChunkMaskSpec& spec) const;
  /// Encodes the next chunk. Chunks must start where the previous one ended,
  /// be at most one chunk long and (except for the last) exactly one chunk.
  EncoderOutput encode_incremental(StreamState& state,
                                   const FeatureChunk& chunk) const;

  PredictorState initial_predictor_state(BranchId id) const;
  /// One recurrent step on `token` (a real token or the branch's sos()).
  PredictorOutput predict(BranchId id, TokenId token,
                          const PredictorState& state) const;
  /// Logits over blank + vocabulary for one (h_enc, h_pre) pair.
  std::vector<double> joint(BranchId id, std::span<const double> h_enc,
                            std::span<const double> h_pre) const;

  // --- Checkpoints ------------------------------------------------------------

  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static Model load(std::istream& in);
  static Model load(const std::string& path);

 private:
  struct LayerIds {
    std::size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  void init_encoder();
  std::size_t add_param(const std::string& name, Shape shape,
                        std::mt19937_64& rng, bool xavier);
  void check_features(const FeatureSequence& features) const;
  ad::Var input_projection(ad::Graph& g, const FeatureSequence& features,
                           std::size_t first_frame) const;
  ad::Var encoder_layer(ad::Graph& g, std::size_t layer, ad::Var x,
                        std::size_t first_query, ad::Var keys_cache,
                        ad::Var values_cache, std::size_t first_key,
                        const ChunkMaskSpec& spec, ad::Var* keys_out,
                        ad::Var* values_out) const;
  ad::Var final_norm(ad::Graph& g, ad::Var x) const;
  ad::Var predictor_step(ad::Var x_proj, ad::Var uh, ad::Var h) const;

  ModelConfig config_;
  ad::ParamStore params_;
  std::vector<Branch> branches_;
  std::vector<LayerIds> layer_ids_;
  std::size_t in_w_ = 0, in_b_ = 0, out_g_ = 0, out_b_ = 0;
};

/// Sinusoidal absolute position encoding for frame t, width `dim`.
std::vector<double> position_encoding(std::size_t t, std::size_t dim);

}  // namespace sm2
