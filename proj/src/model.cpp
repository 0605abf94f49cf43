#include "sm2/model.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

namespace sm2 {

using ad::Graph;
using ad::Var;

void ModelConfig::validate() const {
  if (feature_dim == 0 || hidden == 0 || heads == 0 || ff_dim == 0 ||
      encoder_layers == 0 || predictor_layers == 0 || predictor_dim == 0 ||
      joint_dim == 0) {
    throw ContractError("model config: all dimensions must be positive");
  }
  if (hidden % heads != 0) {
    throw ContractError("model config: hidden " + std::to_string(hidden) +
                        " not divisible by " + std::to_string(heads) +
                        " heads");
  }
  mask.validate();
}

// ---------------------------------------------------------------------------

FeatureSequence::FeatureSequence(Tensor frames)
    : data_(std::move(frames)), frames_(data_.rows()) {
  if (data_.rank() != 2) {
    throw DimensionError("features must be T x D, got " +
                         shape_to_string(data_.shape()));
  }
}

std::span<const double> FeatureSequence::frame(std::size_t t) const {
  if (t >= frames()) throw ContractError("frame index out of range");
  return data_.values().subspan(t * dim(), dim());
}

FeatureSequence FeatureSequence::slice(std::size_t begin,
                                       std::size_t end) const {
  if (begin > end || end > frames()) {
    throw ContractError("feature slice out of range");
  }
  if (begin == end) return {};
  const std::size_t d = dim();
  std::vector<double> vals(data_.values().begin() + begin * d,
                           data_.values().begin() + end * d);
  return FeatureSequence(Tensor({end - begin, d}, std::move(vals)));
}

std::vector<FeatureChunk> split_into_chunks(const FeatureSequence& features,
                                            const ChunkMaskSpec& spec) {
  spec.validate();
  std::vector<FeatureChunk> chunks;
  for (std::size_t s = 0; s < features.frames(); s += spec.chunk_size) {
    const std::size_t e = std::min(s + spec.chunk_size, features.frames());
    chunks.push_back({s, features.slice(s, e)});
  }
  return chunks;
}

std::size_t StreamState::cached_frames(std::size_t layer) const {
  return layer < layers.size() ? layers[layer].frames : 0;
}

std::vector<double> position_encoding(std::size_t t, std::size_t dim) {
  std::vector<double> pe(dim);
  for (std::size_t i = 0; i < dim; i += 2) {
    const double rate =
        std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
    pe[i] = std::sin(static_cast<double>(t) * rate);
    if (i + 1 < dim) pe[i + 1] = std::cos(static_cast<double>(t) * rate);
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Construction

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.mask.num_layers = config_.encoder_layers;
  config_.validate();
  init_encoder();
}

std::size_t Model::add_param(const std::string& name, Shape shape,
                             std::mt19937_64& rng, bool xavier) {
  Tensor t(shape);
  if (xavier) {
    const double fan_in = static_cast<double>(t.rows());
    const double fan_out = static_cast<double>(t.cols());
    const double s = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    for (auto& v : t.values()) v = dist(rng);
  }
  return params_.add(name, std::move(t));
}

void Model::init_encoder() {
  std::mt19937_64 rng(config_.seed);
  const std::size_t h = config_.hidden, f = config_.ff_dim;
  in_w_ = add_param("encoder/input/w", {config_.feature_dim, h}, rng, true);
  in_b_ = add_param("encoder/input/b", {h}, rng, false);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = "encoder/layer" + std::to_string(l) + "/";
    LayerIds ids{};
    ids.ln1_g = add_param(p + "ln1/gain", {h}, rng, false);
    ids.ln1_b = add_param(p + "ln1/bias", {h}, rng, false);
    ids.wqkv = add_param(p + "attn/wqkv", {h, 3 * h}, rng, true);
    ids.bqkv = add_param(p + "attn/bqkv", {3 * h}, rng, false);
    ids.wo = add_param(p + "attn/wo", {h, h}, rng, true);
    ids.bo = add_param(p + "attn/bo", {h}, rng, false);
    ids.ln2_g = add_param(p + "ln2/gain", {h}, rng, false);
    ids.ln2_b = add_param(p + "ln2/bias", {h}, rng, false);
    ids.w1 = add_param(p + "ff/w1", {h, f}, rng, true);
    ids.b1 = add_param(p + "ff/b1", {f}, rng, false);
    ids.w2 = add_param(p + "ff/w2", {f, h}, rng, true);
    ids.b2 = add_param(p + "ff/b2", {h}, rng, false);
    for (auto gain : {ids.ln1_g, ids.ln2_g}) {
      auto& t = params_.at(gain).tensor;
      std::fill(t.values().begin(), t.values().end(), 1.0);
    }
    layer_ids_.push_back(ids);
  }
  out_g_ = add_param("encoder/final_ln/gain", {h}, rng, false);
  out_b_ = add_param("encoder/final_ln/bias", {h}, rng, false);
  auto& g = params_.at(out_g_).tensor;
  std::fill(g.values().begin(), g.values().end(), 1.0);
}

BranchId Model::add_branch(const std::string& target_lang,
                           std::size_t vocab_size, std::uint64_t seed) {
  if (target_lang.empty()) throw ContractError("branch name must be nonempty");
  if (has_branch(target_lang)) {
    throw ContractError("branch for target language '" + target_lang +
                        "' already exists");
  }
  if (vocab_size == 0) throw ContractError("branch vocabulary is empty");
  Branch b;
  b.id = branches_.size();
  b.target_lang = target_lang;
  b.vocab_size = vocab_size;
  std::mt19937_64 rng(seed);
  const std::string p = b.prefix();
  const std::size_t pd = config_.predictor_dim, j = config_.joint_dim;
  add_param(p + "pred/embed", {vocab_size + 2, pd}, rng, true);
  for (std::size_t l = 0; l < config_.predictor_layers; ++l) {
    const std::string lp = p + "pred/layer" + std::to_string(l) + "/";
    add_param(lp + "wx", {pd, 3 * pd}, rng, true);
    add_param(lp + "uh", {pd, 3 * pd}, rng, true);
    add_param(lp + "b", {3 * pd}, rng, false);
  }
  add_param(p + "joint/enc_w", {config_.hidden, j}, rng, true);
  add_param(p + "joint/pred_w", {pd, j}, rng, true);
  add_param(p + "joint/b", {j}, rng, false);
  add_param(p + "joint/out_w", {j, vocab_size + 1}, rng, true);
  add_param(p + "joint/out_b", {vocab_size + 1}, rng, false);
  branches_.push_back(b);
  return b.id;
}

const Branch& Model::branch(BranchId id) const {
  if (id >= branches_.size()) {
    throw ContractError("unknown branch id " + std::to_string(id));
  }
  return branches_[id];
}

const Branch& Model::branch(const std::string& target_lang) const {
  for (const auto& b : branches_) {
    if (b.target_lang == target_lang) return b;
  }
  throw ContractError("unknown branch '" + target_lang + "'");
}

bool Model::has_branch(const std::string& target_lang) const {
  return std::any_of(branches_.begin(), branches_.end(),
                     [&](const Branch& b) { return b.target_lang == target_lang; });
}

void Model::freeze_encoder() {
  for (auto& p : params_) {
    if (p.name.starts_with("encoder/")) p.trainable = false;
  }
}

bool Model::encoder_frozen() const {
  return !params_.at(in_w_).trainable;
}

void Model::set_branch_trainable(BranchId id, bool trainable) {
  const std::string prefix = branch(id).prefix();
  for (auto& p : params_) {
    if (p.name.starts_with(prefix)) p.trainable = trainable;
  }
}

std::size_t Model::encoder_param_count() const {
  return params_.numel_with_prefix("encoder/");
}

std::size_t Model::branch_param_count(BranchId id) const {
  return params_.numel_with_prefix(branch(id).prefix());
}

// ---------------------------------------------------------------------------
// Encoder

void Model::check_features(const FeatureSequence& features) const {
  if (!features.empty() && features.dim() != config_.feature_dim) {
    throw DimensionError("features have dim " +
                         std::to_string(features.dim()) + ", model expects " +
                         std::to_string(config_.feature_dim));
  }
}

Var Model::input_projection(Graph& g, const FeatureSequence& features,
                            std::size_t first_frame) const {
  const std::size_t n = features.frames(), h = config_.hidden;
  Tensor pos({n, h});
  for (std::size_t i = 0; i < n; ++i) {
    const auto pe = position_encoding(first_frame + i, h);
    std::copy(pe.begin(), pe.end(), &pos[i * h]);
  }
  Var x = g.constant(features.tensor());
  Var proj = ad::add_row(ad::matmul(x, g.param(params_, in_w_)),
                         g.param(params_, in_b_));
  return ad::add(proj, g.constant(std::move(pos)));
}

Var Model::encoder_layer(Graph& g, std::size_t layer, Var x,
                         std::size_t first_query, Var keys_cache,
                         Var values_cache, std::size_t first_key,
                         const ChunkMaskSpec& spec, Var* keys_out,
                         Var* values_out) const {
  const LayerIds& ids = layer_ids_[layer];
  const std::size_t h = config_.hidden, heads = config_.heads, dh = h / heads;
  const std::size_t nq = x.rows();
  auto p = [&](std::size_t i) { return g.param(params_, i); };

  Var normed = ad::layer_norm(x, p(ids.ln1_g), p(ids.ln1_b));
  Var qkv = ad::add_row(ad::matmul(normed, p(ids.wqkv)), p(ids.bqkv));
  Var q = ad::slice_cols(qkv, 0, h);
  Var k_new = ad::slice_cols(qkv, h, 2 * h);
  Var v_new = ad::slice_cols(qkv, 2 * h, 3 * h);
  if (keys_out) *keys_out = k_new;
  if (values_out) *values_out = v_new;

  Var keys = k_new, values = v_new;
  if (keys_cache.valid()) {
    const Var kparts[] = {keys_cache, k_new};
    const Var vparts[] = {values_cache, v_new};
    keys = ad::concat_rows(kparts);
    values = ad::concat_rows(vparts);
  }
  const std::size_t nk = keys.rows();
  auto mask = std::make_unique<bool[]>(nq * nk);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < nk; ++j) {
      mask[i * nk + j] = visible(first_query + i, first_key + j, spec);
    }
  }
  const std::span<const bool> mask_view(mask.get(), nq * nk);

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> contexts;
  contexts.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Var qh = ad::slice_cols(q, hd * dh, (hd + 1) * dh);
    Var kh = ad::slice_cols(keys, hd * dh, (hd + 1) * dh);
    Var vh = ad::slice_cols(values, hd * dh, (hd + 1) * dh);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    Var probs = ad::masked_softmax(scores, mask_view);
    contexts.push_back(ad::matmul(probs, vh));
  }
  Var ctx = heads == 1 ? contexts.front() : ad::concat_cols(contexts);
  Var attn = ad::add_row(ad::matmul(ctx, p(ids.wo)), p(ids.bo));
  x = ad::add(x, attn);

  Var normed2 = ad::layer_norm(x, p(ids.ln2_g), p(ids.ln2_b));
  Var hidden = ad::relu(ad::add_row(ad::matmul(normed2, p(ids.w1)), p(ids.b1)));
  Var ff = ad::add_row(ad::matmul(hidden, p(ids.w2)), p(ids.b2));
  return ad::add(x, ff);
}

Var Model::final_norm(Graph& g, Var x) const {
  return ad::layer_norm(x, g.param(params_, out_g_), g.param(params_, out_b_));
}

Var Model::encode(Graph& g, const FeatureSequence& features,
                  const ChunkMaskSpec& spec) const {
  check_features(features);
  spec.validate();
  if (features.empty()) throw ContractError("encode: empty feature sequence");
  Var x = input_projection(g, features, 0);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    x = encoder_layer(g, l, x, 0, Var{}, Var{}, 0, spec, nullptr, nullptr);
  }
  return final_norm(g, x);
}

EncoderOutput Model::encode(const FeatureSequence& features,
                            const ChunkMaskSpec& spec) const {
  Graph g;
  Var out = encode(g, features, spec);
  return {0, features.frames(), out.value()};
}

StreamState Model::start_stream(const ChunkMaskSpec& spec) const {
  spec.validate();
  StreamState s;
  s.spec = spec;
  s.layers.resize(config_.encoder_layers);
  return s;
}

EncoderOutput Model::encode_incremental(StreamState& state,
                                        const FeatureChunk& chunk) const {
  const ChunkMaskSpec& spec = state.spec;
  const std::size_t n = chunk.frames.frames();
  if (n == 0) return {state.frames_consumed, 0, {}};
  check_features(chunk.frames);
  if (state.finished) {
    throw ContractError("encode_incremental: stream already ended with a "
                        "partial chunk");
  }
  if (chunk.first_frame != state.frames_consumed) {
    throw ContractError("encode_incremental: chunk starts at frame " +
                        std::to_string(chunk.first_frame) + ", expected " +
                        std::to_string(state.frames_consumed));
  }
  if (n > spec.chunk_size) {
    throw ContractError("encode_incremental: chunk of " + std::to_string(n) +
                        " frames exceeds chunk size " +
                        std::to_string(spec.chunk_size));
  }

  const std::size_t h = config_.hidden;
  const std::size_t first = state.frames_consumed;
  const std::size_t last_chunk = chunk_index(first + n - 1, spec);
  // Frames at or after this index stay visible to the next chunk's queries.
  const std::size_t keep_chunk =
      last_chunk + 1 > spec.left_chunks ? last_chunk + 1 - spec.left_chunks : 0;
  const std::size_t keep_from = chunk_begin(keep_chunk, spec);

  Graph g;
  Var x = input_projection(g, chunk.frames, first);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    auto& cache = state.layers[l];
    const std::size_t cached = cache.frames;
    Var kc, vc;
    if (cached > 0) {
      kc = g.constant(Tensor({cached, h}, cache.keys));
      vc = g.constant(Tensor({cached, h}, cache.values));
    }
    Var k_new, v_new;
    x = encoder_layer(g, l, x, first, kc, vc,
                      cached > 0 ? cache.first_frame : first, spec, &k_new,
                      &v_new);

    // Rebuild the cache from [keep_from, first + n).
    std::vector<double> keys, values;
    const std::size_t start = cached > 0 ? cache.first_frame : first;
    for (std::size_t f = std::max(start, keep_from); f < first + n; ++f) {
      if (f < first) {
        const std::size_t r = f - start;
        keys.insert(keys.end(), cache.keys.begin() + r * h,
                    cache.keys.begin() + (r + 1) * h);
        values.insert(values.end(), cache.values.begin() + r * h,
                      cache.values.begin() + (r + 1) * h);
      } else {
        const std::size_t r = f - first;
        const auto kv = k_new.value().values();
        const auto vv = v_new.value().values();
        keys.insert(keys.end(), kv.begin() + r * h, kv.begin() + (r + 1) * h);
        values.insert(values.end(), vv.begin() + r * h,
                      vv.begin() + (r + 1) * h);
      }
    }
    cache.first_frame = std::max(start, keep_from);
    cache.frames = keys.size() / h;
    cache.keys = std::move(keys);
    cache.values = std::move(values);
  }
  Var out = final_norm(g, x);
  state.frames_consumed += n;
  if (n < spec.chunk_size) state.finished = true;
  return {first, n, out.value()};
}

// ---------------------------------------------------------------------------
// Prediction and joint networks

Var Model::predictor_step(Var x_proj, Var uh, Var h) const {
  const std::size_t pd = config_.predictor_dim;
  Var gh = ad::matmul(h, uh);
  Var z = ad::sigmoid(ad::add(ad::slice_cols(x_proj, 0, pd),
                              ad::slice_cols(gh, 0, pd)));
  Var r = ad::sigmoid(ad::add(ad::slice_cols(x_proj, pd, 2 * pd),
                              ad::slice_cols(gh, pd, 2 * pd)));
  Var cand = ad::tanh(ad::add(ad::slice_cols(x_proj, 2 * pd, 3 * pd),
                              ad::mul(r, ad::slice_cols(gh, 2 * pd, 3 * pd))));
  // h' = (1 - z) * cand + z * h
  return ad::add(cand, ad::mul(z, ad::sub(h, cand)));
}

Var Model::predict_sequence(Graph& g, BranchId id,
                            std::span<const TokenId> targets) const {
  const Branch& b = branch(id);
  const std::size_t pd = config_.predictor_dim;
  std::vector<std::size_t> inputs;
  inputs.reserve(targets.size() + 1);
  inputs.push_back(b.sos());
  for (TokenId t : targets) {
    if (t == kBlank || t > b.vocab_size) {
      throw ContractError("predict: token " + std::to_string(t) +
                          " is not a vocabulary token of branch '" +
                          b.target_lang + "'");
    }
    inputs.push_back(t);
  }
  Var x = ad::embedding(g.param(params_, b.prefix() + "pred/embed"), inputs);
  for (std::size_t l = 0; l < config_.predictor_layers; ++l) {
    const std::string lp = b.prefix() + "pred/layer" + std::to_string(l) + "/";
    Var x_proj = ad::add_row(ad::matmul(x, g.param(params_, lp + "wx")),
                             g.param(params_, lp + "b"));
    Var uh = g.param(params_, lp + "uh");
    Var h = g.constant(Tensor({1, pd}));
    std::vector<Var> outs;
    outs.reserve(inputs.size());
    for (std::size_t u = 0; u < inputs.size(); ++u) {
      h = predictor_step(ad::slice_rows(x_proj, u, u + 1), uh, h);
      outs.push_back(h);
    }
    x = outs.size() == 1 ? outs.front() : ad::concat_rows(outs);
  }
  return x;
}

Var Model::joint_lattice(Graph& g, BranchId id, Var enc, Var pred) const {
  const Branch& b = branch(id);
  const std::string p = b.prefix() + "joint/";
  if (enc.cols() != config_.hidden || pred.cols() != config_.predictor_dim) {
    throw DimensionError("joint: expected encoder width " +
                         std::to_string(config_.hidden) +
                         " and predictor width " +
                         std::to_string(config_.predictor_dim));
  }
  Var a = ad::matmul(enc, g.param(params_, p + "enc_w"));
  Var c = ad::add_row(ad::matmul(pred, g.param(params_, p + "pred_w")),
                      g.param(params_, p + "b"));
  Var z = ad::tanh(ad::outer_add(a, c));
  return ad::add_row(ad::matmul(z, g.param(params_, p + "out_w")),
                     g.param(params_, p + "out_b"));
}

PredictorState Model::initial_predictor_state(BranchId id) const {
  (void)branch(id);
  PredictorState s;
  s.hidden.assign(config_.predictor_layers,
                  std::vector<double>(config_.predictor_dim, 0.0));
  return s;
}

PredictorOutput Model::predict(BranchId id, TokenId token,
                               const PredictorState& state) const {
  const Branch& b = branch(id);
  if (token == kBlank) {
    throw ContractError("predict: blank never advances the prediction network");
  }
  if (token > b.vocab_size + 1) {
    throw ContractError("predict: token " + std::to_string(token) +
                        " outside branch vocabulary");
  }
  if (state.hidden.size() != config_.predictor_layers) {
    throw ContractError("predict: state has wrong layer count");
  }
  const std::size_t pd = config_.predictor_dim;
  Graph g;
  const std::size_t ids[] = {token};
  Var x = ad::embedding(g.param(params_, b.prefix() + "pred/embed"), ids);
  PredictorOutput out;
  out.state.hidden.resize(config_.predictor_layers);
  for (std::size_t l = 0; l < config_.predictor_layers; ++l) {
    const std::string lp = b.prefix() + "pred/layer" + std::to_string(l) + "/";
    Var x_proj = ad::add_row(ad::matmul(x, g.param(params_, lp + "wx")),
                             g.param(params_, lp + "b"));
    Var h = g.constant(Tensor({1, pd}, state.hidden[l]));
    x = predictor_step(x_proj, g.param(params_, lp + "uh"), h);
    out.state.hidden[l] = x.value().storage();
  }
  out.h_pre = x.value().storage();
  out.state.last_token = token;
  out.state.started = true;
  return out;
}

std::vector<double> Model::joint(BranchId id, std::span<const double> h_enc,
                                 std::span<const double> h_pre) const {
  Graph g;
  Var enc = g.constant(
      Tensor({1, h_enc.size()}, std::vector<double>(h_enc.begin(), h_enc.end())));
  Var pred = g.constant(
      Tensor({1, h_pre.size()}, std::vector<double>(h_pre.begin(), h_pre.end())));
  return joint_lattice(g, id, enc, pred).value().storage();
}

}  // namespace sm2
