// Checkpoint layout (all integers little-endian):
//   magic "SM2CKPT\0" | u32 version
//   config: u64 feature_dim hidden heads ff_dim encoder_layers
//           predictor_layers predictor_dim joint_dim chunk_size left_chunks
//           seed | u8 encoder_frozen
//   u32 branch count, then per branch: str target_lang | u64 vocab_size
//   u32 parameter count, then per parameter:
//     str name | u32 rank | u64 extents... | f64 values (raw IEEE-754)
// where str is u32 byte length followed by the bytes.

#include <bit>
#include <cstring>
#include <fstream>

#include "sm2/model.hpp"

namespace sm2 {

namespace {

constexpr char kMagic[8] = {'S', 'M', '2', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_uint(std::ostream& out, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_uint(std::istream& in) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw DataError("checkpoint truncated");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

void put_str(std::ostream& out, const std::string& s) {
  put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& in) {
  const auto n = get_uint<std::uint32_t>(in);
  if (n > (1u << 20)) throw DataError("checkpoint string too long");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw DataError("checkpoint truncated");
  return s;
}

void put_f64(std::ostream& out, double v) {
  put_uint<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

double get_f64(std::istream& in) {
  return std::bit_cast<double>(get_uint<std::uint64_t>(in));
}

}  // namespace

void Model::save(std::ostream& out) const {
  out.write(kMagic, sizeof(kMagic));
  put_uint<std::uint32_t>(out, kVersion);
  for (std::uint64_t v :
       {config_.feature_dim, config_.hidden, config_.heads, config_.ff_dim,
        config_.encoder_layers, config_.predictor_layers,
        config_.predictor_dim, config_.joint_dim, config_.mask.chunk_size,
        config_.mask.left_chunks}) {
    put_uint<std::uint64_t>(out, v);
  }
  put_uint<std::uint64_t>(out, config_.seed);
  put_uint<std::uint8_t>(out, encoder_frozen() ? 1 : 0);
  put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(branches_.size()));
  for (const auto& b : branches_) {
    put_str(out, b.target_lang);
    put_uint<std::uint64_t>(out, b.vocab_size);
  }
  put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& p : params_) {
    put_str(out, p.name);
    put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto e : p.tensor.shape()) put_uint<std::uint64_t>(out, e);
    for (double v : p.tensor.values()) put_f64(out, v);
  }
  if (!out) throw DataError("failed writing checkpoint");
}

void Model::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  save(out);
}

Model Model::load(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint (bad magic)");
  }
  const auto version = get_uint<std::uint32_t>(in);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig cfg;
  cfg.feature_dim = get_uint<std::uint64_t>(in);
  cfg.hidden = get_uint<std::uint64_t>(in);
  cfg.heads = get_uint<std::uint64_t>(in);
  cfg.ff_dim = get_uint<std::uint64_t>(in);
  cfg.encoder_layers = get_uint<std::uint64_t>(in);
  cfg.predictor_layers = get_uint<std::uint64_t>(in);
  cfg.predictor_dim = get_uint<std::uint64_t>(in);
  cfg.joint_dim = get_uint<std::uint64_t>(in);
  cfg.mask.chunk_size = get_uint<std::uint64_t>(in);
  cfg.mask.left_chunks = get_uint<std::uint64_t>(in);
  cfg.mask.num_layers = cfg.encoder_layers;
  cfg.seed = get_uint<std::uint64_t>(in);
  const bool frozen = get_uint<std::uint8_t>(in) != 0;

  Model model(cfg);
  const auto nbranches = get_uint<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < nbranches; ++i) {
    const std::string lang = get_str(in);
    const auto vocab = get_uint<std::uint64_t>(in);
    model.add_branch(lang, vocab, 0);
  }
  const auto nparams = get_uint<std::uint32_t>(in);
  if (nparams != model.params_.size()) {
    throw DataError("checkpoint has " + std::to_string(nparams) +
                    " parameters, config implies " +
                    std::to_string(model.params_.size()));
  }
  for (std::uint32_t i = 0; i < nparams; ++i) {
    const std::string name = get_str(in);
    auto& p = model.params_.at(model.params_.index_of(name));
    const auto rank = get_uint<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& e : shape) e = get_uint<std::uint64_t>(in);
    if (shape != p.tensor.shape()) {
      throw DataError("parameter " + name + " has shape " +
                      shape_to_string(shape) + ", expected " +
                      shape_to_string(p.tensor.shape()));
    }
    for (auto& v : p.tensor.values()) v = get_f64(in);
  }
  if (frozen) model.freeze_encoder();
  return model;
}

Model Model::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  return load(in);
}

}  // namespace sm2
