#pragma once

// Chunked streaming attention masks.
//
// Frames are split into consecutive chunks of `chunk_size` frames (the last
// chunk may be shorter). A query frame sees every frame of its own chunk and
// of the `left_chunks` chunks before it, never a later chunk. Stacking
// layers widens the left context by `left_chunks` chunks per layer while the
// right edge stays at the end of the query's chunk, so the encoder's
// lookahead (algorithmic latency) is exactly one chunk.
//
// Public functions take and return 0-based frame indices. Documentation
// elsewhere uses 1-based f_1..f_T; the conversion happens only here via
// `to_one_based` / `from_one_based`.

#include <cstddef>
#include <vector>

namespace sm2 {

/// Chunk size that puts any realistic utterance in a single chunk, i.e. full
/// (offline) attention with the same code path as streaming.
inline constexpr std::size_t kOfflineChunk = std::size_t{1} << 20;

struct ChunkMaskSpec {
  std::size_t chunk_size = 4;   // U, frames per chunk (>= 1)
  std::size_t left_chunks = 1;  // L, visible chunks to the left (>= 0)
  std::size_t num_layers = 1;   // depth the receptive field is composed over

  /// Throws ContractError unless chunk_size >= 1 and num_layers >= 1.
  void validate() const;
  /// Algorithmic latency in frames.
  std::size_t latency_frames() const { return chunk_size; }
  /// A single chunk covering `frames` frames.
  static ChunkMaskSpec offline(std::size_t frames, std::size_t num_layers = 1);
  bool operator==(const ChunkMaskSpec&) const = default;
};

/// Inclusive 0-based frame range.
struct FrameRange {
  std::size_t first = 0;
  std::size_t last = 0;
  bool operator==(const FrameRange&) const = default;
  bool contains(std::size_t t) const { return t >= first && t <= last; }
};

/// T x T visibility matrix; (q, k) is true iff query q may attend to key k.
class AttnMask {
 public:
  AttnMask() = default;
  explicit AttnMask(std::size_t frames)
      : frames_(frames), bits_(frames * frames, false) {}

  std::size_t frames() const { return frames_; }
  bool operator()(std::size_t q, std::size_t k) const {
    return bits_[q * frames_ + k];
  }
  void set(std::size_t q, std::size_t k, bool v) { bits_[q * frames_ + k] = v; }
  /// Keys visible from query q, ascending.
  std::vector<std::size_t> visible(std::size_t q) const;
  bool operator==(const AttnMask&) const = default;

 private:
  std::size_t frames_ = 0;
  std::vector<bool> bits_;
};

std::size_t chunk_index(std::size_t frame, const ChunkMaskSpec& spec);
std::size_t chunk_begin(std::size_t chunk, const ChunkMaskSpec& spec);
/// Last frame (inclusive) of `chunk`, clamped to the final frame.
std::size_t chunk_last(std::size_t chunk, std::size_t frames,
                       const ChunkMaskSpec& spec);
/// Frames available once the chunk containing `frame` has fully arrived.
std::size_t frames_available_at(std::size_t frame, std::size_t frames,
                                const ChunkMaskSpec& spec);

/// Whether query frame q may attend to key frame k.
bool visible(std::size_t q, std::size_t k, const ChunkMaskSpec& spec);

AttnMask build_chunk_mask(std::size_t frames, const ChunkMaskSpec& spec);

/// Input frames reachable from frame t after `layer` stacked masked layers
/// (layer is 1-based, 1 <= layer <= spec.num_layers).
FrameRange receptive_field(std::size_t t, std::size_t layer,
                           std::size_t frames, const ChunkMaskSpec& spec);

inline std::size_t to_one_based(std::size_t frame) { return frame + 1; }
inline std::size_t from_one_based(std::size_t frame) { return frame - 1; }

}  // namespace sm2
