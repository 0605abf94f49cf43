#include "sm2/attention_mask.hpp"

#include <algorithm>
#include <string>

#include "sm2/tensor.hpp"

namespace sm2 {

void ChunkMaskSpec::validate() const {
  if (chunk_size < 1) throw ContractError("chunk size must be >= 1");
  if (num_layers < 1) throw ContractError("num_layers must be >= 1");
}

ChunkMaskSpec ChunkMaskSpec::offline(std::size_t frames,
                                     std::size_t num_layers) {
  return {std::max<std::size_t>(frames, 1), 0, num_layers};
}

std::vector<std::size_t> AttnMask::visible(std::size_t q) const {
  std::vector<std::size_t> keys;
  for (std::size_t k = 0; k < frames_; ++k) {
    if ((*this)(q, k)) keys.push_back(k);
  }
  return keys;
}

std::size_t chunk_index(std::size_t frame, const ChunkMaskSpec& spec) {
  return frame / spec.chunk_size;
}

std::size_t chunk_begin(std::size_t chunk, const ChunkMaskSpec& spec) {
  return chunk * spec.chunk_size;
}

std::size_t chunk_last(std::size_t chunk, std::size_t frames,
                       const ChunkMaskSpec& spec) {
  return std::min((chunk + 1) * spec.chunk_size, frames) - 1;
}

std::size_t frames_available_at(std::size_t frame, std::size_t frames,
                                const ChunkMaskSpec& spec) {
  return chunk_last(chunk_index(frame, spec), frames, spec) + 1;
}

bool visible(std::size_t q, std::size_t k, const ChunkMaskSpec& spec) {
  const std::size_t cq = chunk_index(q, spec);
  const std::size_t ck = chunk_index(k, spec);
  return ck <= cq && ck + spec.left_chunks >= cq;
}

AttnMask build_chunk_mask(std::size_t frames, const ChunkMaskSpec& spec) {
  spec.validate();
  if (frames < 1) throw ContractError("build_chunk_mask: need T >= 1");
  AttnMask mask(frames);
  for (std::size_t q = 0; q < frames; ++q) {
    for (std::size_t k = 0; k < frames; ++k) mask.set(q, k, visible(q, k, spec));
  }
  return mask;
}

FrameRange receptive_field(std::size_t t, std::size_t layer,
                           std::size_t frames, const ChunkMaskSpec& spec) {
  spec.validate();
  if (layer < 1 || layer > spec.num_layers) {
    throw ContractError("receptive_field: layer " + std::to_string(layer) +
                        " outside [1, " + std::to_string(spec.num_layers) +
                        "]");
  }
  if (t >= frames) throw ContractError("receptive_field: frame out of range");
  const std::size_t c = chunk_index(t, spec);
  const std::size_t reach = layer * spec.left_chunks;
  const std::size_t first_chunk = c > reach ? c - reach : 0;
  return {chunk_begin(first_chunk, spec), chunk_last(c, frames, spec)};
}

}  // namespace sm2
