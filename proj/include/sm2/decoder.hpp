#pragma once

// Streaming transducer decoding. Frames become decodable only once their
// chunk has fully arrived; every emitted token records how many source frames
// had been consumed at that moment (its emission delay).

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "sm2/model.hpp"

namespace sm2 {

struct DecodeConfig {
  static constexpr std::size_t kMaxBeam = 8;

  std::size_t beam = 1;
  std::size_t max_symbols_per_frame = 5;
  BranchId branch = 0;
  ChunkMaskSpec mask{4, 1, 1};

  void validate() const;
};

struct Hypothesis {
  std::vector<TokenId> tokens;
  double score = 0.0;  // log-probability
  std::vector<std::size_t> emission_delays;
  PredictorOutput predictor;  // state after the last emitted token
};

/// Index of the largest value; the lowest index wins ties.
std::size_t argmax(std::span<const double> values);

/// One decoding session per utterance. Feed chunks in order with push().
class StreamingDecoder {
 public:
  enum class Mode { kGreedy, kBeam };

  StreamingDecoder(const Model& model, DecodeConfig config, Mode mode);

  /// Encodes one chunk and advances the search over its frames.
  void push(const FeatureChunk& chunk);
  /// Hypotheses sorted by score, best first.
  const std::vector<Hypothesis>& nbest() const { return hyps_; }
  const Hypothesis& best() const { return hyps_.front(); }
  std::size_t frames_consumed() const { return stream_.frames_consumed; }

  /// Advances the search over one encoder frame.
  void step(std::span<const double> h_enc, std::size_t delay);

 private:
  void greedy_step(std::span<const double> h_enc, std::size_t delay);
  void beam_step(std::span<const double> h_enc, std::size_t delay);

  const Model& model_;
  DecodeConfig config_;
  Mode mode_;
  StreamState stream_;
  std::vector<Hypothesis> hyps_;
};

Hypothesis greedy_stream_decode(const Model& model,
                                const std::vector<FeatureChunk>& chunks,
                                const DecodeConfig& config);

std::vector<Hypothesis> beam_decode(const Model& model,
                                    const std::vector<FeatureChunk>& chunks,
                                    const DecodeConfig& config);

/// Decodes a precomputed full-utterance encoder output, charging each frame
/// the delay its chunk would have had when streamed.
std::vector<Hypothesis> decode_encoded(const Model& model,
                                       const EncoderOutput& encoded,
                                       const DecodeConfig& config,
                                       StreamingDecoder::Mode mode);

/// One line of a decode log.
struct DecodeRecord {
  std::string utterance_id;
  std::string branch;
  std::vector<TokenId> tokens;
  double score = 0.0;
  std::vector<std::size_t> delays;
  std::size_t source_frames = 0;
};

/// Tab-separated: id, branch, tokens, score, delays, T (lists space-joined).
void write_decode_log(std::ostream& out, const std::vector<DecodeRecord>& log);
std::vector<DecodeRecord> read_decode_log(std::istream& in);

}  // namespace sm2
