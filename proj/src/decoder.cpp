#include "sm2/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "sm2/kernels.hpp"
#include "sm2/transducer_loss.hpp"

namespace sm2 {

void DecodeConfig::validate() const {
  if (beam < 1 || beam > kMaxBeam) {
    throw ContractError("beam width must be in [1, " +
                        std::to_string(kMaxBeam) + "]");
  }
  if (max_symbols_per_frame < 1) {
    throw ContractError("max symbols per frame must be >= 1");
  }
  mask.validate();
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

std::vector<double> log_probs_for(const Model& model, BranchId id,
                                  std::span<const double> h_enc,
                                  const Hypothesis& hyp) {
  const auto logits = model.joint(id, h_enc, hyp.predictor.h_pre);
  std::vector<double> lp(logits.size());
  kernels::serial::log_softmax_rows(logits, lp, 1, logits.size());
  return lp;
}

Hypothesis extend(const Model& model, BranchId id, const Hypothesis& h,
                  TokenId token, double log_prob, std::size_t delay) {
  Hypothesis out;
  out.tokens = h.tokens;
  out.tokens.push_back(token);
  out.emission_delays = h.emission_delays;
  out.emission_delays.push_back(delay);
  out.score = h.score + log_prob;
  out.predictor = model.predict(id, token, h.predictor.state);
  return out;
}

// Merges hypotheses with identical token sequences (scores log-added; the
// higher-scoring one keeps its delays) and sorts best first.
void merge_and_sort(std::vector<Hypothesis>& hyps) {
  std::stable_sort(hyps.begin(), hyps.end(),
                   [](const Hypothesis& a, const Hypothesis& b) {
                     return a.score > b.score;
                   });
  std::vector<Hypothesis> merged;
  for (auto& h : hyps) {
    auto it = std::find_if(merged.begin(), merged.end(),
                           [&](const Hypothesis& m) { return m.tokens == h.tokens; });
    if (it == merged.end()) {
      merged.push_back(std::move(h));
    } else {
      it->score = rnnt::log_add(it->score, h.score);
    }
  }
  std::stable_sort(merged.begin(), merged.end(),
                   [](const Hypothesis& a, const Hypothesis& b) {
                     return a.score > b.score;
                   });
  hyps = std::move(merged);
}

}  // namespace

StreamingDecoder::StreamingDecoder(const Model& model, DecodeConfig config,
                                   Mode mode)
    : model_(model), config_(std::move(config)), mode_(mode) {
  config_.mask.num_layers = model_.config().encoder_layers;
  config_.validate();
  (void)model_.branch(config_.branch);
  stream_ = model_.start_stream(config_.mask);
  Hypothesis start;
  start.predictor =
      model_.predict(config_.branch, model_.branch(config_.branch).sos(),
                     model_.initial_predictor_state(config_.branch));
  hyps_.push_back(std::move(start));
}

void StreamingDecoder::push(const FeatureChunk& chunk) {
  const EncoderOutput enc = model_.encode_incremental(stream_, chunk);
  const std::size_t h = model_.config().hidden;
  for (std::size_t i = 0; i < enc.frames; ++i) {
    step(enc.hidden.values().subspan(i * h, h), stream_.frames_consumed);
  }
}

void StreamingDecoder::step(std::span<const double> h_enc, std::size_t delay) {
  if (mode_ == Mode::kGreedy) {
    greedy_step(h_enc, delay);
  } else {
    beam_step(h_enc, delay);
  }
}

void StreamingDecoder::greedy_step(std::span<const double> h_enc,
                                   std::size_t delay) {
  Hypothesis& hyp = hyps_.front();
  for (std::size_t s = 0; s < config_.max_symbols_per_frame; ++s) {
    const auto lp = log_probs_for(model_, config_.branch, h_enc, hyp);
    const std::size_t k = argmax(lp);
    if (k == kBlank) {
      hyp.score += lp[kBlank];
      return;
    }
    hyp = extend(model_, config_.branch, hyp, static_cast<TokenId>(k), lp[k],
                 delay);
  }
}

void StreamingDecoder::beam_step(std::span<const double> h_enc,
                                 std::size_t delay) {
  struct Candidate {
    double score;
    std::size_t parent;
    TokenId token;
  };
  const std::size_t width = config_.beam;
  std::vector<Hypothesis> done;  // hypotheses that emitted blank this frame
  std::vector<Hypothesis> active = std::move(hyps_);
  for (std::size_t s = 0; s < config_.max_symbols_per_frame && !active.empty();
       ++s) {
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < active.size(); ++i) {
      const auto lp = log_probs_for(model_, config_.branch, h_enc, active[i]);
      for (std::size_t k = 0; k < lp.size(); ++k) {
        cands.push_back({active[i].score + lp[k], i, static_cast<TokenId>(k)});
      }
    }
    // Candidates were generated parent-major, blank first: a stable sort
    // keeps that order among equal scores.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) {
                       return a.score > b.score;
                     });
    cands.resize(std::min(cands.size(), width));
    std::vector<Hypothesis> next;
    for (const auto& c : cands) {
      const Hypothesis& parent = active[c.parent];
      if (c.token == kBlank) {
        Hypothesis h = parent;
        h.score = c.score;
        done.push_back(std::move(h));
      } else {
        next.push_back(extend(model_, config_.branch, parent, c.token,
                              c.score - parent.score, delay));
      }
    }
    active = std::move(next);
  }
  // Hypotheses that hit the symbol cap leave the frame without a blank.
  for (auto& h : active) done.push_back(std::move(h));
  merge_and_sort(done);
  if (done.size() > width) done.resize(width);
  hyps_ = std::move(done);
}

Hypothesis greedy_stream_decode(const Model& model,
                                const std::vector<FeatureChunk>& chunks,
                                const DecodeConfig& config) {
  StreamingDecoder dec(model, config, StreamingDecoder::Mode::kGreedy);
  for (const auto& c : chunks) dec.push(c);
  return dec.best();
}

std::vector<Hypothesis> beam_decode(const Model& model,
                                    const std::vector<FeatureChunk>& chunks,
                                    const DecodeConfig& config) {
  StreamingDecoder dec(model, config, StreamingDecoder::Mode::kBeam);
  for (const auto& c : chunks) dec.push(c);
  return dec.nbest();
}

std::vector<Hypothesis> decode_encoded(const Model& model,
                                       const EncoderOutput& encoded,
                                       const DecodeConfig& config,
                                       StreamingDecoder::Mode mode) {
  StreamingDecoder dec(model, config, mode);
  const std::size_t h = model.config().hidden;
  const std::size_t total = encoded.first_frame + encoded.frames;
  for (std::size_t i = 0; i < encoded.frames; ++i) {
    const std::size_t t = encoded.first_frame + i;
    dec.step(encoded.hidden.values().subspan(i * h, h),
             frames_available_at(t, total, config.mask));
  }
  return dec.nbest();
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) os << ' ';
    os << xs[i];
  }
  return os.str();
}

template <typename T>
std::vector<T> split_numbers(const std::string& field) {
  std::vector<T> out;
  std::istringstream is(field);
  std::string tok;
  while (is >> tok) {
    try {
      out.push_back(static_cast<T>(std::stoull(tok)));
    } catch (const std::exception&) {
      throw DataError("bad integer '" + tok + "' in decode log");
    }
  }
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

}  // namespace

void write_decode_log(std::ostream& out, const std::vector<DecodeRecord>& log) {
  for (const auto& r : log) {
    out << r.utterance_id << '\t' << r.branch << '\t' << join(r.tokens) << '\t'
        << std::setprecision(17) << r.score << '\t' << join(r.delays) << '\t'
        << r.source_frames << '\n';
  }
}

std::vector<DecodeRecord> read_decode_log(std::istream& in) {
  std::vector<DecodeRecord> log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 6) {
      throw DataError("decode log line " + std::to_string(lineno) + ": " +
                      std::to_string(f.size()) + " fields, expected 6");
    }
    DecodeRecord r;
    r.utterance_id = f[0];
    r.branch = f[1];
    r.tokens = split_numbers<TokenId>(f[2]);
    try {
      r.score = std::stod(f[3]);
      r.source_frames = std::stoull(f[5]);
    } catch (const std::exception&) {
      throw DataError("decode log line " + std::to_string(lineno) +
                      ": bad number");
    }
    r.delays = split_numbers<std::size_t>(f[4]);
    if (r.delays.size() != r.tokens.size()) {
      throw DataError("decode log line " + std::to_string(lineno) +
                      ": token/delay count mismatch");
    }
    log.push_back(std::move(r));
  }
  return log;
}

}  // namespace sm2
