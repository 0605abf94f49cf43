#pragma once

// Translation quality and simultaneous-translation latency metrics over
// decode logs.

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "sm2/decoder.hpp"
#include "sm2/model.hpp"

namespace sm2::metrics {

using Sentence = std::vector<std::string>;

Sentence to_words(const std::vector<TokenId>& tokens);
Sentence split_words(const std::string& text);

/// Unit-cost Levenshtein distance (substitution, insertion, deletion).
std::size_t edit_distance(const Sentence& ref, const Sentence& hyp);

/// Corpus WER in percent: total edits / total reference words * 100.
double wer(const std::vector<Sentence>& refs, const std::vector<Sentence>& hyps);

/// Corpus token accuracy in percent: max(0, 100 - WER).
double token_accuracy(const std::vector<Sentence>& refs,
                      const std::vector<Sentence>& hyps);

/// Corpus BLEU (0-100), uniform weights over n = 1..max_n, no smoothing.
double bleu(const std::vector<Sentence>& refs, const std::vector<Sentence>& hyps,
            std::size_t max_n = 4);

struct EvalReport {
  double wer = 0.0;
  double bleu = 0.0;
  double token_accuracy = 0.0;
  std::size_t sentences = 0;
  std::size_t ref_tokens = 0;
  std::size_t hyp_tokens = 0;
};

EvalReport evaluate_quality(const std::vector<Sentence>& refs,
                            const std::vector<Sentence>& hyps);

struct UtteranceLatency {
  std::string utterance_id;
  double ap = 0.0;
  double al = 0.0;
  double dal = 0.0;
};

struct LatencyReport {
  double ap = 0.0;
  double al = 0.0;
  double dal = 0.0;
  std::size_t utterances = 0;  // contributing to the means
  std::size_t skipped = 0;     // empty hypotheses
  std::vector<UtteranceLatency> per_utterance;
};

/// Nominal duration of one encoder frame when reporting milliseconds.
inline constexpr double kMillisecondsPerFrame = 40.0;

/// Latency of one hypothesis from its emission delays (frames consumed when
/// each token was written) and the source length in frames. gamma <= 0 means
/// |Y| / |X|.
UtteranceLatency utterance_latency(const std::vector<std::size_t>& delays,
                                   std::size_t source_len, double gamma = 0.0);

/// Unweighted mean over utterances; empty hypotheses are skipped and counted.
/// AL/DAL are scaled by `unit_scale` (1 for frames, kMillisecondsPerFrame
/// for ms).
LatencyReport latency(const std::vector<DecodeRecord>& log,
                      double unit_scale = 1.0);

/// Flat report: one "name<TAB>value<TAB>count" line per metric.
void write_report(std::ostream& out, const EvalReport* quality,
                  const LatencyReport* lat);
void write_latency_tsv(std::ostream& out, const LatencyReport& lat);

}  // namespace sm2::metrics
