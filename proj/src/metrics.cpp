#include "sm2/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace sm2::metrics {

Sentence to_words(const std::vector<TokenId>& tokens) {
  Sentence out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) out.push_back(std::to_string(t));
  return out;
}

Sentence split_words(const std::string& text) {
  Sentence out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::size_t edit_distance(const Sentence& ref, const Sentence& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

namespace {

void check_parallel(const std::vector<Sentence>& refs,
                    const std::vector<Sentence>& hyps) {
  if (refs.size() != hyps.size()) {
    throw ContractError("metrics: " + std::to_string(refs.size()) +
                        " references vs " + std::to_string(hyps.size()) +
                        " hypotheses");
  }
}

}  // namespace

double wer(const std::vector<Sentence>& refs,
           const std::vector<Sentence>& hyps) {
  check_parallel(refs, hyps);
  std::size_t edits = 0, words = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    edits += edit_distance(refs[i], hyps[i]);
    words += refs[i].size();
  }
  if (words == 0) throw ContractError("wer: empty reference corpus");
  return 100.0 * static_cast<double>(edits) / static_cast<double>(words);
}

double token_accuracy(const std::vector<Sentence>& refs,
                      const std::vector<Sentence>& hyps) {
  return std::max(0.0, 100.0 - wer(refs, hyps));
}

double bleu(const std::vector<Sentence>& refs,
            const std::vector<Sentence>& hyps, std::size_t max_n) {
  check_parallel(refs, hyps);
  if (refs.empty()) throw ContractError("bleu: empty corpus");
  std::vector<std::size_t> matches(max_n + 1, 0), totals(max_n + 1, 0);
  std::size_t ref_len = 0, hyp_len = 0;
  for (std::size_t s = 0; s < refs.size(); ++s) {
    const Sentence& r = refs[s];
    const Sentence& h = hyps[s];
    ref_len += r.size();
    hyp_len += h.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      std::map<Sentence, std::size_t> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) {
        ++ref_counts[Sentence(r.begin() + i, r.begin() + i + n)];
      }
      std::map<Sentence, std::size_t> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        ++hyp_counts[Sentence(h.begin() + i, h.begin() + i + n)];
      }
      for (const auto& [gram, c] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n] += std::min(c, it->second);
        totals[n] += c;
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    if (matches[n] == 0 || totals[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matches[n]) /
                        static_cast<double>(totals[n]));
  }
  const double bp = std::exp(std::min(
      0.0, 1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

EvalReport evaluate_quality(const std::vector<Sentence>& refs,
                            const std::vector<Sentence>& hyps) {
  EvalReport r;
  r.wer = wer(refs, hyps);
  r.token_accuracy = std::max(0.0, 100.0 - r.wer);
  r.bleu = bleu(refs, hyps);
  r.sentences = refs.size();
  for (const auto& s : refs) r.ref_tokens += s.size();
  for (const auto& s : hyps) r.hyp_tokens += s.size();
  return r;
}

UtteranceLatency utterance_latency(const std::vector<std::size_t>& delays,
                                   std::size_t source_len, double gamma) {
  if (delays.empty()) throw ContractError("latency: empty hypothesis");
  if (source_len == 0) throw ContractError("latency: empty source");
  for (std::size_t i = 0; i < delays.size(); ++i) {
    if (delays[i] > source_len || (i > 0 && delays[i] < delays[i - 1])) {
      throw ContractError("latency: delays must be non-decreasing and <= |X|");
    }
  }
  const double x = static_cast<double>(source_len);
  const double y = static_cast<double>(delays.size());
  if (gamma <= 0.0) gamma = y / x;

  UtteranceLatency out;
  double total = 0.0;
  for (auto d : delays) total += static_cast<double>(d);
  out.ap = total / (x * y);

  // tau: first token written after the whole source was read (or the last).
  std::size_t tau = delays.size();
  for (std::size_t i = 0; i < delays.size(); ++i) {
    if (delays[i] == source_len) {
      tau = i + 1;
      break;
    }
  }
  double al = 0.0;
  for (std::size_t i = 0; i < tau; ++i) {
    al += static_cast<double>(delays[i]) - static_cast<double>(i) / gamma;
  }
  out.al = al / static_cast<double>(tau);

  double dal = 0.0;
  double prev = -1.0 / gamma;
  for (std::size_t i = 0; i < delays.size(); ++i) {
    const double d = std::max(static_cast<double>(delays[i]), prev + 1.0 / gamma);
    dal += d - static_cast<double>(i) / gamma;
    prev = d;
  }
  out.dal = dal / y;
  return out;
}

LatencyReport latency(const std::vector<DecodeRecord>& log,
                      double unit_scale) {
  LatencyReport rep;
  for (const auto& r : log) {
    if (r.delays.empty()) {
      ++rep.skipped;
      continue;
    }
    UtteranceLatency u = utterance_latency(r.delays, r.source_frames);
    u.utterance_id = r.utterance_id;
    u.al *= unit_scale;
    u.dal *= unit_scale;
    rep.ap += u.ap;
    rep.al += u.al;
    rep.dal += u.dal;
    rep.per_utterance.push_back(std::move(u));
  }
  rep.utterances = rep.per_utterance.size();
  if (rep.utterances > 0) {
    const double n = static_cast<double>(rep.utterances);
    rep.ap /= n;
    rep.al /= n;
    rep.dal /= n;
  }
  return rep;
}

void write_report(std::ostream& out, const EvalReport* quality,
                  const LatencyReport* lat) {
  out << std::setprecision(10);
  if (quality) {
    out << "wer\t" << quality->wer << '\t' << quality->ref_tokens << '\n';
    out << "bleu\t" << quality->bleu << '\t' << quality->sentences << '\n';
    out << "token_accuracy\t" << quality->token_accuracy << '\t'
        << quality->ref_tokens << '\n';
  }
  if (lat) {
    out << "ap\t" << lat->ap << '\t' << lat->utterances << '\n';
    out << "al\t" << lat->al << '\t' << lat->utterances << '\n';
    out << "dal\t" << lat->dal << '\t' << lat->utterances << '\n';
    out << "skipped_empty\t" << lat->skipped << '\t' << lat->skipped << '\n';
  }
}

void write_latency_tsv(std::ostream& out, const LatencyReport& lat) {
  out << std::setprecision(10);
  out << "utterance\tap\tal\tdal\n";
  for (const auto& u : lat.per_utterance) {
    out << u.utterance_id << '\t' << u.ap << '\t' << u.al << '\t' << u.dal
        << '\n';
  }
}

}  // namespace sm2::metrics
