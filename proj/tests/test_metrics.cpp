#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "sm2/metrics.hpp"

using namespace sm2;
using namespace sm2::metrics;

namespace {

// Recursive edit distance with memo; a different formulation from the DP
// table used by the library.
std::size_t edit_oracle(const Sentence& r, const Sentence& h, std::size_t i,
                        std::size_t j, std::vector<std::vector<long>>& memo) {
  if (i == r.size()) return h.size() - j;
  if (j == h.size()) return r.size() - i;
  long& slot = memo[i][j];
  if (slot >= 0) return static_cast<std::size_t>(slot);
  std::size_t best = edit_oracle(r, h, i + 1, j + 1, memo) + (r[i] == h[j] ? 0 : 1);
  best = std::min(best, edit_oracle(r, h, i + 1, j, memo) + 1);
  best = std::min(best, edit_oracle(r, h, i, j + 1, memo) + 1);
  slot = static_cast<long>(best);
  return best;
}

Sentence random_sentence(std::mt19937_64& rng) {
  Sentence s(rng() % 7);
  for (auto& w : s) w = std::string(1, static_cast<char>('a' + rng() % 4));
  return s;
}

DecodeRecord record(std::string id, std::vector<std::size_t> delays,
                    std::size_t frames) {
  DecodeRecord r;
  r.utterance_id = std::move(id);
  r.branch = "M";
  r.tokens.assign(delays.size(), 1);
  r.delays = std::move(delays);
  r.source_frames = frames;
  return r;
}

}  // namespace

TEST_CASE("wer fixtures") {
  CHECK(wer({split_words("a b c")}, {split_words("a b c")}) == 0.0);
  CHECK(wer({split_words("a b c")}, {split_words("a x c")}) ==
        doctest::Approx(100.0 / 3.0));
  CHECK(token_accuracy({split_words("a b c")}, {split_words("a x c")}) ==
        doctest::Approx(200.0 / 3.0));
  // More edits than reference words clamps accuracy at zero.
  CHECK(token_accuracy({split_words("a")}, {split_words("x y z")}) == 0.0);
  CHECK_THROWS_AS(wer({}, {}), ContractError);
  CHECK_THROWS_AS(wer({split_words("a")}, {}), ContractError);
}

TEST_CASE("edit distance agrees with a recursive oracle") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 300; ++i) {
    const Sentence r = random_sentence(rng), h = random_sentence(rng);
    std::vector<std::vector<long>> memo(r.size() + 1, std::vector<long>(h.size() + 1, -1));
    CHECK(edit_distance(r, h) == edit_oracle(r, h, 0, 0, memo));
    // Symmetric edit count.
    CHECK(edit_distance(r, h) == edit_distance(h, r));
  }
}

TEST_CASE("bleu fixtures") {
  const std::vector<Sentence> refs = {split_words("the cat sat on the mat"),
                                      split_words("a b c d")};
  CHECK(bleu(refs, refs) == 100.0);
  // Hand counts: clipped matches 9/9, 6/7, 4/5, 2/3; hyp length 9, ref 10.
  const double expected = 100.0 * std::exp(1.0 - 10.0 / 9.0) *
                          std::pow(6.0 / 7.0 * 4.0 / 5.0 * 2.0 / 3.0, 0.25);
  CHECK(bleu(refs, {split_words("the cat sat on mat"), split_words("a b c d")}) ==
        doctest::Approx(expected).epsilon(1e-14));
  // No 4-gram overlap scores zero.
  CHECK(bleu({split_words("a b c d e")}, {split_words("a b c x e")}) == 0.0);
  // Longer hypotheses carry no brevity penalty.
  CHECK(bleu({split_words("a b c d")}, {split_words("a b c d a b c d")}) ==
        doctest::Approx(100.0 * std::pow(4.0 / 8 * 3.0 / 7 * 2.0 / 6 * 1.0 / 5, 0.25)));
}

TEST_CASE("latency hand case and offline") {
  const auto hand = utterance_latency({1, 2, 3, 4}, 4);
  CHECK(hand.ap == 0.625);
  CHECK(hand.al == doctest::Approx(1.0));
  // d' = 1,2,3,4 already spaced by 1/gamma, so DAL equals AL summed over all.
  CHECK(hand.dal == doctest::Approx(1.0));

  const auto off = utterance_latency({9, 9, 9}, 9);
  CHECK(off.ap == 1.0);
  CHECK(off.al == 9.0);
  CHECK(off.dal >= 0.0);

  CHECK_THROWS_AS(utterance_latency({}, 4), ContractError);
  CHECK_THROWS_AS(utterance_latency({3, 2}, 4), ContractError);
  CHECK_THROWS_AS(utterance_latency({5}, 4), ContractError);
}

TEST_CASE("AL falls back to the full hypothesis when the source never completes") {
  // gamma = 2/8, so (i-1)/gamma = 0, 4.
  const auto lat = utterance_latency({4, 6}, 8);
  CHECK(lat.al == doctest::Approx(((4.0 - 0.0) + (6.0 - 4.0)) / 2.0));
}

TEST_CASE("AP never decreases when delays grow") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const std::size_t X = 1 + rng() % 20, Y = 1 + rng() % 8;
    std::vector<std::size_t> d(Y);
    for (auto& v : d) v = 1 + rng() % X;
    std::sort(d.begin(), d.end());
    auto bigger = d;
    for (auto& v : bigger) v = std::min(X, v + rng() % 3);
    std::sort(bigger.begin(), bigger.end());
    CHECK(utterance_latency(bigger, X).ap >= utterance_latency(d, X).ap);
    CHECK(utterance_latency(d, X).dal >= 0.0);
  }
}

TEST_CASE("corpus latency: mean over utterances, ms scaling, skipped empties") {
  const std::vector<DecodeRecord> log = {record("u1", {1, 2, 3, 4}, 4),
                                         record("u2", {9, 9, 9}, 9),
                                         record("u3", {}, 5)};
  const LatencyReport frames = latency(log);
  CHECK(frames.utterances == 2);
  CHECK(frames.skipped == 1);
  CHECK(frames.ap == doctest::Approx((0.625 + 1.0) / 2));
  CHECK(frames.al == doctest::Approx((1.0 + 9.0) / 2));

  const LatencyReport ms = latency(log, kMillisecondsPerFrame);
  CHECK(ms.ap == frames.ap);
  CHECK(ms.al == doctest::Approx(frames.al * 40.0));
  CHECK(ms.dal == doctest::Approx(frames.dal * 40.0));
}

TEST_CASE("quality report and writers") {
  const auto rep = evaluate_quality({split_words("1 2 3 4")}, {split_words("1 2 3 4")});
  CHECK(rep.wer == 0.0);
  CHECK(rep.bleu == 100.0);
  CHECK(rep.token_accuracy == 100.0);
  CHECK(rep.ref_tokens == 4);
  std::ostringstream out;
  write_report(out, &rep, nullptr);
  CHECK(out.str().find("bleu\t100") != std::string::npos);
  CHECK(to_words({3, 14}) == Sentence{"3", "14"});
}
