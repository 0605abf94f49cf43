#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <sstream>

#include "sm2/decoder.hpp"

using namespace sm2;

namespace {

ModelConfig small_config(std::uint64_t seed, ChunkMaskSpec mask = {3, 1, 2}) {
  ModelConfig c;
  c.feature_dim = 4;
  c.hidden = 8;
  c.heads = 2;
  c.ff_dim = 8;
  c.encoder_layers = 2;
  c.predictor_dim = 6;
  c.joint_dim = 6;
  c.mask = mask;
  c.seed = seed;
  return c;
}

FeatureSequence random_features(std::size_t T, std::size_t D, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Tensor x({T, D});
  for (auto& v : x.values()) v = nd(rng);
  return FeatureSequence(std::move(x));
}

// Random weights decode mostly blanks; a positive bias on the real tokens
// makes the search emit and branch.
void favour_tokens(Model& m, BranchId b, double bias) {
  auto& out_b = m.params().at(m.params().index_of(m.branch(b).prefix() + "joint/out_b"));
  for (std::size_t k = 1; k < out_b.tensor.size(); ++k) out_b.tensor[k] += bias;
}

DecodeConfig config_for(BranchId b, const ChunkMaskSpec& mask, std::size_t beam) {
  DecodeConfig dc;
  dc.branch = b;
  dc.mask = mask;
  dc.beam = beam;
  return dc;
}

}  // namespace

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(argmax(std::vector<double>{0.5, 0.5, 0.1}) == 0);
  CHECK(argmax(std::vector<double>{2.0, 2.0, 2.0}) == 0);
  CHECK(argmax(std::vector<double>{0.1, 0.2, 3.0, -1.0}) == 2);
}

TEST_CASE("a blank-only joint produces an empty hypothesis") {
  Model m(small_config(1));
  const BranchId b = m.add_branch("M", 4, 1);
  m.params().at(m.params().index_of("branch/M/joint/out_b")).tensor[0] = 1e3;
  const auto f = random_features(10, 4, 1);
  const auto dc = config_for(b, m.config().mask, 1);
  const auto h = greedy_stream_decode(m, split_into_chunks(f, dc.mask), dc);
  CHECK(h.tokens.empty());
  CHECK(h.emission_delays.empty());
}

TEST_CASE("beam 1 equals greedy; delays are chunk ends; cap holds") {
  std::size_t emitted = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Model m(small_config(seed));
    const BranchId b = m.add_branch("M", 4, seed);
    favour_tokens(m, b, 0.5 + 0.2 * static_cast<double>(seed % 4));
    const std::size_t T = 5 + seed;
    const auto f = random_features(T, 4, seed);
    auto dc = config_for(b, m.config().mask, 1);
    dc.max_symbols_per_frame = 2;
    const auto chunks = split_into_chunks(f, dc.mask);
    const Hypothesis greedy = greedy_stream_decode(m, chunks, dc);
    const auto beam = beam_decode(m, chunks, dc);
    REQUIRE(beam.size() == 1);
    CHECK(beam[0].tokens == greedy.tokens);
    CHECK(beam[0].emission_delays == greedy.emission_delays);
    CHECK(beam[0].score == doctest::Approx(greedy.score));

    emitted += greedy.tokens.size();
    CHECK(greedy.tokens.size() <= T * 2);
    CHECK(greedy.emission_delays.size() == greedy.tokens.size());
    for (std::size_t i = 0; i < greedy.emission_delays.size(); ++i) {
      const std::size_t d = greedy.emission_delays[i];
      CHECK((d % 3 == 0 || d == T));
      CHECK(d <= T);
      if (i) CHECK(d >= greedy.emission_delays[i - 1]);
    }
  }
  CHECK(emitted > 20);
}

TEST_CASE("beam 4 never scores below greedy and the n-best list is sorted") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model m(small_config(100 + seed));
    const BranchId b = m.add_branch("M", 3, seed);
    favour_tokens(m, b, 1.0);
    const auto f = random_features(6 + seed % 5, 4, seed);
    const auto chunks = split_into_chunks(f, m.config().mask);
    const Hypothesis greedy = greedy_stream_decode(m, chunks, config_for(b, m.config().mask, 1));
    const auto nbest = beam_decode(m, chunks, config_for(b, m.config().mask, 4));
    REQUIRE(!nbest.empty());
    CHECK(nbest.size() <= 4);
    CHECK(nbest.front().score >= greedy.score - 1e-12);
    for (std::size_t i = 1; i < nbest.size(); ++i) {
      CHECK(nbest[i].score <= nbest[i - 1].score);
      CHECK(nbest[i].tokens != nbest[i - 1].tokens);
    }
  }
}

TEST_CASE("streamed decoding equals decoding a precomputed encoder output") {
  for (std::size_t U : {1u, 2u, 4u}) {
    const ChunkMaskSpec mask{U, 1, 2};
    Model m(small_config(U, mask));
    const BranchId b = m.add_branch("M", 4, U);
    favour_tokens(m, b, 0.8);
    const auto f = random_features(11, 4, U);
    for (std::size_t beam : {1u, 3u}) {
      const auto dc = config_for(b, mask, beam);
      const auto mode = beam == 1 ? StreamingDecoder::Mode::kGreedy : StreamingDecoder::Mode::kBeam;
      StreamingDecoder dec(m, dc, mode);
      for (const auto& c : split_into_chunks(f, mask)) dec.push(c);
      CHECK(dec.frames_consumed() == 11);
      const auto pre = decode_encoded(m, m.encode(f, mask), dc, mode);
      CHECK(dec.best().tokens == pre.front().tokens);
      CHECK(dec.best().emission_delays == pre.front().emission_delays);
    }
  }
}

TEST_CASE("config validation") {
  DecodeConfig dc;
  dc.beam = 0;
  CHECK_THROWS_AS(dc.validate(), ContractError);
  dc.beam = 9;
  CHECK_THROWS_AS(dc.validate(), ContractError);
  dc.beam = 8;
  dc.max_symbols_per_frame = 0;
  CHECK_THROWS_AS(dc.validate(), ContractError);
  dc.max_symbols_per_frame = 1;
  dc.mask.chunk_size = 0;
  CHECK_THROWS_AS(dc.validate(), ContractError);
}

TEST_CASE("decode log round trip") {
  std::vector<DecodeRecord> log(2);
  log[0] = {"u1", "M", {3, 1, 4}, -1.25, {4, 4, 8}, 9};
  log[1] = {"u2", "N", {}, -0.1, {}, 3};
  std::stringstream buf;
  write_decode_log(buf, log);
  const auto back = read_decode_log(buf);
  REQUIRE(back.size() == 2);
  CHECK(back[0].tokens == log[0].tokens);
  CHECK(back[0].delays == log[0].delays);
  CHECK(back[0].score == log[0].score);
  CHECK(back[1].tokens.empty());
  CHECK(back[1].source_frames == 3);
  std::stringstream bad("u1\tM\t1 2\n");
  CHECK_THROWS_AS(read_decode_log(bad), DataError);
}
