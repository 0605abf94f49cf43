#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

#include "sm2/corpus.hpp"
#include "sm2/metrics.hpp"

using namespace sm2;
using namespace sm2::corpus;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sm2_corpus_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("suite shape and determinism") {
  const auto a = make_suite(4, 2, 20, 16, 7);
  const auto b = make_suite(4, 2, 20, 16, 7);
  CHECK(a.source_langs == std::vector<std::string>{"A", "B", "C", "D"});
  CHECK(a.target_langs == std::vector<std::string>{"M", "N"});
  REQUIRE(a.motifs.size() == 4);
  for (const auto& bank : a.motifs) {
    REQUIRE(bank.size() == 20);
    for (const auto& m : bank) {
      CHECK(m.size() >= kMinMotifFrames);
      CHECK(m.size() <= kMaxMotifFrames);
      for (const auto& f : m) CHECK(f.size() == 16);
    }
  }
  REQUIRE(a.text.size() == 2);
  for (const auto& map : a.text) {
    std::set<TokenId> seen(map.begin(), map.end());
    CHECK(seen.size() == 20);
    CHECK(*seen.begin() == 1);
    CHECK(*seen.rbegin() == 20);
  }
  CHECK(a.motifs == b.motifs);
  CHECK(a.text == b.text);
  CHECK(make_suite(4, 2, 20, 16, 8).motifs != a.motifs);
  CHECK_THROWS_AS(make_suite(0, 2, 20, 16, 1), ContractError);
}

TEST_CASE("motif distance floor, measured directly") {
  const auto s = make_suite(4, 2, 20, 16, 3);
  double worst = 1e300;
  for (std::size_t l1 = 0; l1 < 4; ++l1)
    for (std::size_t t1 = 0; t1 < 20; ++t1)
      for (std::size_t l2 = 0; l2 < 4; ++l2)
        for (std::size_t t2 = 0; t2 < 20; ++t2) {
          if (l1 == l2 && t1 == t2) continue;
          const Motif& a = s.motifs[l1][t1];
          const Motif& b = s.motifs[l2][t2];
          double sq = 0.0;
          for (std::size_t f = 0; f < std::max(a.size(), b.size()); ++f)
            for (std::size_t d = 0; d < 16; ++d) {
              const double x = f < a.size() ? a[f][d] : 0.0;
              const double y = f < b.size() ? b[f][d] : 0.0;
              sq += (x - y) * (x - y);
            }
          worst = std::min(worst, std::sqrt(sq));
        }
  CHECK(worst > kMotifDistanceFloor);
  CHECK(min_motif_distance(s) == doctest::Approx(worst));
}

TEST_CASE("rendering") {
  const auto s = make_suite(2, 2, 5, 3, 1);
  const auto one = render_utterance(s, {4}, "B", 0.0, 9);
  const Motif& m = s.motifs[1][4];
  REQUIRE(one.frames() == m.size());
  for (std::size_t f = 0; f < m.size(); ++f)
    for (std::size_t d = 0; d < 3; ++d) CHECK(one.frame(f)[d] == m[f][d]);

  const auto n1 = render_utterance(s, {0, 1, 2}, "A", 0.05, 4);
  const auto n2 = render_utterance(s, {0, 1, 2}, "A", 0.05, 4);
  CHECK(n1.tensor().storage() == n2.tensor().storage());
  CHECK(render_utterance(s, {}, "A", 0.05, 4).empty());

  const std::vector<std::size_t> sem = {3, 0, 4, 4, 1};
  const auto text_m = render_text(s, sem, "M");
  CHECK(text_to_semantics(s, text_m, "M") == sem);
  CHECK(text_m != render_text(s, sem, "N"));
  CHECK(render_text(s, {}, "M").empty());
  CHECK_THROWS_AS(render_utterance(s, {5}, "A", 0.0, 1), ContractError);
  CHECK_THROWS_AS(render_text(s, {0}, "Q"), ContractError);
}

TEST_CASE("signal-to-noise ratio at sigma 0.1") {
  // Motif entries are standard normal and noise has variance sigma^2, so
  // the expected SNR is 10 log10(1 / 0.01) = 20 dB.
  const auto s = make_suite(4, 1, 20, 16, 5);
  std::mt19937_64 rng(1);
  double signal = 0.0, noise = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::size_t> sem(1 + rng() % 6);
    for (auto& t : sem) t = rng() % 20;
    const std::string lang(1, static_cast<char>('A' + rng() % 4));
    const auto clean = render_utterance(s, sem, lang, 0.0, i);
    const auto noisy = render_utterance(s, sem, lang, 0.1, i);
    for (std::size_t k = 0; k < clean.tensor().size(); ++k) {
      signal += clean.tensor()[k] * clean.tensor()[k];
      const double e = noisy.tensor()[k] - clean.tensor()[k];
      noise += e * e;
    }
  }
  const double snr_db = 10.0 * std::log10(signal / noise);
  CHECK(snr_db > 19.0);
  CHECK(snr_db < 21.0);
}

TEST_CASE("code switching keeps a single target text") {
  const auto s = make_suite(3, 1, 6, 4, 2);
  const std::vector<std::size_t> sem = {1, 2, 3};
  const auto mixed = render_code_switched(s, sem, {"A", "C", "B"}, 0.0, 1);
  CHECK(mixed.frames() ==
        s.motifs[0][1].size() + s.motifs[2][2].size() + s.motifs[1][3].size());
  CHECK(mixed.frame(0)[0] == s.motifs[0][1][0][0]);
  CHECK(render_text(s, sem, "M") == std::vector<TokenId>{s.text[0][1], s.text[0][2], s.text[0][3]});
  CHECK_THROWS_AS(render_code_switched(s, sem, {"A"}, 0.0, 1), ContractError);
}

TEST_CASE("pair sets") {
  const auto p = parse_pair_set("A>M, B>M,C>N");
  REQUIRE(p.size() == 3);
  CHECK(p[2] == LanguagePair{"C", "N"});
  CHECK(format_pair_set(p) == "A>M,B>M,C>N");
  CHECK_THROWS_AS(parse_pair_set("A-M"), ContractError);
  CHECK_THROWS_AS(parse_pair_set(""), ContractError);
  CHECK_THROWS_AS(parse_pair_set("A>"), ContractError);
}

TEST_CASE("corpus histogram, split disjointness, oracle translatability") {
  const auto s = make_suite(3, 2, 20, 8, 4);
  CorpusOptions opt;
  opt.train_per_pair = 100;
  opt.test_per_pair = 20;
  opt.seed = 4;
  const Corpus c = generate_corpus(s, parse_pair_set("A>M,B>M,C>M"), opt);
  const auto train = c.pair_histogram("train");
  CHECK(c.select("train").size() == 300);
  CHECK(train.size() == 3);
  for (const auto& [pair, n] : train) CHECK(n == 100);
  CHECK(c.pair_histogram("test").at({"B", "M"}) == 20);

  std::set<std::vector<std::size_t>> train_seqs;
  for (const auto* u : c.select("train")) train_seqs.insert(u->semantics);
  for (const auto* u : c.select("test")) CHECK(train_seqs.count(u->semantics) == 0);

  std::vector<metrics::Sentence> refs, oracle;
  for (const auto& u : c.utterances) {
    CHECK(u.semantics.size() >= 3);
    CHECK(u.semantics.size() <= 8);
    refs.push_back(metrics::to_words(u.target));
    oracle.push_back(metrics::to_words(render_text(s, u.semantics, u.target_lang)));
  }
  CHECK(metrics::bleu(refs, oracle) == 100.0);

  const Corpus only_b = c.filter({{"B", "M"}}, "test");
  CHECK(only_b.utterances.size() == 20);
}

TEST_CASE("zero-shot pairs are absent from the manifest") {
  const auto s = make_suite(4, 2, 20, 16, 1);
  CorpusOptions opt;
  opt.train_per_pair = 5;
  opt.test_per_pair = 2;
  const Corpus c = generate_corpus(s, parse_pair_set("A>M,B>M,C>M,D>M,A>N,B>N"), opt);
  const fs::path dir = scratch("zeroshot");
  write_corpus(c, dir);
  const Corpus back = read_corpus(dir / "manifest.tsv");
  for (const auto& u : back.utterances) {
    CHECK_FALSE((u.source_lang == "C" && u.target_lang == "N"));
  }
  CHECK(back.utterances.size() == c.utterances.size());
  fs::remove_all(dir);
}

TEST_CASE("regeneration is byte-identical and files round trip") {
  const auto s = make_suite(2, 1, 10, 4, 9);
  CorpusOptions opt;
  opt.train_per_pair = 8;
  opt.test_per_pair = 3;
  opt.seed = 9;
  const fs::path d1 = scratch("a"), d2 = scratch("b");
  write_corpus(generate_corpus(s, parse_pair_set("A>M,B>M"), opt), d1);
  write_corpus(generate_corpus(s, parse_pair_set("A>M,B>M"), opt), d2);
  CHECK(slurp(d1 / "manifest.tsv") == slurp(d2 / "manifest.tsv"));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(d1 / "features")) {
    CHECK(slurp(e.path()) == slurp(d2 / "features" / e.path().filename()));
    ++files;
  }
  CHECK(files == 22);

  const Corpus back = read_corpus(d1 / "manifest.tsv");
  const Corpus fresh = generate_corpus(s, parse_pair_set("A>M,B>M"), opt);
  for (std::size_t i = 0; i < back.utterances.size(); ++i) {
    CHECK(back.utterances[i].id == fresh.utterances[i].id);
    CHECK(back.utterances[i].features.tensor().storage() ==
          fresh.utterances[i].features.tensor().storage());
    CHECK(back.utterances[i].target == fresh.utterances[i].target);
  }

  // Header is two little-endian u64 values.
  const std::string bytes = slurp(d1 / back.utterances[0].feature_path);
  std::uint64_t T = 0, D = 0;
  for (int i = 7; i >= 0; --i) {
    T = (T << 8) | static_cast<unsigned char>(bytes[i]);
    D = (D << 8) | static_cast<unsigned char>(bytes[8 + i]);
  }
  CHECK(T == back.utterances[0].features.frames());
  CHECK(D == 4);
  CHECK(bytes.size() == 16 + 8 * T * D);

  fs::remove(d1 / back.utterances[0].feature_path);
  CHECK_THROWS_AS(read_corpus(d1 / "manifest.tsv"), DataError);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("per-utterance seeds do not depend on generation order") {
  CHECK(derive_seed(1, "A-M-train-000001") == derive_seed(1, "A-M-train-000001"));
  CHECK(derive_seed(1, "A-M-train-000001") != derive_seed(2, "A-M-train-000001"));
  const auto s = make_suite(2, 1, 10, 4, 2);
  CorpusOptions opt;
  opt.train_per_pair = 4;
  opt.test_per_pair = 1;
  const Corpus ab = generate_corpus(s, parse_pair_set("A>M,B>M"), opt);
  const Corpus ba = generate_corpus(s, parse_pair_set("B>M,A>M"), opt);
  for (const auto& u : ab.utterances) {
    const auto it = std::find_if(ba.utterances.begin(), ba.utterances.end(),
                                 [&](const Utterance& v) { return v.id == u.id; });
    REQUIRE(it != ba.utterances.end());
    CHECK(it->features.tensor().storage() == u.features.tensor().storage());
  }
}
