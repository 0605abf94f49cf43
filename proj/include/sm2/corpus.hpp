#pragma once

// Synthetic multilingual speech-translation corpora.
//
// A LanguageSuite fixes a semantic vocabulary. Every source language renders
// a semantic token as its own short sequence of feature frames (a motif);
// every target language renders it as a text token through a bijection.
// Because one semantic sequence underlies all renderings, the generator is an
// exact translator between any source audio and any target text, and the
// experimenter controls exactly which (source, target) pairs get training
// data.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sm2/model.hpp"

namespace sm2::corpus {

using Motif = std::vector<std::vector<double>>;  // frames x D

struct LanguageSuite {
  std::size_t semantic_vocab = 0;
  std::size_t feature_dim = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> source_langs;
  std::vector<std::string> target_langs;
  // motifs[source][semantic]
  std::vector<std::vector<Motif>> motifs;
  // text[target][semantic] in 1..semantic_vocab
  std::vector<std::vector<TokenId>> text;

  std::size_t source_index(const std::string& lang) const;
  std::size_t target_index(const std::string& lang) const;
};

inline constexpr double kMotifDistanceFloor = 0.5;
inline constexpr std::size_t kMinMotifFrames = 2;
inline constexpr std::size_t kMaxMotifFrames = 4;

/// L2 distance between motifs, zero-padding the shorter one.
double motif_distance(const Motif& a, const Motif& b);
/// Smallest distance between any two motifs of different (language, token).
double min_motif_distance(const LanguageSuite& suite);

/// Source languages are named A, B, C, ...; targets M, N, O, ...
LanguageSuite make_suite(std::size_t num_source, std::size_t num_target,
                         std::size_t semantic_vocab, std::size_t feature_dim,
                         std::uint64_t seed);

FeatureSequence render_utterance(const LanguageSuite& suite,
                                 const std::vector<std::size_t>& semantics,
                                 const std::string& source_lang, double sigma,
                                 std::uint64_t noise_seed);

/// Code-switched rendering: token i is spoken in source_langs[i].
FeatureSequence render_code_switched(
    const LanguageSuite& suite, const std::vector<std::size_t>& semantics,
    const std::vector<std::string>& source_langs, double sigma,
    std::uint64_t noise_seed);

std::vector<TokenId> render_text(const LanguageSuite& suite,
                                 const std::vector<std::size_t>& semantics,
                                 const std::string& target_lang);

/// Inverse of the target bijection.
std::vector<std::size_t> text_to_semantics(const LanguageSuite& suite,
                                           const std::vector<TokenId>& text,
                                           const std::string& target_lang);

using LanguagePair = std::pair<std::string, std::string>;  // (source, target)

/// Parses "A>M,B>M" into pairs; throws ContractError on malformed specs.
std::vector<LanguagePair> parse_pair_set(const std::string& spec);
std::string format_pair_set(const std::vector<LanguagePair>& pairs);

struct CorpusOptions {
  std::size_t train_per_pair = 200;
  std::size_t test_per_pair = 50;
  std::size_t min_length = 3;
  std::size_t max_length = 8;
  double sigma = 0.05;
  std::uint64_t seed = 1;
};

struct Utterance {
  std::string id;
  std::string source_lang;
  std::string target_lang;
  std::string feature_path;  // relative to the manifest directory
  std::vector<TokenId> target;
  std::vector<std::size_t> semantics;
  std::string split;  // "train" or "test"
  FeatureSequence features;
};

struct Corpus {
  std::vector<Utterance> utterances;

  std::vector<const Utterance*> select(const std::string& split) const;
  std::map<LanguagePair, std::size_t> pair_histogram(
      const std::string& split) const;
  /// Returns a copy restricted to the given pairs (and split, if nonempty).
  Corpus filter(const std::vector<LanguagePair>& pairs,
                const std::string& split = "") const;
};

/// Test split membership is a function of the semantic sequence alone, so
/// train and test never share a sequence.
bool is_test_sequence(const std::vector<std::size_t>& semantics,
                      std::uint64_t seed);

/// Per-utterance seed derived from the global seed and the utterance id.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& id);

Corpus generate_corpus(const LanguageSuite& suite,
                       const std::vector<LanguagePair>& pairs,
                       const CorpusOptions& options);

/// Writes `<dir>/manifest.tsv` and `<dir>/features/<id>.f64`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& manifest);

/// Feature file: u64 T, u64 D (little-endian), then T*D little-endian f64.
void write_features(const FeatureSequence& features,
                    const std::filesystem::path& path);
FeatureSequence read_features(const std::filesystem::path& path);

}  // namespace sm2::corpus
