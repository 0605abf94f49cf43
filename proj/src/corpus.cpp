#include "sm2/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace sm2::corpus {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string lang_name(char base, std::size_t i) {
  return std::string(1, static_cast<char>(base + i));
}

}  // namespace

std::size_t LanguageSuite::source_index(const std::string& lang) const {
  const auto it = std::find(source_langs.begin(), source_langs.end(), lang);
  if (it == source_langs.end()) {
    throw ContractError("unknown source language '" + lang + "'");
  }
  return static_cast<std::size_t>(it - source_langs.begin());
}

std::size_t LanguageSuite::target_index(const std::string& lang) const {
  const auto it = std::find(target_langs.begin(), target_langs.end(), lang);
  if (it == target_langs.end()) {
    throw ContractError("unknown target language '" + lang + "'");
  }
  return static_cast<std::size_t>(it - target_langs.begin());
}

double motif_distance(const Motif& a, const Motif& b) {
  const std::size_t n = std::max(a.size(), b.size());
  double acc = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    const std::size_t d = f < a.size() ? a[f].size() : b[f].size();
    for (std::size_t i = 0; i < d; ++i) {
      const double x = f < a.size() ? a[f][i] : 0.0;
      const double y = f < b.size() ? b[f][i] : 0.0;
      acc += (x - y) * (x - y);
    }
  }
  return std::sqrt(acc);
}

double min_motif_distance(const LanguageSuite& suite) {
  std::vector<const Motif*> all;
  for (const auto& bank : suite.motifs) {
    for (const auto& m : bank) all.push_back(&m);
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      best = std::min(best, motif_distance(*all[i], *all[j]));
    }
  }
  return best;
}

LanguageSuite make_suite(std::size_t num_source, std::size_t num_target,
                         std::size_t semantic_vocab, std::size_t feature_dim,
                         std::uint64_t seed) {
  if (num_source == 0 || num_target == 0 || semantic_vocab == 0 ||
      feature_dim == 0) {
    throw ContractError("make_suite: all sizes must be positive");
  }
  if (num_source > 12 || num_target > 14) {
    throw ContractError("make_suite: at most 12 sources (A-L) and 14 "
                        "targets (M-Z)");
  }
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> motif_len(kMinMotifFrames,
                                                       kMaxMotifFrames);
  for (int attempt = 0; attempt < 100; ++attempt) {
    LanguageSuite s;
    s.semantic_vocab = semantic_vocab;
    s.feature_dim = feature_dim;
    s.seed = seed;
    for (std::size_t i = 0; i < num_source; ++i) {
      s.source_langs.push_back(lang_name('A', i));
    }
    for (std::size_t i = 0; i < num_target; ++i) {
      s.target_langs.push_back(lang_name('M', i));
    }
    s.motifs.resize(num_source);
    for (auto& bank : s.motifs) {
      bank.resize(semantic_vocab);
      for (auto& motif : bank) {
        motif.resize(motif_len(rng));
        for (auto& frame : motif) {
          frame.resize(feature_dim);
          for (auto& v : frame) v = normal(rng);
        }
      }
    }
    s.text.resize(num_target);
    for (auto& map : s.text) {
      map.resize(semantic_vocab);
      std::iota(map.begin(), map.end(), TokenId{1});
      std::shuffle(map.begin(), map.end(), rng);
    }
    if (min_motif_distance(s) > kMotifDistanceFloor) return s;
  }
  throw DataError("make_suite: motif distinctness floor unreachable after "
                  "100 attempts");
}

FeatureSequence render_code_switched(
    const LanguageSuite& suite, const std::vector<std::size_t>& semantics,
    const std::vector<std::string>& source_langs, double sigma,
    std::uint64_t noise_seed) {
  if (semantics.size() != source_langs.size()) {
    throw ContractError("render: one source language per token required");
  }
  if (semantics.empty()) return {};
  std::vector<double> values;
  std::size_t frames = 0;
  for (std::size_t i = 0; i < semantics.size(); ++i) {
    if (semantics[i] >= suite.semantic_vocab) {
      throw ContractError("render: semantic token " +
                          std::to_string(semantics[i]) + " out of range");
    }
    const Motif& m = suite.motifs[suite.source_index(source_langs[i])]
                                 [semantics[i]];
    for (const auto& f : m) values.insert(values.end(), f.begin(), f.end());
    frames += m.size();
  }
  if (sigma > 0.0) {
    std::mt19937_64 rng(splitmix64(noise_seed));
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto& v : values) v += noise(rng);
  }
  return FeatureSequence(Tensor({frames, suite.feature_dim}, std::move(values)));
}

FeatureSequence render_utterance(const LanguageSuite& suite,
                                 const std::vector<std::size_t>& semantics,
                                 const std::string& source_lang, double sigma,
                                 std::uint64_t noise_seed) {
  return render_code_switched(
      suite, semantics,
      std::vector<std::string>(semantics.size(), source_lang), sigma,
      noise_seed);
}

std::vector<TokenId> render_text(const LanguageSuite& suite,
                                 const std::vector<std::size_t>& semantics,
                                 const std::string& target_lang) {
  const auto& map = suite.text[suite.target_index(target_lang)];
  std::vector<TokenId> out;
  out.reserve(semantics.size());
  for (auto s : semantics) {
    if (s >= suite.semantic_vocab) {
      throw ContractError("render_text: semantic token out of range");
    }
    out.push_back(map[s]);
  }
  return out;
}

std::vector<std::size_t> text_to_semantics(const LanguageSuite& suite,
                                           const std::vector<TokenId>& text,
                                           const std::string& target_lang) {
  const auto& map = suite.text[suite.target_index(target_lang)];
  std::vector<std::size_t> out;
  for (TokenId t : text) {
    const auto it = std::find(map.begin(), map.end(), t);
    if (it == map.end()) throw ContractError("text token outside vocabulary");
    out.push_back(static_cast<std::size_t>(it - map.begin()));
  }
  return out;
}

std::vector<LanguagePair> parse_pair_set(const std::string& spec) {
  std::vector<LanguagePair> pairs;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::erase_if(item, [](unsigned char c) { return std::isspace(c); });
    const auto arrow = item.find('>');
    if (arrow == std::string::npos || arrow == 0 || arrow + 1 == item.size() ||
        item.find('>', arrow + 1) != std::string::npos) {
      throw ContractError("malformed pair '" + item +
                          "' (expected comma list of src>tgt)");
    }
    LanguagePair p{item.substr(0, arrow), item.substr(arrow + 1)};
    if (std::find(pairs.begin(), pairs.end(), p) == pairs.end()) {
      pairs.push_back(std::move(p));
    }
  }
  if (pairs.empty()) throw ContractError("empty pair set");
  return pairs;
}

std::string format_pair_set(const std::vector<LanguagePair>& pairs) {
  std::string out;
  for (const auto& [s, t] : pairs) {
    if (!out.empty()) out += ',';
    out += s + '>' + t;
  }
  return out;
}

std::vector<const Utterance*> Corpus::select(const std::string& split) const {
  std::vector<const Utterance*> out;
  for (const auto& u : utterances) {
    if (split.empty() || u.split == split) out.push_back(&u);
  }
  return out;
}

std::map<LanguagePair, std::size_t> Corpus::pair_histogram(
    const std::string& split) const {
  std::map<LanguagePair, std::size_t> hist;
  for (const auto* u : select(split)) ++hist[{u->source_lang, u->target_lang}];
  return hist;
}

Corpus Corpus::filter(const std::vector<LanguagePair>& pairs,
                      const std::string& split) const {
  Corpus out;
  for (const auto& u : utterances) {
    if (!split.empty() && u.split != split) continue;
    const LanguagePair p{u.source_lang, u.target_lang};
    if (std::find(pairs.begin(), pairs.end(), p) != pairs.end()) {
      out.utterances.push_back(u);
    }
  }
  return out;
}

bool is_test_sequence(const std::vector<std::size_t>& semantics,
                      std::uint64_t seed) {
  std::uint64_t h = splitmix64(seed ^ 0x5eed5eed5eedULL);
  for (auto s : semantics) h = splitmix64(h ^ (s + 1));
  return h % 5 == 0;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& id) {
  return splitmix64(seed ^ fnv1a(id));
}

Corpus generate_corpus(const LanguageSuite& suite,
                       const std::vector<LanguagePair>& pairs,
                       const CorpusOptions& options) {
  if (pairs.empty()) throw ContractError("generate_corpus: empty pair set");
  if (options.min_length < 1 || options.min_length > options.max_length) {
    throw ContractError("generate_corpus: bad length range");
  }
  struct Job {
    const LanguagePair* pair;
    std::string split;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (const auto& p : pairs) {
    suite.source_index(p.first);
    suite.target_index(p.second);
    for (std::size_t i = 0; i < options.train_per_pair; ++i) {
      jobs.push_back({&p, "train", i});
    }
    for (std::size_t i = 0; i < options.test_per_pair; ++i) {
      jobs.push_back({&p, "test", i});
    }
  }
  Corpus corpus;
  corpus.utterances.resize(jobs.size());
  const auto n = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    const Job& job = jobs[static_cast<std::size_t>(j)];
    Utterance& u = corpus.utterances[static_cast<std::size_t>(j)];
    char idx[16];
    std::snprintf(idx, sizeof(idx), "%06zu", job.index);
    u.id = job.pair->first + "-" + job.pair->second + "-" + job.split + "-" +
           idx;
    u.source_lang = job.pair->first;
    u.target_lang = job.pair->second;
    u.split = job.split;
    u.feature_path = "features/" + u.id + ".f64";
    const std::uint64_t useed = derive_seed(options.seed, u.id);
    std::mt19937_64 rng(useed);
    std::uniform_int_distribution<std::size_t> len(options.min_length,
                                                   options.max_length);
    std::uniform_int_distribution<std::size_t> tok(0, suite.semantic_vocab - 1);
    const bool want_test = job.split == "test";
    do {
      u.semantics.resize(len(rng));
      for (auto& s : u.semantics) s = tok(rng);
    } while (is_test_sequence(u.semantics, options.seed) != want_test);
    u.target = render_text(suite, u.semantics, u.target_lang);
    u.features = render_utterance(suite, u.semantics, u.source_lang,
                                  options.sigma, splitmix64(useed));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Files

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) {
    throw DataError("feature file truncated: " + path);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(xs[i]);
  }
  return out;
}

template <typename T>
std::vector<T> parse_ids(const std::string& field, std::size_t lineno) {
  std::vector<T> out;
  std::istringstream is(field);
  std::string tok;
  while (is >> tok) {
    try {
      out.push_back(static_cast<T>(std::stoull(tok)));
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(lineno) +
                      ": bad id '" + tok + "'");
    }
  }
  return out;
}

}  // namespace

void write_features(const FeatureSequence& features,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  put_u64(out, features.frames());
  put_u64(out, features.dim());
  if (!features.empty()) {
    for (double v : features.tensor().values()) {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!out) throw DataError("failed writing " + path.string());
}

FeatureSequence read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing feature file: " + path.string());
  const auto t = get_u64(in, path.string());
  const auto d = get_u64(in, path.string());
  if (t == 0) return {};
  if (d == 0 || t > (1u << 24) || d > (1u << 16)) {
    throw DataError("implausible feature header in " + path.string());
  }
  std::vector<double> values(t * d);
  for (auto& v : values) v = std::bit_cast<double>(get_u64(in, path.string()));
  return FeatureSequence(Tensor({t, d}, std::move(values)));
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  std::ofstream manifest(dir / "manifest.tsv", std::ios::binary);
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  for (const auto& u : corpus.utterances) {
    manifest << u.id << '\t' << u.source_lang << '\t' << u.target_lang << '\t'
             << u.feature_path << '\t' << join(u.target) << '\t'
             << join(u.semantics) << '\t' << u.split << '\n';
    write_features(u.features, dir / u.feature_path);
  }
  if (!manifest) throw DataError("failed writing manifest");
}

Corpus read_corpus(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find('\t', start);
      f.push_back(line.substr(start, pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (f.size() != 7) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " +
                      std::to_string(f.size()) + " fields, expected 7");
    }
    Utterance u;
    u.id = f[0];
    u.source_lang = f[1];
    u.target_lang = f[2];
    u.feature_path = f[3];
    u.target = parse_ids<TokenId>(f[4], lineno);
    u.semantics = parse_ids<std::size_t>(f[5], lineno);
    u.split = f[6];
    u.features = read_features(base / u.feature_path);
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

}  // namespace sm2::corpus
