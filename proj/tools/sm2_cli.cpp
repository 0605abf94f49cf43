// sm2: command-line front end. One subcommand per pipeline stage; see
// `sm2 --help` for the list.
//
// Exit codes: 0 success, 1 usage error, 2 verification failure,
// 3 runtime or data error.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "sm2/attention_mask.hpp"
#include "sm2/corpus.hpp"
#include "sm2/decoder.hpp"
#include "sm2/kernels.hpp"
#include "sm2/kv_config.hpp"
#include "sm2/metrics.hpp"
#include "sm2/model.hpp"
#include "sm2/trainer.hpp"
#include "sm2/verify.hpp"

namespace fs = std::filesystem;
using namespace sm2;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitVerify = 2;
constexpr int kExitRuntime = 3;

struct Args {
  std::string config;
  std::uint64_t seed = 1;

  // gen-data
  std::uint64_t suite_seed = 1;
  std::size_t sources = 4;
  std::size_t targets = 2;
  std::string pairs;
  std::string out;
  std::size_t vocab = 20;
  std::size_t feature_dim = 16;
  std::size_t train_per_pair = 200;
  std::size_t test_per_pair = 50;
  std::size_t min_length = 3;
  std::size_t max_length = 8;
  double sigma = 0.05;

  // model / training
  std::string data;
  std::string model;
  std::string target = "M";
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  std::size_t layers = 4;
  std::size_t predictor_dim = 64;
  std::size_t joint_dim = 64;
  std::size_t chunk_frames = 4;
  std::size_t left_chunks = 1;
  bool offline = false;
  TrainConfig train;
  std::string loss_trace;

  // decode / eval / latency
  std::string split = "test";
  std::size_t beam = 1;
  std::size_t max_symbols = 5;
  std::string log;
  std::string unit = "frames";

  // verify
  std::string fault;
};

void add_seed(CLI::App* sub, Args& a) {
  sub->add_option("--config", a.config,
                  "key=value file; keys are long flag names, flags override it")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", a.seed, "Seed for all randomness");
}

void add_mask(CLI::App* sub, Args& a) {
  sub->add_option("--chunk-frames", a.chunk_frames, "Chunk size U in frames")
      ->check(CLI::PositiveNumber);
  sub->add_option("--left-chunks", a.left_chunks,
                  "Left chunks L visible per layer");
  sub->add_flag("--offline", a.offline,
                "Full-utterance attention (overrides --chunk-frames)");
}

void add_train(CLI::App* sub, Args& a) {
  sub->add_option("--lr", a.train.learning_rate, "Peak learning rate")
      ->check(CLI::PositiveNumber);
  sub->add_option("--warmup", a.train.warmup_steps, "Warmup steps")
      ->check(CLI::PositiveNumber);
  sub->add_option("--batch", a.train.batch_size, "Utterances per batch")
      ->check(CLI::PositiveNumber);
  sub->add_option("--steps", a.train.max_steps, "Optimizer steps")
      ->check(CLI::PositiveNumber);
  sub->add_option("--clip", a.train.clip_norm, "Global gradient-norm clip")
      ->check(CLI::PositiveNumber);
  sub->add_option("--eval-interval", a.train.eval_interval,
                  "Steps between progress lines")
      ->check(CLI::PositiveNumber);
  sub->add_option("--loss-trace", a.loss_trace, "Write step/loss/lr TSV here");
}

void add_decode(CLI::App* sub, Args& a) {
  sub->add_option("--model", a.model, "Checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--data", a.data, "Corpus manifest.tsv")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--target", a.target, "Target language (branch)");
  sub->add_option("--pairs", a.pairs, "Restrict to these pairs, e.g. C>N,D>N");
  sub->add_option("--split", a.split, "Corpus split")
      ->check(CLI::IsMember({"train", "test"}));
  sub->add_option("--beam", a.beam, "Beam width (1 = greedy)")
      ->check(CLI::Range(std::size_t{1}, DecodeConfig::kMaxBeam));
  sub->add_option("--max-symbols", a.max_symbols, "Max tokens per frame")
      ->check(CLI::PositiveNumber);
  add_mask(sub, a);
}

struct Commands {
  CLI::App* gen = nullptr;
  CLI::App* train = nullptr;
  CLI::App* expand = nullptr;
  CLI::App* decode = nullptr;
  CLI::App* eval = nullptr;
  CLI::App* latency = nullptr;
  CLI::App* verify = nullptr;
};

Commands build(CLI::App& app, Args& a) {
  app.require_subcommand(1, 1);
  app.option_defaults()->always_capture_default();
  Commands c;

  c.gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  add_seed(c.gen, a);
  c.gen->add_option("--suite-seed", a.suite_seed, "Seed of the language suite");
  c.gen->add_option("--sources", a.sources, "Number of source languages")
      ->check(CLI::Range(1, 12));
  c.gen->add_option("--targets", a.targets, "Number of target languages")
      ->check(CLI::Range(1, 14));
  c.gen->add_option("--pairs", a.pairs, "Pairs to generate, e.g. A>M,B>M")
      ->required();
  c.gen->add_option("--out", a.out, "Output directory")->required();
  c.gen->add_option("--vocab", a.vocab, "Semantic vocabulary size")
      ->check(CLI::PositiveNumber);
  c.gen->add_option("--feature-dim", a.feature_dim, "Feature dimension D")
      ->check(CLI::PositiveNumber);
  c.gen->add_option("--train-per-pair", a.train_per_pair, "Train utterances");
  c.gen->add_option("--test-per-pair", a.test_per_pair, "Test utterances");
  c.gen->add_option("--min-length", a.min_length, "Min tokens per utterance")
      ->check(CLI::PositiveNumber);
  c.gen->add_option("--max-length", a.max_length, "Max tokens per utterance")
      ->check(CLI::PositiveNumber);
  c.gen->add_option("--sigma", a.sigma, "Feature noise std")
      ->check(CLI::NonNegativeNumber);

  c.train = app.add_subcommand("train", "Train encoder and one branch");
  add_seed(c.train, a);
  c.train->add_option("--data", a.data, "Corpus manifest.tsv")
      ->required()
      ->check(CLI::ExistingFile);
  c.train->add_option("--out", a.out, "Checkpoint to write")->required();
  c.train->add_option("--target", a.target, "Target language of the branch");
  c.train->add_option("--pairs", a.pairs, "Restrict training to these pairs");
  c.train->add_option("--vocab", a.vocab, "Branch vocabulary size")
      ->check(CLI::PositiveNumber);
  c.train->add_option("--hidden", a.hidden, "Encoder width H")
      ->check(CLI::PositiveNumber);
  c.train->add_option("--heads", a.heads, "Attention heads")
      ->check(CLI::PositiveNumber);
  c.train->add_option("--ff-dim", a.ff_dim, "Feedforward width")
      ->check(CLI::PositiveNumber);
  c.train->add_option("--layers", a.layers, "Encoder layers")
      ->check(CLI::PositiveNumber);
  c.train->add_option("--predictor-dim", a.predictor_dim, "Predictor width")
      ->check(CLI::PositiveNumber);
  c.train->add_option("--joint-dim", a.joint_dim, "Joint width")
      ->check(CLI::PositiveNumber);
  add_mask(c.train, a);
  add_train(c.train, a);

  c.expand = app.add_subcommand(
      "expand", "Add a branch trained on a frozen encoder");
  add_seed(c.expand, a);
  c.expand->add_option("--model", a.model, "Checkpoint to extend")
      ->required()
      ->check(CLI::ExistingFile);
  c.expand->add_option("--data", a.data, "Corpus manifest.tsv")
      ->required()
      ->check(CLI::ExistingFile);
  c.expand->add_option("--out", a.out, "Checkpoint to write")->required();
  c.expand->add_option("--target", a.target, "New target language")->required();
  c.expand->add_option("--pairs", a.pairs, "Training pairs, e.g. A>N,B>N")
      ->required();
  c.expand->add_option("--vocab", a.vocab, "Branch vocabulary size")
      ->check(CLI::PositiveNumber);
  add_train(c.expand, a);

  c.decode = app.add_subcommand("decode", "Stream-decode a split to a log");
  add_seed(c.decode, a);
  add_decode(c.decode, a);
  c.decode->add_option("--out", a.out, "Decode log TSV")->required();

  c.eval = app.add_subcommand("eval", "Decode and score quality and latency");
  add_seed(c.eval, a);
  add_decode(c.eval, a);
  c.eval->add_option("--out", a.out, "Report TSV");

  c.latency = app.add_subcommand("latency", "AP/AL/DAL of a decode log");
  add_seed(c.latency, a);
  c.latency->add_option("--log", a.log, "Decode log TSV")
      ->required()
      ->check(CLI::ExistingFile);
  c.latency->add_option("--unit", a.unit, "Report AL/DAL in frames or ms")
      ->check(CLI::IsMember({"frames", "ms"}));
  c.latency->add_option("--out", a.out, "Per-utterance TSV");

  c.verify = app.add_subcommand("verify", "Run the built-in oracle checks");
  add_seed(c.verify, a);
  c.verify->add_option("--fault", a.fault,
                       "Inject a known bug to show the checks catch it")
      ->check(CLI::IsMember({"", "mask-off-by-one"}));
  return c;
}

std::string long_name(const CLI::Option* o) {
  const auto& names = o->get_lnames();
  return names.empty() ? std::string() : names.front();
}

bool is_flag(const CLI::Option* o) { return o->get_expected_max() == 0; }

// Options of `sub` that a config file may set.
std::set<std::string> config_keys(const CLI::App* sub) {
  std::set<std::string> keys;
  for (const CLI::Option* o : sub->get_options()) {
    const std::string n = long_name(o);
    if (!n.empty() && n != "help" && n != "config") keys.insert(n);
  }
  return keys;
}

// Config-file values for options not given on the command line.
std::vector<std::string> config_args(const CLI::App* sub,
                                     const std::string& path) {
  const auto kv = read_key_value_file(path, config_keys(sub));
  std::vector<std::string> extra;
  for (const auto& [key, value] : kv) {
    const CLI::Option* o = sub->get_option("--" + key);
    if (o->count() > 0) continue;
    if (is_flag(o)) {
      if (value == "true" || value == "1") extra.push_back("--" + key);
      else if (value != "false" && value != "0") {
        throw ContractError("config: flag " + key + " needs true or false");
      }
    } else {
      extra.push_back("--" + key + "=" + value);
    }
  }
  return extra;
}

// Every option of the chosen subcommand with its effective value, in the
// same key=value syntax --config accepts.
void print_banner(const CLI::App* sub) {
  std::cout << "# sm2 " << sub->get_name() << " effective config\n";
  for (const CLI::Option* o : sub->get_options()) {
    const std::string n = long_name(o);
    if (n.empty() || n == "help" || n == "config") continue;
    std::string v;
    if (is_flag(o)) {
      v = o->count() > 0 ? "true" : "false";
    } else if (o->count() > 0) {
      v = o->results().back();
    } else {
      v = o->get_default_str();
    }
    std::cout << "# " << n << '=' << v << '\n';
  }
  std::cout << "# threads=" << kernels::max_threads() << '\n';
}

// Output files go into existing directories; checked before any work.
void require_parent_dir(const std::string& path) {
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) {
    throw DataError("output directory does not exist: " + parent.string());
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

ChunkMaskSpec mask_from(const Args& a, std::size_t layers) {
  ChunkMaskSpec spec{a.offline ? kOfflineChunk : a.chunk_frames,
                     a.left_chunks, layers};
  spec.validate();
  return spec;
}

corpus::Corpus load_corpus(const Args& a, const std::string& split) {
  corpus::Corpus c = corpus::read_corpus(a.data);
  std::vector<corpus::LanguagePair> pairs;
  if (!a.pairs.empty()) {
    pairs = corpus::parse_pair_set(a.pairs);
  } else {
    std::set<corpus::LanguagePair> seen;
    for (const auto& u : c.utterances) {
      if (u.target_lang == a.target) seen.insert({u.source_lang, u.target_lang});
    }
    pairs.assign(seen.begin(), seen.end());
  }
  for (const auto& p : pairs) {
    if (p.second != a.target) {
      throw ContractError("pair " + p.first + ">" + p.second +
                          " does not target " + a.target);
    }
  }
  corpus::Corpus out = c.filter(pairs, split);
  if (out.utterances.empty()) {
    throw DataError("no " + split + " utterances for target " + a.target +
                    " in " + a.data);
  }
  return out;
}

std::vector<const corpus::Utterance*> pointers(const corpus::Corpus& c) {
  std::vector<const corpus::Utterance*> out;
  for (const auto& u : c.utterances) out.push_back(&u);
  return out;
}

TrainHooks progress_hooks(const TrainConfig& cfg) {
  TrainHooks hooks;
  hooks.on_step = [interval = cfg.eval_interval,
                   last = cfg.max_steps](const LossRecord& r) {
    if (r.step == 1 || r.step % interval == 0 || r.step == last) {
      std::cout << "step " << r.step << "  loss " << std::setprecision(5)
                << r.loss << "  lr " << r.lr << std::endl;
    }
  };
  return hooks;
}

void print_histogram(const corpus::Corpus& c) {
  std::cout << "pair\ttrain\ttest\n";
  const auto train = c.pair_histogram("train");
  const auto test = c.pair_histogram("test");
  std::set<corpus::LanguagePair> all;
  for (const auto& [p, n] : train) all.insert(p);
  for (const auto& [p, n] : test) all.insert(p);
  for (const auto& p : all) {
    std::cout << p.first << '>' << p.second << '\t'
              << (train.contains(p) ? train.at(p) : 0) << '\t'
              << (test.contains(p) ? test.at(p) : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------

int run_gen(const Args& a) {
  const auto pairs = corpus::parse_pair_set(a.pairs);
  if (a.min_length > a.max_length) {
    throw ContractError("--min-length exceeds --max-length");
  }
  fs::create_directories(a.out);
  const auto suite = corpus::make_suite(a.sources, a.targets, a.vocab,
                                        a.feature_dim, a.suite_seed);
  for (const auto& [src, tgt] : pairs) {
    suite.source_index(src);
    suite.target_index(tgt);
  }
  corpus::CorpusOptions opt;
  opt.train_per_pair = a.train_per_pair;
  opt.test_per_pair = a.test_per_pair;
  opt.min_length = a.min_length;
  opt.max_length = a.max_length;
  opt.sigma = a.sigma;
  opt.seed = a.seed;
  const corpus::Corpus c = corpus::generate_corpus(suite, pairs, opt);
  corpus::write_corpus(c, a.out);

  // Enough to regenerate the suite; training itself never reads it.
  std::ofstream s = open_out((fs::path(a.out) / "suite.cfg").string());
  s << "suite-seed=" << a.suite_seed << "\nsources=" << a.sources
    << "\ntargets=" << a.targets << "\nvocab=" << a.vocab
    << "\nfeature-dim=" << a.feature_dim << '\n';
  std::cout << "wrote " << c.utterances.size() << " utterances to " << a.out
            << " (min motif distance " << std::setprecision(4)
            << corpus::min_motif_distance(suite) << ")\n";
  print_histogram(c);
  return 0;
}

int run_train(const Args& a) {
  require_parent_dir(a.out);
  if (!a.loss_trace.empty()) require_parent_dir(a.loss_trace);
  const corpus::Corpus data = load_corpus(a, "train");

  ModelConfig mc;
  mc.feature_dim = data.utterances.front().features.dim();
  mc.hidden = a.hidden;
  mc.heads = a.heads;
  mc.ff_dim = a.ff_dim;
  mc.encoder_layers = a.layers;
  mc.predictor_dim = a.predictor_dim;
  mc.joint_dim = a.joint_dim;
  mc.mask = mask_from(a, a.layers);
  mc.seed = a.seed;
  Model model(mc);
  const BranchId b = model.add_branch(a.target, a.vocab, a.seed);
  std::cout << "params: encoder " << model.encoder_param_count() << ", branch "
            << model.branch_param_count(b) << ", train utterances "
            << data.utterances.size() << '\n';

  TrainConfig cfg = a.train;
  cfg.seed = a.seed;
  const TrainResult r =
      train(model, pointers(data), b, cfg, progress_hooks(cfg));
  model.save(a.out);
  if (!a.loss_trace.empty()) {
    std::ofstream t = open_out(a.loss_trace);
    write_loss_trace(t, r.trace);
  }
  std::cout << "saved " << a.out << '\n';
  return 0;
}

int run_expand(const Args& a) {
  require_parent_dir(a.out);
  if (!a.loss_trace.empty()) require_parent_dir(a.loss_trace);
  Model model = Model::load(a.model);
  const corpus::Corpus data = corpus::read_corpus(a.data);

  ExpansionPlan plan;
  plan.new_target = a.target;
  plan.vocab_size = a.vocab;
  plan.pairs = corpus::parse_pair_set(a.pairs);
  plan.config = a.train;
  plan.config.seed = a.seed;
  plan.branch_seed = a.seed;
  const std::size_t before = model.param_count();
  TrainResult r;
  const BranchId b =
      expand(model, data, plan, &r, progress_hooks(plan.config));
  std::cout << "added branch " << a.target << ": "
            << model.param_count() - before << " params ("
            << model.branch_param_count(b) << " in branch)\n";
  model.save(a.out);
  if (!a.loss_trace.empty()) {
    std::ofstream t = open_out(a.loss_trace);
    write_loss_trace(t, r.trace);
  }
  std::cout << "saved " << a.out << '\n';
  return 0;
}

EvalResult run_decoding(const Args& a) {
  const Model model = Model::load(a.model);
  const corpus::Corpus data = load_corpus(a, a.split);
  DecodeConfig dc;
  dc.beam = a.beam;
  dc.max_symbols_per_frame = a.max_symbols;
  dc.branch = model.branch(a.target).id;
  dc.mask = mask_from(a, model.config().encoder_layers);
  dc.validate();
  return evaluate(model, dc.branch, pointers(data), dc);
}

void print_summary(const EvalResult& r) {
  std::cout << std::fixed << std::setprecision(4)
            << "utterances\t" << r.quality.sentences << '\n'
            << "token_accuracy\t" << r.quality.token_accuracy << '\n'
            << "wer\t" << r.quality.wer << '\n'
            << "bleu\t" << r.quality.bleu << '\n'
            << "ap\t" << r.latency.ap << '\n'
            << "al_frames\t" << r.latency.al << '\n'
            << "dal_frames\t" << r.latency.dal << '\n';
}

int run_decode(const Args& a) {
  require_parent_dir(a.out);
  const EvalResult r = run_decoding(a);
  std::ofstream out = open_out(a.out);
  write_decode_log(out, r.log);
  std::cout << "wrote " << r.log.size() << " hypotheses to " << a.out << '\n';
  print_summary(r);
  return 0;
}

int run_eval(const Args& a) {
  if (!a.out.empty()) require_parent_dir(a.out);
  const EvalResult r = run_decoding(a);
  print_summary(r);
  if (!a.out.empty()) {
    std::ofstream out = open_out(a.out);
    metrics::write_report(out, &r.quality, &r.latency);
  }
  return 0;
}

int run_latency(const Args& a) {
  if (!a.out.empty()) require_parent_dir(a.out);
  std::ifstream in(a.log);
  if (!in) throw DataError("cannot read " + a.log);
  const auto log = read_decode_log(in);
  const double scale = a.unit == "ms" ? metrics::kMillisecondsPerFrame : 1.0;
  const metrics::LatencyReport r = metrics::latency(log, scale);
  std::cout << std::setprecision(6) << "AP=" << r.ap << '\n'
            << "AL=" << r.al << ' ' << a.unit << '\n'
            << "DAL=" << r.dal << ' ' << a.unit << '\n'
            << "utterances=" << r.utterances << " skipped_empty=" << r.skipped
            << '\n';
  if (!a.out.empty()) {
    std::ofstream out = open_out(a.out);
    metrics::write_latency_tsv(out, r);
  }
  return 0;
}

int run_verify(const Args& a) {
  verify::VerifyOptions opt;
  opt.seed = a.seed;
  if (a.fault == "mask-off-by-one") {
    // Lets a query see one frame past the end of its chunk.
    opt.mask_builder = [](std::size_t frames, const ChunkMaskSpec& spec) {
      AttnMask m = build_chunk_mask(frames, spec);
      for (std::size_t q = 0; q < frames; ++q) {
        const std::size_t next = chunk_last(chunk_index(q, spec), frames, spec) + 1;
        if (next < frames) m.set(q, next, true);
      }
      return m;
    };
  }
  const auto results = verify::run_all(opt);
  verify::print_table(std::cout, results);
  for (const auto& r : results) {
    if (!r.passed) return kExitVerify;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Args args;
  auto app = std::make_unique<CLI::App>(
      "sm2: streaming multilingual transducer toolkit");
  Commands cmd = build(*app, args);
  try {
    app->parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app->exit(e) == 0 ? 0 : kExitUsage;
  }

  if (!args.config.empty()) {
    // Reparse with the file's values appended after the command line.
    std::vector<std::string> all(argv, argv + argc);
    try {
      const auto extra = config_args(app->get_subcommands().front(), args.config);
      all.insert(all.end(), extra.begin(), extra.end());
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitUsage;
    }
    std::vector<char*> ptrs;
    for (auto& s : all) ptrs.push_back(s.data());
    args = Args{};
    app = std::make_unique<CLI::App>(
        "sm2: streaming multilingual transducer toolkit");
    cmd = build(*app, args);
    try {
      app->parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const CLI::ParseError& e) {
      return app->exit(e) == 0 ? 0 : kExitUsage;
    }
  }
  const CLI::App* sub = app->get_subcommands().front();
  print_banner(sub);

  try {
    if (sub == cmd.gen) return run_gen(args);
    if (sub == cmd.train) return run_train(args);
    if (sub == cmd.expand) return run_expand(args);
    if (sub == cmd.decode) return run_decode(args);
    if (sub == cmd.eval) return run_eval(args);
    if (sub == cmd.latency) return run_latency(args);
    if (sub == cmd.verify) return run_verify(args);
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
