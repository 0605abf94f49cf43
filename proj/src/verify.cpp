#include "sm2/verify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "sm2/decoder.hpp"
#include "sm2/metrics.hpp"
#include "sm2/trainer.hpp"
#include "sm2/transducer_loss.hpp"

namespace sm2::verify {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific << v;
  return os.str();
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

using OpFn = std::function<ad::Var(std::vector<ad::Var>&)>;

// Worst FD relative error of sum(op(inputs) * R) w.r.t. every input.
double op_grad_error(const OpFn& op, std::vector<Tensor> inputs,
                     std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xabcdefULL);
  Tensor weights;
  auto evaluate = [&](bool with_backward) {
    ad::Graph g;
    std::vector<ad::Var> vars;
    for (auto& t : inputs) vars.push_back(g.leaf(t));
    ad::Var out = op(vars);
    if (weights.size() != out.value().size()) {
      weights = random_tensor(out.shape(), rng);
    }
    ad::Var loss = ad::sum(ad::mul(out, g.constant(weights)));
    if (with_backward) {
      g.backward(loss);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        inputs[i].grad() = vars[i].grad();
      }
    }
    return loss.value()[0];
  };
  evaluate(true);
  std::vector<Tensor*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);
  return ad::grad_check([&] { return evaluate(false); }, ptrs);
}

}  // namespace

std::vector<std::size_t> reachable_frames(const AttnMask& mask, std::size_t t,
                                          std::size_t layers) {
  const std::size_t n = mask.frames();
  std::vector<bool> frontier(n, false);
  frontier[t] = true;
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<bool> next(n, false);
    for (std::size_t q = 0; q < n; ++q) {
      if (!frontier[q]) continue;
      for (std::size_t k = 0; k < n; ++k) {
        if (mask(q, k)) next[k] = true;
      }
    }
    frontier = std::move(next);
  }
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < n; ++k) {
    if (frontier[k]) out.push_back(k);
  }
  return out;
}

double end_to_end_grad_error(Model& model, BranchId branch,
                             const FeatureSequence& features,
                             const std::vector<TokenId>& target,
                             const ChunkMaskSpec& spec, double h) {
  {
    ad::Graph g;
    ad::Var loss = utterance_nll(g, model, branch, features, target, spec);
    g.backward(loss);
    ad::GradBuffer grads(model.params());
    g.accumulate_param_grads(grads);
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      model.params().at(i).tensor.grad() = grads[i];
    }
  }
  std::vector<Tensor*> ptrs;
  for (auto& p : model.params()) {
    if (p.trainable) ptrs.push_back(&p.tensor);
  }
  auto f = [&] {
    ad::Graph g;
    return utterance_nll(g, model, branch, features, target, spec).value()[0];
  };
  const double err = ad::grad_check(f, ptrs, h);
  for (auto& p : model.params()) p.tensor.grad().clear();
  return err;
}

Tensor random_log_probs(std::size_t frames, std::size_t labels,
                        std::size_t outputs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.5);
  Tensor t({frames, labels + 1, outputs});
  const std::size_t rows = frames * (labels + 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -1e300;
    for (std::size_t k = 0; k < outputs; ++k) {
      t[r * outputs + k] = d(rng);
      mx = std::max(mx, t[r * outputs + k]);
    }
    double s = 0.0;
    for (std::size_t k = 0; k < outputs; ++k) s += std::exp(t[r * outputs + k] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t k = 0; k < outputs; ++k) t[r * outputs + k] -= lse;
  }
  return t;
}

ModelConfig tiny_config(std::uint64_t seed) {
  ModelConfig c;
  c.feature_dim = 4;
  c.hidden = 8;
  c.heads = 2;
  c.ff_dim = 8;
  c.encoder_layers = 2;
  c.predictor_layers = 1;
  c.predictor_dim = 6;
  c.joint_dim = 6;
  c.mask = {2, 1, 2};
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------

CheckResult check_mask_figure(const VerifyOptions& opt) {
  CheckResult r{"mask: U=3 L=1 frame f10 sees f7..f12", false, ""};
  const ChunkMaskSpec spec{3, 1, 1};
  const AttnMask mask = opt.mask_builder(12, spec);
  const auto keys = mask.visible(from_one_based(10));
  std::vector<std::size_t> expected;
  for (std::size_t f = 7; f <= 12; ++f) expected.push_back(from_one_based(f));
  r.passed = keys == expected;
  std::ostringstream os;
  os << "visible:";
  for (auto k : keys) os << ' ' << to_one_based(k);
  r.detail = os.str();
  return r;
}

CheckResult check_receptive_fields(const VerifyOptions& opt) {
  CheckResult r{"mask: receptive fields == boolean composition", true, ""};
  std::size_t configs = 0;
  for (std::size_t frames : {1u, 5u, 12u, 17u, 32u}) {
    for (std::size_t u = 1; u <= 5; ++u) {
      for (std::size_t l = 0; l <= 3; ++l) {
        const ChunkMaskSpec spec{u, l, 4};
        const AttnMask mask = opt.mask_builder(frames, spec);
        for (std::size_t layer = 1; layer <= 4; ++layer) {
          for (std::size_t t = 0; t < frames; ++t) {
            const auto reach = reachable_frames(mask, t, layer);
            const FrameRange rf = receptive_field(t, layer, frames, spec);
            const bool ok = !reach.empty() && reach.front() == rf.first &&
                            reach.back() == rf.last &&
                            reach.size() == rf.last - rf.first + 1;
            if (!ok && r.passed) {
              r.passed = false;
              r.detail = "mismatch at T=" + std::to_string(frames) +
                         " U=" + std::to_string(u) + " L=" + std::to_string(l) +
                         " layer=" + std::to_string(layer) +
                         " t=" + std::to_string(to_one_based(t));
            }
          }
        }
        ++configs;
      }
    }
  }
  if (r.passed) r.detail = std::to_string(configs) + " configs";
  return r;
}

CheckResult check_lattice_brute_force(const VerifyOptions& opt,
                                      std::size_t instances) {
  CheckResult r{"loss: lattice == alignment enumeration (1e-9)", true, ""};
  std::mt19937_64 rng(opt.seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t T = 1 + rng() % 4, U = rng() % 4, V = 2 + rng() % 3;
    std::vector<TokenId> target(U);
    for (auto& y : target) y = static_cast<TokenId>(1 + rng() % (V - 1));
    const Tensor lp = random_log_probs(T, U, V, rng());
    worst = std::max(worst, std::abs(rnnt::loss(lp, target) -
                                     rnnt::brute_force_nll(lp, target)));
  }
  r.passed = worst < 1e-9;
  r.detail = std::to_string(instances) + " instances, max diff " + fmt(worst);
  return r;
}

CheckResult check_op_gradients(const VerifyOptions& opt) {
  CheckResult r{"autodiff: per-op finite differences (1e-5)", true, ""};
  std::vector<std::pair<std::string, std::function<double(std::uint64_t)>>> ops;
  auto shapes = [](std::initializer_list<Shape> s) { return std::vector<Shape>(s); };
  auto make = [&](const std::string& name, OpFn fn, std::vector<Shape> in,
                  double lo = -1.0, double hi = 1.0) {
    ops.emplace_back(name, [fn, in, lo, hi](std::uint64_t seed) {
      std::mt19937_64 rng(seed);
      std::vector<Tensor> inputs;
      for (const auto& s : in) inputs.push_back(random_tensor(s, rng, lo, hi));
      return op_grad_error(fn, std::move(inputs), seed);
    });
  };
  make("matmul", [](auto& v) { return ad::matmul(v[0], v[1]); },
       shapes({{4, 5}, {5, 3}}));
  make("add", [](auto& v) { return ad::add(v[0], v[1]); }, shapes({{3, 4}, {3, 4}}));
  make("sub", [](auto& v) { return ad::sub(v[0], v[1]); }, shapes({{3, 4}, {3, 4}}));
  make("mul", [](auto& v) { return ad::mul(v[0], v[1]); }, shapes({{3, 4}, {3, 4}}));
  make("scale", [](auto& v) { return ad::scale(v[0], -1.7); }, shapes({{2, 3}}));
  make("add_row", [](auto& v) { return ad::add_row(v[0], v[1]); },
       shapes({{3, 4}, {4}}));
  make("outer_add", [](auto& v) { return ad::outer_add(v[0], v[1]); },
       shapes({{3, 4}, {2, 4}}));
  make("transpose", [](auto& v) { return ad::transpose(v[0]); }, shapes({{3, 5}}));
  make("sigmoid", [](auto& v) { return ad::sigmoid(v[0]); }, shapes({{3, 4}}), -3, 3);
  make("tanh", [](auto& v) { return ad::tanh(v[0]); }, shapes({{3, 4}}), -2, 2);
  // Inputs kept away from the kink at 0.
  make("relu", [](auto& v) { return ad::relu(v[0]); }, shapes({{3, 4}}), 0.1, 1.0);
  make("relu_neg", [](auto& v) { return ad::relu(ad::scale(v[0], -1.0)); },
       shapes({{3, 4}}), 0.1, 1.0);
  make("embedding", [](auto& v) {
         const std::size_t ids[] = {2, 0, 2, 1};
         return ad::embedding(v[0], ids);
       }, shapes({{3, 5}}));
  make("layer_norm", [](auto& v) { return ad::layer_norm(v[0], v[1], v[2]); },
       shapes({{3, 8}, {8}, {8}}));
  make("log_softmax", [](auto& v) { return ad::log_softmax(v[0]); },
       shapes({{3, 7}}), -3, 3);
  make("masked_softmax", [](auto& v) {
         static const bool mask[] = {1, 0, 1, 1, 1, 1, 0, 0, 0, 1, 1, 0};
         return ad::masked_softmax(v[0], mask);
       }, shapes({{3, 4}}), -2, 2);
  make("sum", [](auto& v) { return ad::sum(v[0]); }, shapes({{3, 4}}));
  make("slice_rows", [](auto& v) { return ad::slice_rows(v[0], 1, 3); },
       shapes({{4, 3}}));
  make("slice_cols", [](auto& v) { return ad::slice_cols(v[0], 1, 3); },
       shapes({{4, 3}}));
  make("concat_rows", [](auto& v) {
         const ad::Var parts[] = {v[0], v[1]};
         return ad::concat_rows(parts);
       }, shapes({{2, 3}, {1, 3}}));
  make("concat_cols", [](auto& v) {
         const ad::Var parts[] = {v[0], v[1]};
         return ad::concat_cols(parts);
       }, shapes({{2, 3}, {2, 2}}));

  double worst = 0.0;
  std::string worst_op;
  for (const auto& [name, run] : ops) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const double e = run(opt.seed * 1000 + s);
      if (e > worst) {
        worst = e;
        worst_op = name;
      }
    }
  }
  r.passed = worst < 1e-5;
  r.detail = std::to_string(ops.size()) + " ops x 10 seeds, worst " +
             fmt(worst) + (worst_op.empty() ? "" : " (" + worst_op + ")");
  return r;
}

CheckResult check_end_to_end_gradients(const VerifyOptions& opt) {
  CheckResult r{"autodiff: end-to-end T=6 U=3 gradients (1e-4)", false, ""};
  Model model(tiny_config(opt.seed));
  const BranchId b = model.add_branch("M", 3, opt.seed + 7);
  std::mt19937_64 rng(opt.seed);
  const FeatureSequence x(random_tensor({6, 4}, rng));
  const std::vector<TokenId> y = {1, 3, 2};
  const double err = end_to_end_grad_error(model, b, x, y, model.config().mask);
  r.passed = err < 1e-4;
  r.detail = std::to_string(model.param_count()) + " params, worst " + fmt(err);
  return r;
}

CheckResult check_streaming_equivalence(const VerifyOptions& opt) {
  CheckResult r{"streaming: incremental == offline (1e-10, same tokens)", true,
                ""};
  std::mt19937_64 rng(opt.seed);
  double worst = 0.0;
  std::size_t configs = 0;
  for (std::size_t u : {1u, 2u, 4u}) {
    for (std::size_t l : {0u, 1u, 2u}) {
      Model model(tiny_config(opt.seed + u * 10 + l));
      const BranchId b = model.add_branch("M", 3, opt.seed);
      const ChunkMaskSpec spec{u, l, model.config().encoder_layers};
      const std::size_t frames = 5 + rng() % 10;
      const FeatureSequence x(random_tensor({frames, 4}, rng));
      const EncoderOutput offline = model.encode(x, spec);
      StreamState st = model.start_stream(spec);
      for (const auto& c : split_into_chunks(x, spec)) {
        const EncoderOutput part = model.encode_incremental(st, c);
        for (std::size_t i = 0; i < part.hidden.size(); ++i) {
          worst = std::max(worst, std::abs(part.hidden[i] -
                                           offline.hidden[part.first_frame *
                                                              model.config().hidden +
                                                          i]));
        }
      }
      DecodeConfig dc;
      dc.branch = b;
      dc.mask = spec;
      const auto streamed = greedy_stream_decode(model, split_into_chunks(x, spec), dc);
      const auto oneshot = decode_encoded(model, offline, dc,
                                          StreamingDecoder::Mode::kGreedy);
      if (streamed.tokens != oneshot.front().tokens ||
          streamed.emission_delays != oneshot.front().emission_delays) {
        r.passed = false;
        r.detail = "hypotheses differ at U=" + std::to_string(u) +
                   " L=" + std::to_string(l);
      }
      ++configs;
    }
  }
  if (worst >= 1e-10) r.passed = false;
  if (r.passed) {
    r.detail = std::to_string(configs) + " configs, max diff " + fmt(worst);
  }
  return r;
}

CheckResult check_latency_metrics(const VerifyOptions&) {
  CheckResult r{"metrics: AP/AL hand case and offline AP = 1", false, ""};
  const auto hand = metrics::utterance_latency({1, 2, 3, 4}, 4);
  const auto offline = metrics::utterance_latency({9, 9, 9}, 9);
  r.passed = hand.ap == 0.625 && std::abs(hand.al - 1.0) < 1e-12 &&
             offline.ap == 1.0 && offline.al == 9.0;
  std::ostringstream os;
  os << "AP=" << hand.ap << " AL=" << hand.al << " offline AP=" << offline.ap;
  r.detail = os.str();
  return r;
}

std::vector<CheckResult> run_all(const VerifyOptions& opt) {
  return {check_mask_figure(opt),          check_receptive_fields(opt),
          check_lattice_brute_force(opt),  check_op_gradients(opt),
          check_end_to_end_gradients(opt), check_streaming_equivalence(opt),
          check_latency_metrics(opt)};
}

void print_table(std::ostream& out, const std::vector<CheckResult>& results) {
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  for (const auto& r : results) {
    out << (r.passed ? "PASS  " : "FAIL  ") << std::left
        << std::setw(static_cast<int>(width)) << r.name << "  " << r.detail
        << '\n';
  }
}

}  // namespace sm2::verify
