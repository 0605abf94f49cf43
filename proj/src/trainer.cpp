#include "sm2/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "sm2/transducer_loss.hpp"

namespace sm2 {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || warmup_steps == 0 || batch_size == 0 ||
      max_steps == 0 || !(clip_norm > 0.0) || eval_interval == 0) {
    throw ContractError("train config: all values must be positive");
  }
}

double TrainConfig::learning_rate_at(std::size_t step) const {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(warmup_steps);
  return learning_rate * std::min(s / w, std::sqrt(w / s));
}

const std::set<std::string>& TrainConfig::keys() {
  static const std::set<std::string> k = {
      "learning_rate", "warmup_steps", "batch_size", "max_steps",
      "seed",          "clip_norm",    "eval_interval"};
  return k;
}

void TrainConfig::apply(const std::map<std::string, std::string>& kv) {
  TrainConfig next = *this;
  for (const auto& [key, value] : kv) {
    try {
      if (key == "learning_rate") next.learning_rate = std::stod(value);
      else if (key == "warmup_steps") next.warmup_steps = std::stoull(value);
      else if (key == "batch_size") next.batch_size = std::stoull(value);
      else if (key == "max_steps") next.max_steps = std::stoull(value);
      else if (key == "seed") next.seed = std::stoull(value);
      else if (key == "clip_norm") next.clip_norm = std::stod(value);
      else if (key == "eval_interval") next.eval_interval = std::stoull(value);
      else throw ContractError("unknown train config key '" + key + "'");
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ContractError*>(&e)) throw;
      throw ContractError("bad value '" + value + "' for " + key);
    }
  }
  next.validate();
  *this = next;
}

std::map<std::string, std::string> TrainConfig::to_key_values() const {
  auto num = [](double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
  };
  return {{"learning_rate", num(learning_rate)},
          {"warmup_steps", std::to_string(warmup_steps)},
          {"batch_size", std::to_string(batch_size)},
          {"max_steps", std::to_string(max_steps)},
          {"seed", std::to_string(seed)},
          {"clip_norm", num(clip_norm)},
          {"eval_interval", std::to_string(eval_interval)}};
}

void write_loss_trace(std::ostream& out, const std::vector<LossRecord>& trace) {
  out << std::setprecision(17);
  for (const auto& r : trace) {
    out << r.step << '\t' << r.loss << '\t' << r.lr << '\n';
  }
}

// ---------------------------------------------------------------------------

ad::Var utterance_nll(ad::Graph& g, const Model& model, BranchId branch,
                      const FeatureSequence& features,
                      std::span<const TokenId> target,
                      const ChunkMaskSpec& spec, const Tensor* encoded) {
  ad::Var enc = encoded ? g.constant(*encoded) : model.encode(g, features, spec);
  ad::Var pred = model.predict_sequence(g, branch, target);
  ad::Var logits = model.joint_lattice(g, branch, enc, pred);
  ad::Var lp = ad::log_softmax(logits);
  return rnnt::transducer_nll(lp, enc.rows(), target);
}

BatchResult batch_gradients(const Model& model, BranchId branch,
                            const std::vector<const corpus::Utterance*>& batch,
                            const ChunkMaskSpec& spec,
                            const std::vector<const Tensor*>& encoded,
                            bool parallel) {
  const std::size_t n = batch.size();
  std::vector<ad::GradBuffer> grads(n);
  std::vector<double> nll(n, 0.0);
  std::vector<std::string> errors(n);
  auto run_one = [&](std::size_t i) {
    try {
      const corpus::Utterance& u = *batch[i];
      ad::Graph g;
      ad::Var loss = utterance_nll(g, model, branch, u.features, u.target, spec,
                                   encoded.empty() ? nullptr : encoded[i]);
      nll[i] = loss.value()[0];
      if (!std::isfinite(nll[i])) {
        errors[i] = "non-finite loss for utterance " + u.id;
        return;
      }
      g.backward(loss);
      grads[i] = ad::GradBuffer(model.params());
      g.accumulate_param_grads(grads[i]);
    } catch (const std::exception& e) {
      errors[i] = "utterance " + batch[i]->id + ": " + e.what();
    }
  };
  const auto count = static_cast<std::ptrdiff_t>(n);
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < count; ++i) run_one(static_cast<std::size_t>(i));
  } else {
    for (std::ptrdiff_t i = 0; i < count; ++i) run_one(static_cast<std::size_t>(i));
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw TrainingError(e);
  }
  BatchResult out;
  out.grads = ad::GradBuffer(model.params());
  for (std::size_t i = 0; i < n; ++i) {
    out.nll += nll[i];
    out.tokens += batch[i]->target.size();
    out.grads.add(grads[i]);
  }
  return out;
}

AdamOptimizer::AdamOptimizer(const ad::ParamStore& store)
    : m_(store), v_(store) {}

void AdamOptimizer::step(ad::ParamStore& store, const ad::GradBuffer& grads,
                         double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store.at(i);
    if (!p.trainable) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    auto vals = p.tensor.values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      vals[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps);
    }
  }
}

TrainResult train(Model& model, const std::vector<const corpus::Utterance*>& data,
                  BranchId branch, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  const Branch& b = model.branch(branch);
  if (data.empty()) throw ContractError("train: no training utterances");
  for (const auto* u : data) {
    for (TokenId t : u->target) {
      if (t == kBlank || t > b.vocab_size) {
        throw ContractError("train: utterance " + u->id +
                            " has token outside branch vocabulary");
      }
    }
    if (u->features.empty()) {
      throw ContractError("train: utterance " + u->id + " has no frames");
    }
  }
  const ChunkMaskSpec spec = model.config().mask;

  // A frozen encoder is a constant function of the input: encode once.
  std::vector<Tensor> cache;
  if (model.encoder_frozen()) {
    cache.resize(data.size());
    const auto n = static_cast<std::ptrdiff_t>(data.size());
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      cache[static_cast<std::size_t>(i)] =
          model.encode(data[static_cast<std::size_t>(i)]->features, spec).hidden;
    }
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  AdamOptimizer opt(model.params());
  TrainResult result;
  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    std::vector<const corpus::Utterance*> batch;
    std::vector<const Tensor*> encoded;
    for (std::size_t k = 0; k < config.batch_size; ++k) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      batch.push_back(data[idx]);
      if (!cache.empty()) encoded.push_back(&cache[idx]);
    }
    BatchResult br = batch_gradients(model, branch, batch, spec, encoded);
    const double tokens = static_cast<double>(std::max<std::size_t>(br.tokens, 1));
    const double loss = br.nll / tokens;
    if (!std::isfinite(loss)) {
      std::string ids;
      for (const auto* u : batch) ids += " " + u->id;
      throw TrainingError("non-finite loss at step " + std::to_string(step) +
                          "; batch:" + ids);
    }
    br.grads.scale(1.0 / tokens);
    const double norm = br.grads.l2_norm();
    if (norm > config.clip_norm) br.grads.scale(config.clip_norm / norm);
    const double lr = config.learning_rate_at(step);
    opt.step(model.params(), br.grads, lr);

    const LossRecord rec{step, loss, lr};
    result.trace.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (hooks.on_eval &&
        (step % config.eval_interval == 0 || step == config.max_steps)) {
      hooks.on_eval(step);
    }
  }
  return result;
}

BranchId expand(Model& model, const corpus::Corpus& corpus,
                const ExpansionPlan& plan, TrainResult* result,
                const TrainHooks& hooks) {
  if (model.has_branch(plan.new_target)) {
    throw ContractError("expand: branch '" + plan.new_target +
                        "' already exists");
  }
  if (plan.pairs.empty()) throw ContractError("expand: empty pair set");
  for (const auto& [src, tgt] : plan.pairs) {
    if (tgt != plan.new_target) {
      throw ContractError("expand: pair " + src + ">" + tgt +
                          " does not target " + plan.new_target);
    }
  }
  const corpus::Corpus train_set = corpus.filter(plan.pairs, "train");
  const auto hist = train_set.pair_histogram("train");
  for (const auto& p : plan.pairs) {
    if (!hist.contains(p)) {
      throw ContractError("expand: no training data for pair " + p.first +
                          ">" + p.second);
    }
  }

  std::vector<bool> was_trainable;
  for (const auto& b : model.branches()) {
    was_trainable.push_back(
        model.params().at(model.params().index_of(b.prefix() + "pred/embed"))
            .trainable);
  }
  const BranchId id =
      model.add_branch(plan.new_target, plan.vocab_size, plan.branch_seed);
  model.freeze_encoder();
  for (BranchId other = 0; other < id; ++other) {
    model.set_branch_trainable(other, false);
  }

  std::vector<const corpus::Utterance*> data;
  for (const auto& u : train_set.utterances) data.push_back(&u);
  TrainResult r = train(model, data, id, plan.config, hooks);
  for (BranchId other = 0; other < id; ++other) {
    model.set_branch_trainable(other, was_trainable[other]);
  }
  if (result) *result = std::move(r);
  return id;
}

EvalResult evaluate(const Model& model, BranchId branch,
                    const std::vector<const corpus::Utterance*>& test,
                    const DecodeConfig& config) {
  const Branch& b = model.branch(branch);
  DecodeConfig cfg = config;
  cfg.branch = branch;
  const auto mode = cfg.beam == 1 ? StreamingDecoder::Mode::kGreedy
                                  : StreamingDecoder::Mode::kBeam;
  EvalResult out;
  out.log.resize(test.size());
  std::vector<std::string> errors(test.size());
  const auto n = static_cast<std::ptrdiff_t>(test.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& u = *test[static_cast<std::size_t>(i)];
    try {
      StreamingDecoder dec(model, cfg, mode);
      for (const auto& c : split_into_chunks(u.features, cfg.mask)) dec.push(c);
      const Hypothesis& h = dec.best();
      auto& rec = out.log[static_cast<std::size_t>(i)];
      rec.utterance_id = u.id;
      rec.branch = b.target_lang;
      rec.tokens = h.tokens;
      rec.score = h.score;
      rec.delays = h.emission_delays;
      rec.source_frames = u.features.frames();
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = u.id + ": " + e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw DataError("evaluate: " + e);
  }
  std::vector<metrics::Sentence> refs, hyps;
  for (std::size_t i = 0; i < test.size(); ++i) {
    refs.push_back(metrics::to_words(test[i]->target));
    hyps.push_back(metrics::to_words(out.log[i].tokens));
  }
  if (!refs.empty()) out.quality = metrics::evaluate_quality(refs, hyps);
  out.latency = metrics::latency(out.log);
  return out;
}

}  // namespace sm2
