#pragma once

// Pooled multilingual transducer training and frozen-encoder branch
// expansion.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sm2/corpus.hpp"
#include "sm2/decoder.hpp"
#include "sm2/metrics.hpp"
#include "sm2/model.hpp"

namespace sm2 {

struct TrainConfig {
  double learning_rate = 3e-3;  // peak
  std::size_t warmup_steps = 200;
  std::size_t batch_size = 8;
  std::size_t max_steps = 3000;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  std::size_t eval_interval = 500;

  void validate() const;
  /// Linear warmup to the peak, then inverse-square-root decay.
  double learning_rate_at(std::size_t step) const;

  static const std::set<std::string>& keys();
  /// Overrides fields from key=value pairs (see keys()).
  void apply(const std::map<std::string, std::string>& kv);
  std::map<std::string, std::string> to_key_values() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;  // NLL per target token
  double lr = 0.0;
};

/// Loss trace TSV: "step<TAB>loss<TAB>lr" per line.
void write_loss_trace(std::ostream& out, const std::vector<LossRecord>& trace);

/// Transducer NLL of one utterance: encoder -> prediction -> joint ->
/// log_softmax -> lattice loss. `encoded`, when given, replaces the encoder
/// (a constant, e.g. the cached output of a frozen encoder).
ad::Var utterance_nll(ad::Graph& g, const Model& model, BranchId branch,
                      const FeatureSequence& features,
                      std::span<const TokenId> target,
                      const ChunkMaskSpec& spec,
                      const Tensor* encoded = nullptr);

struct BatchResult {
  double nll = 0.0;       // summed over utterances
  std::size_t tokens = 0;  // summed target lengths
  ad::GradBuffer grads;    // of the summed NLL
};

/// Forward/backward over a batch. Utterances run in parallel; per-utterance
/// gradients are reduced in batch order, so results do not depend on the
/// thread count. `parallel = false` runs the serial reference loop.
BatchResult batch_gradients(const Model& model, BranchId branch,
                            const std::vector<const corpus::Utterance*>& batch,
                            const ChunkMaskSpec& spec,
                            const std::vector<const Tensor*>& encoded,
                            bool parallel = true);

/// Adam with decoupled schedule; moments only for trainable parameters.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const ad::ParamStore& store);
  void step(ad::ParamStore& store, const ad::GradBuffer& grads, double lr);

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.98;
  static constexpr double kEps = 1e-9;
  ad::GradBuffer m_, v_;
  std::size_t t_ = 0;
};

struct TrainHooks {
  /// Called every eval_interval steps and after the last step.
  std::function<void(std::size_t step)> on_eval;
  /// Called after every step.
  std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
  std::vector<LossRecord> trace;
};

/// Trains `branch` (and the encoder unless frozen) on the train utterances.
TrainResult train(Model& model, const std::vector<const corpus::Utterance*>& data,
                  BranchId branch, const TrainConfig& config,
                  const TrainHooks& hooks = {});

struct ExpansionPlan {
  std::string new_target;
  std::size_t vocab_size = 0;
  std::vector<corpus::LanguagePair> pairs;  // all with target == new_target
  TrainConfig config;
  std::uint64_t branch_seed = 1;
};

/// Adds a branch for plan.new_target and trains only that branch on the
/// plan's pairs. The encoder stays frozen afterwards.
BranchId expand(Model& model, const corpus::Corpus& corpus,
                const ExpansionPlan& plan, TrainResult* result = nullptr,
                const TrainHooks& hooks = {});

struct EvalResult {
  metrics::EvalReport quality;
  metrics::LatencyReport latency;
  std::vector<DecodeRecord> log;
};

EvalResult evaluate(const Model& model, BranchId branch,
                    const std::vector<const corpus::Utterance*>& test,
                    const DecodeConfig& config);

}  // namespace sm2
