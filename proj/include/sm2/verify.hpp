#pragma once

// Built-in oracle suite behind `sm2 verify`. Each check compares an
// implementation path against an independent reference computed a different
// way, e.g. finite differences or alignment enumeration.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "sm2/attention_mask.hpp"
#include "sm2/model.hpp"

namespace sm2::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

using MaskBuilder =
    std::function<AttnMask(std::size_t frames, const ChunkMaskSpec& spec)>;

struct VerifyOptions {
  // Replaceable so fault injection can prove the checks bite.
  MaskBuilder mask_builder = build_chunk_mask;
  std::uint64_t seed = 1;
};

/// Frames reachable from `t` through `layers` applications of `mask`
/// (boolean matrix composition).
std::vector<std::size_t> reachable_frames(const AttnMask& mask, std::size_t t,
                                          std::size_t layers);

/// Analytic gradients of the utterance NLL over every trainable parameter
/// versus central finite differences; returns the worst relative error.
double end_to_end_grad_error(Model& model, BranchId branch,
                             const FeatureSequence& features,
                             const std::vector<TokenId>& target,
                             const ChunkMaskSpec& spec, double h = 1e-5);

/// Random valid log-probability lattice [T, U+1, V] (rows normalized).
Tensor random_log_probs(std::size_t frames, std::size_t labels,
                        std::size_t outputs, std::uint64_t seed);

/// Tiny model used by the gradient and streaming checks.
ModelConfig tiny_config(std::uint64_t seed = 1);

CheckResult check_mask_figure(const VerifyOptions& opt);
CheckResult check_receptive_fields(const VerifyOptions& opt);
CheckResult check_lattice_brute_force(const VerifyOptions& opt,
                                      std::size_t instances = 200);
CheckResult check_op_gradients(const VerifyOptions& opt);
CheckResult check_end_to_end_gradients(const VerifyOptions& opt);
CheckResult check_streaming_equivalence(const VerifyOptions& opt);
CheckResult check_latency_metrics(const VerifyOptions& opt);

std::vector<CheckResult> run_all(const VerifyOptions& opt = {});
void print_table(std::ostream& out, const std::vector<CheckResult>& results);

}  // namespace sm2::verify
