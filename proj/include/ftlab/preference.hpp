#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ftlab/model.hpp"
#include "ftlab/tasks.hpp"

namespace ftlab {

/// DPO triple: gold answer as accepted, an overlength generation as rejected.
/// Invariant: rejected is strictly longer than accepted (END excluded on both
/// sides) and accepted equals the dataset answer verbatim.
struct PreferenceSample {
  TokenSeq query;
  TokenSeq accepted;
  TokenSeq rejected;
  bool operator==(const PreferenceSample&) const = default;
};

/// One shared generation pass backs both operations below, so
/// overlength_ratio * |ds| == |build_pairs| holds exactly for equal seeds.
struct GenerationPass {
  std::vector<Generation> generations;  // one per dataset sample, END-stripped
  double overlength_ratio = 0.0;
  std::vector<PreferenceSample> pairs;
};

GenerationPass run_generation_pass(const PolicyParams& params, const Dataset& ds,
                                   const SamplerConfig& sampler, std::uint64_t seed);

/// Fraction of training queries whose sampled completion has strictly more
/// tokens than the gold answer.
double overlength_ratio(const PolicyParams& params, const Dataset& ds,
                        const SamplerConfig& sampler, std::uint64_t seed);

/// (query, gold, generation) triples for every overlength completion.
/// An empty result signals zero yield; callers may skip the DPO stage.
std::vector<PreferenceSample> build_pairs(const PolicyParams& params, const Dataset& ds,
                                          const SamplerConfig& sampler,
                                          std::uint64_t seed);

// Line-delimited preference container (same shape as the dataset files).
void save_pairs(const std::vector<PreferenceSample>& pairs, const std::string& path);
std::vector<PreferenceSample> load_pairs(const std::string& path);

}  // namespace ftlab
