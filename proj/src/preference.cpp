#include "ftlab/preference.hpp"

#include <fstream>

#include "json.hpp"

#include "ftlab/errors.hpp"
#include "ftlab/rng.hpp"

namespace ftlab {

GenerationPass run_generation_pass(const PolicyParams& params, const Dataset& ds,
                                   const SamplerConfig& sampler, std::uint64_t seed) {
  if (ds.size() == 0) throw ShapeError("generation pass: dataset is empty");
  sampler.validate();
  const Evaluator eval(params);

  GenerationPass pass;
  pass.generations.reserve(ds.size());
  std::size_t overlength = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[i];
    // Per-sample seed stream: deterministic and order-independent.
    Generation g = generate(eval, s.query, sampler, derive_seed(seed, i));
    // END excluded from both counts: gold answers are stored without END and
    // Generation::tokens never includes it.
    if (g.tokens.size() > s.answer.size()) {
      ++overlength;
      PreferenceSample p;
      p.query = s.query;
      p.accepted = s.answer;
      p.rejected = g.tokens;
      pass.pairs.push_back(std::move(p));
    }
    pass.generations.push_back(std::move(g));
  }
  pass.overlength_ratio =
      static_cast<double>(overlength) / static_cast<double>(ds.size());
  return pass;
}

double overlength_ratio(const PolicyParams& params, const Dataset& ds,
                        const SamplerConfig& sampler, std::uint64_t seed) {
  return run_generation_pass(params, ds, sampler, seed).overlength_ratio;
}

std::vector<PreferenceSample> build_pairs(const PolicyParams& params, const Dataset& ds,
                                          const SamplerConfig& sampler,
                                          std::uint64_t seed) {
  return run_generation_pass(params, ds, sampler, seed).pairs;
}

void save_pairs(const std::vector<PreferenceSample>& pairs, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open pair file for writing: " + path);
  nlohmann::json header = {{"schema", "ftlab.pairs.v1"}};
  os << header.dump() << "\n";
  for (const auto& p : pairs) {
    nlohmann::json line = {
        {"query", p.query}, {"accepted", p.accepted}, {"rejected", p.rejected}};
    os << line.dump() << "\n";
  }
  if (!os) throw IoError("short write on pair file: " + path);
}

std::vector<PreferenceSample> load_pairs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open pair file: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty pair file: " + path);
  if (nlohmann::json::parse(line).value("schema", "") != "ftlab.pairs.v1") {
    throw IoError("not an ftlab pair file: " + path);
  }
  std::vector<PreferenceSample> pairs;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json rec = nlohmann::json::parse(line);
    PreferenceSample p;
    p.query = rec.at("query").get<TokenSeq>();
    p.accepted = rec.at("accepted").get<TokenSeq>();
    p.rejected = rec.at("rejected").get<TokenSeq>();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace ftlab
