#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "ftlab/evaluation.hpp"
#include "ftlab/model.hpp"
#include "ftlab/preference.hpp"
#include "ftlab/scaling.hpp"
#include "ftlab/synthesis.hpp"
#include "ftlab/tasks.hpp"

namespace ftlab {

/// Default output root: $FTLAB_OUT_ROOT when set, otherwise "runs".
std::string default_out_root();

/// Everything a finished run leaves behind, with the in-memory registries the
/// table presets assemble their exhibits from.
struct ManifestRun {
  std::string run_dir;
  nlohmann::json resolved;  // manifest with all defaults materialized
  std::map<std::string, TaskSpec> tasks;
  std::map<std::string, Dataset> datasets;
  std::map<std::string, PolicyParams> checkpoints;
  std::map<std::string, std::vector<PreferenceSample>> pairs;
  std::map<std::string, double> pair_overlength;  // build-pairs stage ratios
  std::map<std::string, MetricReport> metrics;
  std::map<std::string, SynthesisReport> synthesis;
  std::map<std::string, std::vector<ScalingPoint>> scaling_points;
  std::map<std::string, ScalingFit> scaling_fits;
};

/// Validates the manifest (strict schema: unknown fields are fatal, stage
/// references must already exist in order) without executing anything.
/// Throws ValidationError with a field path on the first violation.
void validate_manifest(const nlohmann::json& manifest);

/// Executes a validated manifest. Artifacts land under
/// <out_dir>/<name>-<fnv64 of the manifest bytes>[-k]/ and a second run of an
/// identical manifest with the same seed writes byte-identical metric CSVs.
ManifestRun run_manifest_json(const nlohmann::json& manifest, const std::string& name,
                              const std::string& out_dir = "");

/// File front door: parses, validates, runs.
ManifestRun run_manifest(const std::string& path, const std::string& out_dir = "");

/// Desk-scale replication presets: table1, table3, table4, figure2. Runs the
/// named exhibit's protocol and writes the exhibit table under the run dir.
ManifestRun replicate_tables(const std::string& preset, const std::string& out_dir = "");

}  // namespace ftlab
