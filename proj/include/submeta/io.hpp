#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "submeta/core_model.hpp"
#include "submeta/diagnostics.hpp"
#include "submeta/simulation.hpp"

namespace submeta {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

/// Reads `study_id,n_a,n_b,y_a,se_a,y_b,se_b` rows. Lines starting with '#' are
/// comments; `# label_a: ...` and `# label_b: ...` set the subgroup labels.
MetaDataset parse_csv(std::istream& in, const std::string& source = "<input>");
MetaDataset read_csv_file(const std::string& path);
std::string serialize_csv(const MetaDataset& data);

/// Rounds to `digits` significant digits.
double round_sig(double x, int digits = 4);

nlohmann::json to_json(const Estimate& e);
nlohmann::json to_json(const AnalysisResult& r);
nlohmann::json to_json(const MismatchReport& r, const MetaDataset& data);
nlohmann::json to_json(const InfluenceReport& r);

/// Per-study ratios with CIs and per-scheme weights, plus one summary row per result.
nlohmann::json forest_payload(const MetaDataset& data, const std::vector<AnalysisResult>& results,
                              const std::vector<WeightVector>& scheme_weights);

nlohmann::json to_json(const ScenarioConfig& c);
nlohmann::json to_json(const ScenarioMetrics& m);
/// Overrides the fields present in `j`; unknown keys are an error.
ScenarioConfig scenario_from_json(const nlohmann::json& j, ScenarioConfig base = {});
/// A config file holds either a `grid` of lists (expanded as a cartesian product)
/// or an explicit `scenarios` list, plus shared scalar fields.
std::vector<ScenarioConfig> expand_scenarios(const nlohmann::json& config, const ScenarioConfig& base = {});

std::string metrics_csv_header();
std::string metrics_csv_rows(const ScenarioMetrics& m);

std::uint64_t fnv1a_digest(const std::string& bytes);

}  // namespace submeta
