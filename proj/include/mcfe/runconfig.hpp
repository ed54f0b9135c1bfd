#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcfe/classifier.hpp"
#include "mcfe/evalmod.hpp"
#include "mcfe/synthdata.hpp"
#include "mcfe/trainer.hpp"

namespace mcfe {

/// One JSON document with a section per pipeline stage. Every section and
/// key is optional; unknown ones are rejected.
struct RunConfig {
    DatasetConfig dataset;
    ClassifierConfig classifier;
    ClassifierTrainConfig classifier_train;
    TrainConfig generator;
    EvalConfig eval;
    std::vector<std::pair<int, int>> eval_pairs{{0, 1}};

    /// Runs every section's own validation.
    void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);
/// Defaults written back as JSON; parse_run_config(to_json(c)) == c.
nlohmann::json to_json(const RunConfig& config);

/// Parses an MCFE_SEED value; throws config on anything but a plain
/// non-negative integer.
std::uint64_t parse_seed(const std::string& text);

}  // namespace mcfe
