#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "rim/data.hpp"
#include "rim/evaluate.hpp"
#include "rim/fhn.hpp"
#include "rim/hrn.hpp"
#include "rim/train.hpp"

namespace rim::config {

/// Everything one CLI invocation needs. JSON layout:
/// {"seed", "out", "data": {...}, "fhn": {...}, "hrn": {...}, "train": {...}, "eval": {...}}.
struct ExperimentConfig {
    data::SynthOptions synth;
    /// Manifest to train/evaluate on; empty means <out>/data/manifest.jsonl.
    std::string manifest;
    fhn::FhnConfig fhn;
    hrn::HrnConfig hrn;
    train::TrainConfig train;
    eval::EvalConfig eval;
    std::filesystem::path out_dir = "runs/default";
    std::uint64_t seed = 0;

    /// Copies `seed` into every stochastic sub-config.
    void apply_seed();
    void validate() const;
    std::filesystem::path manifest_path() const;
};

nlohmann::json to_json(const fhn::FhnConfig& cfg);
nlohmann::json to_json(const hrn::HrnConfig& cfg);
nlohmann::json to_json(const train::TrainConfig& cfg);
nlohmann::json to_json(const eval::EvalConfig& cfg);
nlohmann::json to_json(const data::SynthOptions& cfg);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Each reader overlays the keys present in `j` onto `cfg`; unknown keys and
/// ill-typed values raise ValidationError naming the dotted key.
void merge(fhn::FhnConfig& cfg, const nlohmann::json& j, const std::string& prefix = "fhn");
void merge(hrn::HrnConfig& cfg, const nlohmann::json& j, const std::string& prefix = "hrn");
void merge(train::TrainConfig& cfg, const nlohmann::json& j, const std::string& prefix = "train");
void merge(eval::EvalConfig& cfg, const nlohmann::json& j, const std::string& prefix = "eval");
void merge(data::SynthOptions& cfg, const nlohmann::json& j, const std::string& prefix = "data");
void merge(ExperimentConfig& cfg, const nlohmann::json& j);

/// Reads a JSON config file; IoError if missing, ParseError if malformed.
ExperimentConfig load(const std::filesystem::path& path);

/// Writes the resolved config as pretty-printed JSON.
void write_snapshot(const ExperimentConfig& cfg, const std::filesystem::path& path);

}  // namespace rim::config
