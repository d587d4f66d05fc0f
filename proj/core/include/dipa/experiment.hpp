#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dipa/checkpoint.hpp"
#include "dipa/data/synthetic.hpp"
#include "dipa/model/config.hpp"
#include "dipa/oracle.hpp"
#include "dipa/trainer.hpp"

namespace dipa::model {
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
}  // namespace dipa::model

namespace dipa::exp {

enum class Scheme { Masking, DeselectOnce, Iterative };
std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

struct ExperimentConfig {
  model::ModelConfig model;
  data::SyntheticSpec data;
  train::TrainConfig train;
};
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ExperimentReport {
  Scheme scheme = Scheme::Iterative;
  std::uint64_t seed = 0;
  double accuracy_before = 0;
  double accuracy_after_deselect = 0;
  double accuracy_after_finetune = 0;
  // Oracle non-object count at each consult, then for the final state before
  // residual masking.
  std::vector<int> nonobject_counts;
  oracle::Histogram overlap_before;
  oracle::Histogram overlap_after;
  std::vector<int> kept_on_exhaustion;  // rejected prototypes kept so no class is emptied
  double wall_seconds = 0;
  std::vector<std::string> stages;  // completed, in order
  std::string failed_stage;
  std::string error;
  nlohmann::json config;
  std::string dataset_hash;

  bool ok() const { return failed_stage.empty(); }
};
nlohmann::json to_json(const ExperimentReport& r);
std::string format_table(const ExperimentReport& r);

// Runs the scheme-specific deselection, the last-layer fine-tune and
// evaluation, starting from a pushed checkpoint of initial training.
ExperimentReport run_scheme(Scheme scheme, const Checkpoint& pushed, const data::Dataset& dataset,
                            const ExperimentConfig& cfg,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// initial_training -> push -> run_scheme. Stage failures yield a partial
// report instead of an exception.
ExperimentReport run_experiment(Scheme scheme, const data::Dataset& dataset, const ExperimentConfig& cfg,
                                const std::string& dataset_hash,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace dipa::exp
