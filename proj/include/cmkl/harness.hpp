#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "cmkl/gradcheck.hpp"
#include "cmkl/kgdata.hpp"
#include "cmkl/trainer.hpp"

namespace cmkl {

struct ExperimentConfig {
  // dataset
  bool synthetic = true;
  std::string dataset_dir;
  SynthConfig synth;
  std::uint64_t synth_seed = 7;

  ModelConfig model;  // dataset dims filled at run time
  TrainSettings train;
  ClSettings cl;
  double lambda_scale = 1.0;  // common multiplier on the per-group lambdas

  Track track = Track::LinkPrediction;
  std::string method = "cmkl";
  std::vector<std::uint64_t> seeds = {42, 123, 456, 789, 1024};
  RunLogging logging;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);
nlohmann::json experiment_config_json(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

// Method presets rewrite the CL / fusion knobs:
//   cmkl         as configured
//   naive        EWC off, buffer 0, replay off
//   joint        single run on the task union, CL off
//   ewc-uniform  uniform lambda, replay stays on
//   ewc-only     uniform lambda, replay off, buffer 0
//   struct-only / text-only / mol-only   forced single-modality fusion
void apply_method(ExperimentConfig& config);
bool method_is_joint(const ExperimentConfig& config);

std::pair<TaskSequence, FeatureStore> load_experiment_dataset(const ExperimentConfig& config);

struct SeedRun {
  std::uint64_t seed = 0;
  RunResult result;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<SeedRun> runs;
};

ExperimentResult run_experiment(const ExperimentConfig& config);
nlohmann::json experiment_result_json(const ExperimentResult& result);
void write_results_file(const std::string& path, const ExperimentResult& result);

// Sweep axes (any subset): lambda_scale, buffer_size, fusion, method. Cells
// run independently; a failed cell is recorded and the rest continue.
nlohmann::json run_matrix(const ExperimentConfig& base, const nlohmann::json& sweep,
                          const std::string& out_dir);
void write_matrix_csv(const nlohmann::json& matrix, const std::string& path);

enum class LossTerms { TaskOnly, WithEwc, WithReplay, Full };

// Builds a toy model for the requested fusion, assembles the total training
// loss (with a synthetic Fisher anchor and a filled replay buffer when those
// terms are active) and runs the finite-difference check over every tensor.
GradCheckReport harness_gradcheck(FusionKind fusion, LossTerms terms, std::uint64_t seed,
                                  const GradCheckOptions& options = {});

// CSV collation of results files.
void collate_reports(const std::vector<std::string>& result_files, const std::string& out_csv);

}  // namespace cmkl
