#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmkl/adam.hpp"
#include "cmkl/continual.hpp"
#include "cmkl/evalharness.hpp"
#include "cmkl/kgdata.hpp"
#include "cmkl/model.hpp"

namespace cmkl {

struct TrainSettings {
  double lr = 1e-3;
  int epochs_per_task = 100;
  std::size_t batch_size = 512;
  int triples_per_epoch = 0;  // 0 = one pass over the full task per epoch
  double gamma = 1.0;
  int n_neg = 8;
};

struct ClSettings {
  EwcConfig ewc;
  std::size_t buffer_size = 1000;
  double replay_alpha = 1.0;
  int fisher_batches = 10;
  bool replay_enabled = true;
};

enum class Track { LinkPrediction, Classification };

struct RunLogging {
  bool events = false;
  bool router_csv = false;
  bool buffer_csv = false;
  std::string out_dir;
};

struct RunResult {
  MetricsMatrix r{};
  ClMetrics metrics;
  std::vector<std::array<double, 3>> router_mean_per_task;  // (w_s, w_t, w_m)
  double max_simplex_violation = 0.0;
  std::vector<double> final_batch_loss_per_task;
  std::vector<std::string> events;
};

// Runs the task sequence: per task, epochs of encode -> fuse -> score -> loss
// -> update; then Fisher anchoring and buffer rebalance; then evaluation of
// every task seen so far. Joint mode trains once on the task union (with the
// epoch budget scaled by the task count) and fills only the final row of R.
RunResult run_single(const TaskSequence& seq, const FeatureStore& features, ModelConfig model_config,
                     const TrainSettings& train, const ClSettings& cl, Track track,
                     std::uint64_t seed, bool joint, const RunLogging& logging = {});

}  // namespace cmkl
