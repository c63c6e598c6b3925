#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmkl/kgdata.hpp"
#include "cmkl/params.hpp"
#include "cmkl/rng.hpp"
#include "cmkl/tape.hpp"

namespace cmkl {

enum class EwcMode { PerGroup, Uniform, Off };
enum class AnchorMode { Accumulate, Replace, Multi };

struct EwcConfig {
  EwcMode mode = EwcMode::PerGroup;
  std::array<double, 4> lambda = {10.0, 5.0, 1.0, 5.0};  // structural, text, molecular, fusion+decoder
  double lambda_uniform = 10.0;
  AnchorMode anchor_mode = AnchorMode::Accumulate;

  double lambda_for(Group g) const {
    if (mode == EwcMode::Off) return 0.0;
    if (mode == EwcMode::Uniform) return lambda_uniform;
    return lambda[static_cast<std::size_t>(g)];
  }
};

// Diagonal Fisher values plus the parameter snapshot they anchor to, one slot
// per ModelState tensor.
struct FisherAnchor {
  std::vector<Tensor> fisher;
  std::vector<Tensor> snapshot;
};

struct EwcState {
  std::vector<FisherAnchor> anchors;  // Accumulate/Replace keep a single entry

  bool empty() const { return anchors.empty(); }

  // Fold in a freshly computed Fisher (mean of squared task-loss gradients)
  // and re-anchor at the current parameters.
  void absorb(const ModelState& params, std::vector<Tensor> fisher, AnchorMode mode);
};

// Mean over batch gradient sets of elementwise squared gradients.
std::vector<Tensor> mean_squared_grads(const std::vector<GradientSet>& batch_grads);

// sum_g lambda_g sum_i F_i (theta_i - theta*_i)^2, on the tape (leaves are the
// per-slot parameter nodes). Returns -1 when there is nothing to penalize.
Tape::NodeId ewc_penalty_node(Tape& tape, const std::vector<Tape::NodeId>& leaves,
                              const ModelState& params, const EwcState& ewc, const EwcConfig& config);

// Plain evaluation of the same quantity.
double ewc_penalty(const ModelState& params, const EwcState& ewc, const EwcConfig& config);

struct KMeansResult {
  std::vector<int> assignment;                 // per point
  std::vector<std::vector<double>> centroids;  // k x dim
};

// Lloyd's algorithm with k-means++ seeding; 50 iterations or relative centroid
// shift below 1e-6. Emptied clusters are reseeded to the farthest point.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k, Rng& rng,
                    std::size_t max_iters = 50, double tol = 1e-6);

struct ReplayEntry {
  int source_task;  // 1-based
  Triple triple;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<ReplayEntry>& entries() const { return entries_; }

  // Pool = buffer + new task train triples; per source task, k-means with
  // floor(capacity / tasks_completed) clusters over head-entity structural
  // embeddings keeps the closest-to-centroid triple of each cluster. Tasks
  // with fewer triples than clusters keep everything.
  void rebalance(const std::vector<Triple>& new_task_train, int new_task_id,
                 const std::vector<std::vector<double>>& head_embedding_of_entity,
                 int tasks_completed, Rng& rng);

  // Uniform with replacement; empty buffer yields an empty batch.
  std::vector<ReplayEntry> sample(std::size_t batch_size, Rng& rng) const;

  void dump_csv(const std::string& path) const;

 private:
  std::size_t capacity_;
  std::vector<ReplayEntry> entries_;
};

// task + ewc + alpha * replay; the CL terms are forced to zero on the first task.
double total_loss(double task_loss, double ewc_penalty, double replay_loss, double alpha, int task_index);

}  // namespace cmkl
