#include "cmkl/continual.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

namespace cmkl {

void EwcState::absorb(const ModelState& params, std::vector<Tensor> fisher, AnchorMode mode) {
  if (fisher.size() != params.tensors().size()) {
    throw std::invalid_argument("EwcState::absorb: fisher slot count mismatch");
  }
  std::vector<Tensor> snapshot;
  snapshot.reserve(params.tensors().size());
  for (const NamedTensor& t : params.tensors()) snapshot.push_back(t.value);

  if (mode == AnchorMode::Multi || anchors.empty()) {
    if (mode != AnchorMode::Multi) anchors.clear();
    anchors.push_back(FisherAnchor{std::move(fisher), std::move(snapshot)});
    return;
  }
  FisherAnchor& a = anchors.front();
  if (mode == AnchorMode::Accumulate) {
    for (std::size_t i = 0; i < fisher.size(); ++i) {
      if (!a.fisher[i].same_shape(fisher[i])) throw std::invalid_argument("EwcState::absorb: shape drift");
      for (std::size_t j = 0; j < fisher[i].numel(); ++j) a.fisher[i].data[j] += fisher[i].data[j];
    }
  } else {
    a.fisher = std::move(fisher);
  }
  a.snapshot = std::move(snapshot);
}

std::vector<Tensor> mean_squared_grads(const std::vector<GradientSet>& batch_grads) {
  if (batch_grads.empty()) throw std::invalid_argument("mean_squared_grads: need at least one batch");
  std::vector<Tensor> fisher;
  fisher.reserve(batch_grads[0].grads.size());
  for (const Tensor& g : batch_grads[0].grads) fisher.push_back(Tensor::zeros(g.shape));
  double inv = 1.0 / static_cast<double>(batch_grads.size());
  for (const GradientSet& gs : batch_grads) {
    if (gs.grads.size() != fisher.size()) throw std::invalid_argument("mean_squared_grads: slot mismatch");
    for (std::size_t i = 0; i < fisher.size(); ++i) {
      for (std::size_t j = 0; j < fisher[i].numel(); ++j) {
        double g = gs.grads[i].data[j];
        if (!std::isfinite(g)) throw std::runtime_error("mean_squared_grads: non-finite gradient");
        fisher[i].data[j] += g * g * inv;
      }
    }
  }
  return fisher;
}

Tape::NodeId ewc_penalty_node(Tape& tape, const std::vector<Tape::NodeId>& leaves,
                              const ModelState& params, const EwcState& ewc, const EwcConfig& config) {
  if (config.mode == EwcMode::Off || ewc.empty()) return -1;
  Tape::NodeId total = -1;
  for (const FisherAnchor& anchor : ewc.anchors) {
    if (anchor.fisher.size() != params.tensors().size()) {
      throw std::invalid_argument("ewc_penalty: anchor slot count mismatch");
    }
    for (std::size_t i = 0; i < params.tensors().size(); ++i) {
      const NamedTensor& nt = params.tensors()[i];
      if (!nt.value.same_shape(anchor.snapshot[i])) {
        throw std::invalid_argument("ewc_penalty: shape mismatch for " + nt.name);
      }
      double lambda = config.lambda_for(nt.group);
      if (lambda == 0.0) continue;
      Tape::NodeId diff = tape.sub(leaves[i], tape.constant(anchor.snapshot[i]));
      Tape::NodeId weighted = tape.mul(tape.mul(diff, diff), tape.constant(anchor.fisher[i]));
      Tape::NodeId term = tape.scale(tape.sum_all(weighted), lambda);
      total = total < 0 ? term : tape.add(total, term);
    }
  }
  return total;
}

double ewc_penalty(const ModelState& params, const EwcState& ewc, const EwcConfig& config) {
  if (config.mode == EwcMode::Off || ewc.empty()) return 0.0;
  double total = 0.0;
  for (const FisherAnchor& anchor : ewc.anchors) {
    if (anchor.fisher.size() != params.tensors().size()) {
      throw std::invalid_argument("ewc_penalty: anchor slot count mismatch");
    }
    for (std::size_t i = 0; i < params.tensors().size(); ++i) {
      const NamedTensor& nt = params.tensors()[i];
      if (!nt.value.same_shape(anchor.snapshot[i])) {
        throw std::invalid_argument("ewc_penalty: shape mismatch for " + nt.name);
      }
      double lambda = config.lambda_for(nt.group);
      if (lambda == 0.0) continue;
      double acc = 0.0;
      for (std::size_t j = 0; j < nt.value.numel(); ++j) {
        double d = nt.value.data[j] - anchor.snapshot[i].data[j];
        acc += anchor.fisher[i].data[j] * d * d;
      }
      total += lambda * acc;
    }
  }
  return total;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k, Rng& rng,
                    std::size_t max_iters, double tol) {
  if (points.empty() || k == 0) throw std::invalid_argument("kmeans: need points and k > 0");
  k = std::min(k, points.size());
  std::size_t dim = points[0].size();

  // k-means++ seeding.
  std::vector<std::vector<double>> centroids;
  centroids.push_back(points[rng.below(points.size())]);
  std::vector<double> d2(points.size());
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      // All remaining mass on existing centroids (duplicate points); pick uniformly.
      centroids.push_back(points[rng.below(points.size())]);
      continue;
    }
    double target = rng.uniform() * total;
    std::size_t pick = points.size() - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      acc += d2[i];
      if (acc >= target) {
        pick = i;
        break;
      }
    }
    centroids.push_back(points[pick]);
  }

  KMeansResult result;
  result.assignment.assign(points.size(), 0);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      int best_c = 0;
      for (std::size_t c = 0; c < centroids.size(); ++c) {
        double d = sq_dist(points[i], centroids[c]);
        if (d < best) {
          best = d;
          best_c = static_cast<int>(c);
        }
      }
      result.assignment[i] = best_c;
    }

    std::vector<std::vector<double>> next(centroids.size(), std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(centroids.size(), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      int c = result.assignment[i];
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) next[c][d] += points[i][d];
    }
    for (std::size_t c = 0; c < next.size(); ++c) {
      if (counts[c] == 0) {
        // Reseed to the point farthest from its own centroid.
        double worst = -1.0;
        std::size_t pick = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
          double d = sq_dist(points[i], centroids[result.assignment[i]]);
          if (d > worst) {
            worst = d;
            pick = i;
          }
        }
        next[c] = points[pick];
      } else {
        for (std::size_t d = 0; d < dim; ++d) next[c][d] /= static_cast<double>(counts[c]);
      }
    }

    double shift = 0.0, scale = 0.0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      shift += sq_dist(centroids[c], next[c]);
      for (double x : centroids[c]) scale += x * x;
    }
    centroids = std::move(next);
    if (shift <= tol * std::max(scale, 1e-12)) break;
  }

  // Final assignment against the settled centroids.
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_c = 0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      double d = sq_dist(points[i], centroids[c]);
      if (d < best) {
        best = d;
        best_c = static_cast<int>(c);
      }
    }
    result.assignment[i] = best_c;
  }
  result.centroids = std::move(centroids);
  return result;
}

void ReplayBuffer::rebalance(const std::vector<Triple>& new_task_train, int new_task_id,
                             const std::vector<std::vector<double>>& head_embedding_of_entity,
                             int tasks_completed, Rng& rng) {
  if (capacity_ == 0) {
    entries_.clear();
    return;
  }
  if (tasks_completed <= 0) throw std::invalid_argument("rebalance: tasks_completed must be positive");

  std::vector<ReplayEntry> pool = entries_;
  for (const Triple& t : new_task_train) pool.push_back(ReplayEntry{new_task_id, t});

  std::map<int, std::vector<std::size_t>> by_task;  // source task -> pool indices
  for (std::size_t i = 0; i < pool.size(); ++i) by_task[pool[i].source_task].push_back(i);

  std::size_t per_task = capacity_ / static_cast<std::size_t>(tasks_completed);
  std::vector<ReplayEntry> next;
  for (const auto& [task, indices] : by_task) {
    if (per_task == 0) break;
    if (indices.size() <= per_task) {
      for (std::size_t i : indices) next.push_back(pool[i]);
      continue;
    }
    std::vector<std::vector<double>> pts;
    pts.reserve(indices.size());
    for (std::size_t i : indices) {
      int head = pool[i].triple.head;
      if (head < 0 || static_cast<std::size_t>(head) >= head_embedding_of_entity.size()) {
        throw std::out_of_range("rebalance: missing structural embedding for head entity");
      }
      pts.push_back(head_embedding_of_entity[head]);
    }
    KMeansResult km = kmeans(pts, per_task, rng);

    std::vector<char> selected(indices.size(), 0);
    for (std::size_t c = 0; c < km.centroids.size(); ++c) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_i = indices.size();
      for (std::size_t i = 0; i < indices.size(); ++i) {
        if (km.assignment[i] != static_cast<int>(c)) continue;
        double d = sq_dist(pts[i], km.centroids[c]);
        if (d < best) {
          best = d;
          best_i = i;
        }
      }
      if (best_i < indices.size() && !selected[best_i]) selected[best_i] = 1;
    }
    // Degenerate clusterings (duplicate embeddings) can select fewer than
    // per_task triples; top up in pool order to honor the floor guarantee.
    std::size_t picked = static_cast<std::size_t>(std::count(selected.begin(), selected.end(), 1));
    for (std::size_t i = 0; i < indices.size() && picked < per_task; ++i) {
      if (!selected[i]) {
        selected[i] = 1;
        ++picked;
      }
    }
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (selected[i]) next.push_back(pool[indices[i]]);
    }
  }
  entries_ = std::move(next);
  if (entries_.size() > capacity_) entries_.resize(capacity_);
}

std::vector<ReplayEntry> ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  std::vector<ReplayEntry> batch;
  if (entries_.empty()) return batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    batch.push_back(entries_[rng.below(entries_.size())]);
  }
  return batch;
}

void ReplayBuffer::dump_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("ReplayBuffer::dump_csv: cannot open " + path);
  out << "task,head,rel,tail\n";
  for (const ReplayEntry& e : entries_) {
    out << e.source_task << ',' << e.triple.head << ',' << e.triple.rel << ',' << e.triple.tail << '\n';
  }
}

double total_loss(double task_loss, double ewc_penalty, double replay_loss, double alpha, int task_index) {
  if (task_index <= 1) return task_loss;
  return task_loss + ewc_penalty + alpha * replay_loss;
}

}  // namespace cmkl
