#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cmkl/kgdata.hpp"

namespace cmkl {

enum class Direction { Head, Tail };

// Known true completions for every (entity, relation) query key, built from
// train + valid + test of the whole sequence.
class FilterIndex {
 public:
  static FilterIndex build(const TaskSequence& seq);

  bool contains(const Triple& t) const;
  // Candidates that must be removed when ranking `query` in `dir` (known true
  // completions other than the query's own answer).
  const std::unordered_set<int>* completions(const Triple& query, Direction dir) const;

 private:
  static std::int64_t key(int fixed_entity, int rel) {
    return (static_cast<std::int64_t>(fixed_entity) << 24) | rel;
  }
  std::unordered_map<std::int64_t, std::unordered_set<int>> tails_of_;  // (head, rel) -> tails
  std::unordered_map<std::int64_t, std::unordered_set<int>> heads_of_;  // (tail, rel) -> heads
};

// Rank of the query answer after filtering known completions; ties use the
// mean-rank-among-ties convention, so the result can be a half-integer.
double filtered_rank(const std::vector<double>& candidate_scores, const Triple& query,
                     Direction dir, const FilterIndex& filter);

// Scores for every candidate entity given the fixed slot of the query.
using CandidateScorer = std::function<std::vector<double>(const Triple& query, Direction dir)>;

// Filtered MRR over head and tail prediction for every test triple; nullopt on
// an empty test split.
std::optional<double> evaluate_lp(const CandidateScorer& scorer, const TaskDataset& task,
                                  const FilterIndex& filter);

// Macro-F1 over the types present in the test set (true or predicted).
// `predict` maps entity id to type id.
std::optional<double> evaluate_nc(const std::function<int(int)>& predict,
                                  const std::vector<int>& test_entities,
                                  const std::vector<int>& entity_type, int n_types);

struct MetricsMatrix {
  int n_tasks = 0;
  std::vector<std::vector<double>> value;  // [j][i], metric on task i after task j
  std::vector<std::vector<bool>> defined;

  static MetricsMatrix make(int n_tasks);
  void set(int after_task, int eval_task, double v);  // 1-based indices
  std::optional<double> get(int after_task, int eval_task) const;
};

struct ClMetrics {
  double ap = std::nan("");
  double af = std::nan("");
  double bwt = std::nan("");
  double rem = std::nan("");
  double fwt = 0.0;
  std::vector<double> per_task_forgetting;  // peak minus final, per task
  std::vector<double> per_task_peak;
};

// AP/AF/BWT/REM from the lower triangle of R. With a single task AF, BWT and
// REM are undefined (NaN) and AP = R[1][1].
ClMetrics cl_metrics(const MetricsMatrix& r);

}  // namespace cmkl
