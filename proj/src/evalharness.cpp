#include "cmkl/evalharness.hpp"

#include <algorithm>
#include <stdexcept>

namespace cmkl {

FilterIndex FilterIndex::build(const TaskSequence& seq) {
  FilterIndex idx;
  for (const TaskDataset& task : seq.tasks) {
    for (const auto* split : {&task.train, &task.valid, &task.test}) {
      for (const Triple& t : *split) {
        idx.tails_of_[key(t.head, t.rel)].insert(t.tail);
        idx.heads_of_[key(t.tail, t.rel)].insert(t.head);
      }
    }
  }
  return idx;
}

bool FilterIndex::contains(const Triple& t) const {
  auto it = tails_of_.find(key(t.head, t.rel));
  return it != tails_of_.end() && it->second.count(t.tail) > 0;
}

const std::unordered_set<int>* FilterIndex::completions(const Triple& query, Direction dir) const {
  if (dir == Direction::Tail) {
    auto it = tails_of_.find(key(query.head, query.rel));
    return it == tails_of_.end() ? nullptr : &it->second;
  }
  auto it = heads_of_.find(key(query.tail, query.rel));
  return it == heads_of_.end() ? nullptr : &it->second;
}

double filtered_rank(const std::vector<double>& candidate_scores, const Triple& query,
                     Direction dir, const FilterIndex& filter) {
  int answer = dir == Direction::Tail ? query.tail : query.head;
  if (answer < 0 || static_cast<std::size_t>(answer) >= candidate_scores.size()) {
    throw std::out_of_range("filtered_rank: query answer outside the score set");
  }
  const std::unordered_set<int>* known = filter.completions(query, dir);
  double s_answer = candidate_scores[answer];
  std::size_t greater = 0, tied = 0;
  for (std::size_t c = 0; c < candidate_scores.size(); ++c) {
    if (static_cast<int>(c) == answer) continue;
    if (known && known->count(static_cast<int>(c))) continue;  // filtered true completion
    if (candidate_scores[c] > s_answer) {
      ++greater;
    } else if (candidate_scores[c] == s_answer) {
      ++tied;
    }
  }
  return 1.0 + static_cast<double>(greater) + 0.5 * static_cast<double>(tied);
}

std::optional<double> evaluate_lp(const CandidateScorer& scorer, const TaskDataset& task,
                                  const FilterIndex& filter) {
  if (task.test.empty()) return std::nullopt;
  double sum = 0.0;
  std::size_t count = 0;
  for (const Triple& t : task.test) {
    sum += 1.0 / filtered_rank(scorer(t, Direction::Tail), t, Direction::Tail, filter);
    sum += 1.0 / filtered_rank(scorer(t, Direction::Head), t, Direction::Head, filter);
    count += 2;
  }
  return sum / static_cast<double>(count);
}

std::optional<double> evaluate_nc(const std::function<int(int)>& predict,
                                  const std::vector<int>& test_entities,
                                  const std::vector<int>& entity_type, int n_types) {
  if (test_entities.empty()) return std::nullopt;
  std::vector<std::size_t> tp(n_types, 0), fp(n_types, 0), fn(n_types, 0);
  for (int e : test_entities) {
    int truth = entity_type.at(e);
    int pred = predict(e);
    if (truth < 0) continue;
    if (pred == truth) {
      ++tp[truth];
    } else {
      ++fn[truth];
      if (pred >= 0 && pred < n_types) ++fp[pred];
    }
  }
  double sum_f1 = 0.0;
  std::size_t present = 0;
  for (int c = 0; c < n_types; ++c) {
    std::size_t support = tp[c] + fn[c];
    std::size_t predicted = tp[c] + fp[c];
    if (support == 0 && predicted == 0) continue;  // type absent from this test set
    double precision = predicted > 0 ? static_cast<double>(tp[c]) / static_cast<double>(predicted) : 0.0;
    double recall = support > 0 ? static_cast<double>(tp[c]) / static_cast<double>(support) : 0.0;
    double f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    sum_f1 += f1;
    ++present;
  }
  if (present == 0) return std::nullopt;
  return sum_f1 / static_cast<double>(present);
}

MetricsMatrix MetricsMatrix::make(int n_tasks) {
  MetricsMatrix m;
  m.n_tasks = n_tasks;
  m.value.assign(n_tasks, std::vector<double>(n_tasks, std::nan("")));
  m.defined.assign(n_tasks, std::vector<bool>(n_tasks, false));
  return m;
}

void MetricsMatrix::set(int after_task, int eval_task, double v) {
  value.at(after_task - 1).at(eval_task - 1) = v;
  defined.at(after_task - 1).at(eval_task - 1) = true;
}

std::optional<double> MetricsMatrix::get(int after_task, int eval_task) const {
  if (!defined.at(after_task - 1).at(eval_task - 1)) return std::nullopt;
  return value[after_task - 1][eval_task - 1];
}

ClMetrics cl_metrics(const MetricsMatrix& r) {
  int k = r.n_tasks;
  if (k <= 0) throw std::invalid_argument("cl_metrics: empty matrix");
  for (int j = 1; j <= k; ++j) {
    for (int i = 1; i <= j; ++i) {
      if (!r.get(j, i)) throw std::invalid_argument("cl_metrics: incomplete lower triangle");
    }
  }
  ClMetrics m;
  double ap = 0.0;
  for (int i = 1; i <= k; ++i) ap += *r.get(k, i);
  m.ap = ap / static_cast<double>(k);

  m.per_task_forgetting.resize(k);
  m.per_task_peak.resize(k);
  for (int i = 1; i <= k; ++i) {
    double peak = *r.get(i, i);
    for (int j = i; j <= k; ++j) peak = std::max(peak, *r.get(j, i));
    m.per_task_peak[i - 1] = peak;
    m.per_task_forgetting[i - 1] = peak - *r.get(k, i);
  }

  if (k == 1) return m;  // AF/BWT/REM undefined

  double af = 0.0, bwt = 0.0;
  for (int i = 1; i < k; ++i) {
    af += m.per_task_forgetting[i - 1];
    bwt += *r.get(k, i) - *r.get(i, i);
  }
  m.af = af / static_cast<double>(k - 1);
  m.bwt = bwt / static_cast<double>(k - 1);
  m.rem = 1.0 - m.af;
  return m;
}

}  // namespace cmkl
