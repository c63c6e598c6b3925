#include "cmkl/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cmkl {

double distmult_score(const std::vector<double>& h, const std::vector<double>& rel,
                      const std::vector<double>& t) {
  if (h.size() != rel.size() || h.size() != t.size()) {
    throw std::invalid_argument("distmult_score: dimension mismatch");
  }
  double s = 0.0;
  for (std::size_t d = 0; d < h.size(); ++d) s += h[d] * rel[d] * t[d];
  return s;
}

Tape::NodeId distmult_scores(Tape& tape, Tape::NodeId entity_matrix, Tape::NodeId rel_table,
                             const std::vector<Triple>& batch) {
  std::vector<int> heads, rels, tails;
  heads.reserve(batch.size());
  rels.reserve(batch.size());
  tails.reserve(batch.size());
  for (const Triple& t : batch) {
    heads.push_back(t.head);
    rels.push_back(t.rel);
    tails.push_back(t.tail);
  }
  Tape::NodeId h = tape.gather_rows(entity_matrix, heads);
  Tape::NodeId r = tape.gather_rows(rel_table, rels);
  Tape::NodeId t = tape.gather_rows(entity_matrix, tails);
  return tape.triple_dot(h, r, t);
}

std::vector<Triple> sample_negatives(const Triple& pos, const std::vector<int>& entity_pool,
                                     int n_neg, Rng& rng) {
  if (entity_pool.size() < 2) throw std::invalid_argument("sample_negatives: pool must have at least 2 entities");
  std::vector<Triple> negatives;
  negatives.reserve(n_neg);
  for (int i = 0; i < n_neg; ++i) {
    Triple neg = pos;
    bool corrupt_head = rng.coin();
    int original = corrupt_head ? pos.head : pos.tail;
    // Draw from pool \ {original}: skip-adjust past its position when present.
    auto it = std::lower_bound(entity_pool.begin(), entity_pool.end(), original);
    bool in_pool = it != entity_pool.end() && *it == original;
    std::size_t span = entity_pool.size() - (in_pool ? 1 : 0);
    std::size_t draw = static_cast<std::size_t>(rng.below(span));
    if (in_pool && draw >= static_cast<std::size_t>(it - entity_pool.begin())) ++draw;
    int replacement = entity_pool[draw];
    if (corrupt_head) {
      neg.head = replacement;
    } else {
      neg.tail = replacement;
    }
    negatives.push_back(neg);
  }
  return negatives;
}

Tape::NodeId margin_loss(Tape& tape, Tape::NodeId pos_scores, Tape::NodeId neg_scores,
                         double gamma, std::size_t n_neg) {
  if (n_neg == 0) throw std::invalid_argument("margin_loss: each positive needs at least one negative");
  Tape::NodeId expanded = tape.repeat_interleave(pos_scores, n_neg);
  Tape::NodeId violation = tape.relu(tape.add_scalar(tape.sub(neg_scores, expanded), gamma));
  return tape.mean_all(violation);
}

Tape::NodeId score_fusion_scores(Tape& tape, Tape::NodeId h_struct, Tape::NodeId h_text,
                                 Tape::NodeId h_mol, Tape::NodeId rel_struct,
                                 Tape::NodeId rel_text, Tape::NodeId rel_mol,
                                 const std::vector<Triple>& batch, const ScoreFusionConfig& config) {
  Tape::NodeId s = distmult_scores(tape, h_struct, rel_struct, batch);
  if (config.alpha_text != 0.0) {
    s = tape.add(s, tape.scale(distmult_scores(tape, h_text, rel_text, batch), config.alpha_text));
  }
  if (config.alpha_mol != 0.0) {
    s = tape.add(s, tape.scale(distmult_scores(tape, h_mol, rel_mol, batch), config.alpha_mol));
  }
  return s;
}

Tape::NodeId classifier_logits(Tape& tape, Tape::NodeId entity_matrix, const std::vector<int>& entities,
                               const ClassifierNodes& params) {
  Tape::NodeId h = tape.gather_rows(entity_matrix, entities);
  return tape.add_rowvec(tape.linear(h, params.w), params.b);
}

std::vector<double> classify_entity(const std::vector<double>& h, const Tensor& w, const Tensor& b) {
  std::size_t n_types = w.rows();
  std::vector<double> logits(n_types);
  for (std::size_t c = 0; c < n_types; ++c) {
    double s = b.at(c);
    for (std::size_t d = 0; d < w.cols(); ++d) s += w.at(c, d) * h[d];
    logits[c] = s;
  }
  double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& x : logits) {
    x = std::exp(x - m);
    z += x;
  }
  for (double& x : logits) x /= z;
  return logits;
}

}  // namespace cmkl
