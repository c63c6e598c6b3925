#pragma once

#include <vector>

#include "cmkl/kgdata.hpp"
#include "cmkl/rng.hpp"
#include "cmkl/tape.hpp"
#include "cmkl/tensor.hpp"

namespace cmkl {

// score(h,r,t) = sum_d h[d] * rel[d] * t[d]; symmetric in h and t.
double distmult_score(const std::vector<double>& h, const std::vector<double>& rel,
                      const std::vector<double>& t);

// Batch scores on the tape: gathers rows out of the entity matrix and the
// relation table, then the rowwise trilinear sum.
Tape::NodeId distmult_scores(Tape& tape, Tape::NodeId entity_matrix, Tape::NodeId rel_table,
                             const std::vector<Triple>& batch);

struct MarginLossConfig {
  double gamma = 1.0;
  int n_neg = 8;
};

// Each negative flips a fair coin between head and tail corruption and draws a
// uniform pool entity distinct from the original in that slot. Not filtered
// against known positives.
std::vector<Triple> sample_negatives(const Triple& pos, const std::vector<int>& entity_pool,
                                     int n_neg, Rng& rng);

// mean over (pos, neg) pairs of max(0, gamma + s_neg - s_pos); neg scores are
// grouped n_neg per positive.
Tape::NodeId margin_loss(Tape& tape, Tape::NodeId pos_scores, Tape::NodeId neg_scores,
                         double gamma, std::size_t n_neg);

struct ScoreFusionConfig {
  double alpha_text = 0.5;
  double alpha_mol = 0.3;
};

// s = s_struct + alpha_text * s_text + alpha_mol * s_mol, each a DistMult
// score over that modality's embeddings and relation table. Zero-weight terms
// are skipped so alpha = 0 reproduces the structural scorer bit-exactly.
Tape::NodeId score_fusion_scores(Tape& tape, Tape::NodeId h_struct, Tape::NodeId h_text,
                                 Tape::NodeId h_mol, Tape::NodeId rel_struct,
                                 Tape::NodeId rel_text, Tape::NodeId rel_mol,
                                 const std::vector<Triple>& batch, const ScoreFusionConfig& config);

struct ClassifierNodes {
  Tape::NodeId w;  // (n_types, D)
  Tape::NodeId b;  // (n_types)
};

Tape::NodeId classifier_logits(Tape& tape, Tape::NodeId entity_matrix, const std::vector<int>& entities,
                               const ClassifierNodes& params);

// softmax(W h + b); plain forward for evaluation.
std::vector<double> classify_entity(const std::vector<double>& h, const Tensor& w, const Tensor& b);

}  // namespace cmkl
