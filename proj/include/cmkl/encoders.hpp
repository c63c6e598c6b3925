#pragma once

#include <cstddef>
#include <vector>

#include "cmkl/kgdata.hpp"
#include "cmkl/tape.hpp"

namespace cmkl {

// Message-passing view of a triple set: per relation, (dst=tail, src=head)
// entries weighted 1/|in-neighborhood|. Duplicate triples collapse to one edge.
struct RelationGraph {
  std::size_t n_entities = 0;
  std::vector<std::vector<SparseEntry>> per_relation;

  static RelationGraph build(const std::vector<Triple>& edges, std::size_t n_entities,
                             std::size_t n_relations);
};

// Constant per-task layout of which entities carry which features.
struct FeatureLayout {
  std::vector<int> text_idx;
  std::vector<int> text_missing;
  Tensor text_matrix;  // |text_idx| x d_text
  std::vector<int> mol_idx;
  std::vector<int> mol_missing;
  Tensor mol_matrix;  // |mol_idx| x d_mol

  static FeatureLayout build(const FeatureStore& features, std::size_t n_entities);
};

struct RgcnLayerNodes {
  Tape::NodeId basis;  // (B, D, D)
  Tape::NodeId coef;   // (|R|, B)
  Tape::NodeId self;   // (D, D)
};

struct RgcnNodes {
  Tape::NodeId e0;  // (|V|, D)
  std::vector<RgcnLayerNodes> layers;
};

// h <- relu( sum_r A_r h W_r^T + h W_0^T ) per layer, W_r = sum_b coef[r,b] basis[b].
Tape::NodeId rgcn_forward(Tape& tape, const RgcnNodes& params, const RelationGraph& graph);

struct TextProjNodes {
  Tape::NodeId w;    // (D, d_text)
  Tape::NodeId b;    // (D)
  Tape::NodeId def;  // (D), used for entities without text
};

Tape::NodeId text_forward(Tape& tape, const TextProjNodes& params, const FeatureLayout& layout,
                          std::size_t n_entities);

struct MolMlpNodes {
  Tape::NodeId w1;   // (D, d_mol)
  Tape::NodeId b1;   // (D)
  Tape::NodeId w2;   // (D, D)
  Tape::NodeId b2;   // (D)
  Tape::NodeId def;  // (D)
};

Tape::NodeId mol_forward(Tape& tape, const MolMlpNodes& params, const FeatureLayout& layout,
                         std::size_t n_entities);

}  // namespace cmkl
