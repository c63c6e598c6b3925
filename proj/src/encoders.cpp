#include "cmkl/encoders.hpp"

#include <map>
#include <set>
#include <stdexcept>

namespace cmkl {

RelationGraph RelationGraph::build(const std::vector<Triple>& edges, std::size_t n_entities,
                                   std::size_t n_relations) {
  RelationGraph g;
  g.n_entities = n_entities;
  g.per_relation.resize(n_relations);

  std::set<Triple> unique(edges.begin(), edges.end());
  std::vector<std::map<int, std::vector<int>>> in_neighbors(n_relations);  // tail -> heads
  for (const Triple& t : unique) {
    if (t.head < 0 || t.tail < 0 || static_cast<std::size_t>(t.head) >= n_entities ||
        static_cast<std::size_t>(t.tail) >= n_entities || t.rel < 0 ||
        static_cast<std::size_t>(t.rel) >= n_relations) {
      throw std::out_of_range("RelationGraph: triple id outside vocabulary");
    }
    in_neighbors[t.rel][t.tail].push_back(t.head);
  }
  for (std::size_t r = 0; r < n_relations; ++r) {
    for (const auto& [tail, heads] : in_neighbors[r]) {
      double w = 1.0 / static_cast<double>(heads.size());
      for (int head : heads) g.per_relation[r].push_back(SparseEntry{tail, head, w});
    }
  }
  return g;
}

FeatureLayout FeatureLayout::build(const FeatureStore& features, std::size_t n_entities) {
  FeatureLayout layout;
  for (std::size_t e = 0; e < n_entities; ++e) {
    int id = static_cast<int>(e);
    if (features.has_text(id)) {
      layout.text_idx.push_back(id);
    } else {
      layout.text_missing.push_back(id);
    }
    if (features.has_mol(id)) {
      layout.mol_idx.push_back(id);
    } else {
      layout.mol_missing.push_back(id);
    }
  }
  layout.text_matrix = Tensor({layout.text_idx.size(), features.d_text});
  for (std::size_t i = 0; i < layout.text_idx.size(); ++i) {
    const auto& v = features.text.at(layout.text_idx[i]);
    if (v.size() != features.d_text) throw std::invalid_argument("FeatureLayout: text dim mismatch");
    for (std::size_t j = 0; j < v.size(); ++j) layout.text_matrix.at(i, j) = v[j];
  }
  layout.mol_matrix = Tensor({layout.mol_idx.size(), features.d_mol});
  for (std::size_t i = 0; i < layout.mol_idx.size(); ++i) {
    const auto& v = features.mol.at(layout.mol_idx[i]);
    if (v.size() != features.d_mol) throw std::invalid_argument("FeatureLayout: mol dim mismatch");
    for (std::size_t j = 0; j < v.size(); ++j) layout.mol_matrix.at(i, j) = v[j];
  }
  return layout;
}

Tape::NodeId rgcn_forward(Tape& tape, const RgcnNodes& params, const RelationGraph& graph) {
  Tape::NodeId h = params.e0;
  std::size_t dim = tape.val(params.e0).cols();
  for (const RgcnLayerNodes& layer : params.layers) {
    std::size_t n_rel = tape.val(layer.coef).rows();
    std::size_t n_basis = tape.val(layer.coef).cols();
    // W_all[r] = sum_b coef[r,b] * basis[b], realized as one (|R|,B)x(B,D*D).
    Tape::NodeId basis_flat = tape.reshape(layer.basis, {n_basis, dim * dim});
    Tape::NodeId w_all = tape.matmul(layer.coef, basis_flat);

    Tape::NodeId pre = tape.linear(h, layer.self);
    for (std::size_t r = 0; r < n_rel; ++r) {
      if (graph.per_relation[r].empty()) continue;
      Tape::NodeId w_r = tape.reshape(tape.gather_rows(w_all, {static_cast<int>(r)}), {dim, dim});
      Tape::NodeId msg = tape.sparse_row_combine(graph.per_relation[r], h, graph.n_entities);
      pre = tape.add(pre, tape.linear(msg, w_r));
    }
    h = tape.relu(pre);
  }
  return h;
}

Tape::NodeId text_forward(Tape& tape, const TextProjNodes& params, const FeatureLayout& layout,
                          std::size_t n_entities) {
  std::size_t dim = tape.val(params.def).shape[0];
  Tape::NodeId out = -1;
  if (!layout.text_idx.empty()) {
    Tape::NodeId feats = tape.constant(layout.text_matrix);
    Tape::NodeId proj = tape.add_rowvec(tape.linear(feats, params.w), params.b);
    out = tape.scatter_rows(proj, layout.text_idx, n_entities);
  }
  if (!layout.text_missing.empty()) {
    Tape::NodeId defaults = tape.broadcast_row(params.def, layout.text_missing.size());
    Tape::NodeId scattered = tape.scatter_rows(defaults, layout.text_missing, n_entities);
    out = out < 0 ? scattered : tape.add(out, scattered);
  }
  if (out < 0) out = tape.constant(Tensor({n_entities, dim}));
  return out;
}

Tape::NodeId mol_forward(Tape& tape, const MolMlpNodes& params, const FeatureLayout& layout,
                         std::size_t n_entities) {
  std::size_t dim = tape.val(params.def).shape[0];
  Tape::NodeId out = -1;
  if (!layout.mol_idx.empty()) {
    Tape::NodeId feats = tape.constant(layout.mol_matrix);
    Tape::NodeId hidden = tape.relu(tape.add_rowvec(tape.linear(feats, params.w1), params.b1));
    Tape::NodeId proj = tape.add_rowvec(tape.linear(hidden, params.w2), params.b2);
    out = tape.scatter_rows(proj, layout.mol_idx, n_entities);
  }
  if (!layout.mol_missing.empty()) {
    Tape::NodeId defaults = tape.broadcast_row(params.def, layout.mol_missing.size());
    Tape::NodeId scattered = tape.scatter_rows(defaults, layout.mol_missing, n_entities);
    out = out < 0 ? scattered : tape.add(out, scattered);
  }
  if (out < 0) out = tape.constant(Tensor({n_entities, dim}));
  return out;
}

}  // namespace cmkl
