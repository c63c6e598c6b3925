#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cmkl/tensor.hpp"

namespace cmkl {

// One weighted edge of a message-passing step: out[dst] += w * in[src].
struct SparseEntry {
  int dst;
  int src;
  double weight;
};

// Reverse-mode tape over dense double tensors. Built define-by-run: each op
// evaluates eagerly and records a backward closure. A fresh tape is built per
// training step; node count at desk scale is a few hundred.
class Tape {
 public:
  using NodeId = int;

  NodeId constant(Tensor v);
  NodeId param(const Tensor& v);  // leaf that accumulates gradient

  const Tensor& val(NodeId id) const { return nodes_[id].val; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }

  // --- elementwise / scalar ---
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // hadamard
  NodeId scale(NodeId a, double c);
  NodeId add_scalar(NodeId a, double c);
  NodeId relu(NodeId a);  // subgradient at 0 is 0

  // --- linear algebra ---
  NodeId matmul(NodeId a, NodeId b);  // (m,k)x(k,n)
  NodeId linear(NodeId x, NodeId w);  // x * w^T, w stored (out,in)
  NodeId add_rowvec(NodeId x, NodeId b);  // broadcast rank-1 b over rows
  NodeId reshape(NodeId a, std::vector<std::size_t> shape);

  // --- structural ---
  NodeId concat_cols(const std::vector<NodeId>& parts);
  NodeId gather_rows(NodeId a, std::vector<int> idx);
  NodeId scatter_rows(NodeId a, std::vector<int> idx, std::size_t out_rows);
  NodeId broadcast_row(NodeId v, std::size_t n);  // rank-1 (d) -> (n,d)
  NodeId sparse_row_combine(const std::vector<SparseEntry>& entries, NodeId x, std::size_t out_rows);
  NodeId column(NodeId a, std::size_t j);           // (n,c) -> (n)
  NodeId colwise_scale(NodeId x, NodeId w);         // out[i,:] = w[i] * x[i,:]
  NodeId repeat_interleave(NodeId v, std::size_t n);  // (p) -> (p*n)

  // --- activations / normalization ---
  NodeId row_softmax(NodeId a);
  NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);

  // --- reductions / losses ---
  NodeId sum_all(NodeId a);
  NodeId mean_all(NodeId a);
  NodeId mean_rows(NodeId a);  // (n,c) -> (c)
  NodeId triple_dot(NodeId a, NodeId b, NodeId c);  // rowwise sum(a*b*c) -> (n)
  NodeId cross_entropy(NodeId logits, std::vector<int> labels);  // mean NLL

  // Seeds d(root)/d(root) = 1 and propagates. Root must be a scalar.
  void backward(NodeId root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void(Tape&)> back;
    bool needs_grad = false;
  };

  NodeId push(Tensor v, bool needs_grad, std::function<void(Tape&)> back);
  Tensor& grad_mut(NodeId id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

}  // namespace cmkl
