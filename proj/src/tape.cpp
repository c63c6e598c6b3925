#include "cmkl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cmkl {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace

Tape::NodeId Tape::push(Tensor v, bool needs_grad, std::function<void(Tape&)> back) {
  Node n;
  n.grad = Tensor::zeros(v.shape);
  n.val = std::move(v);
  n.back = std::move(back);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::constant(Tensor v) { return push(std::move(v), false, nullptr); }

Tape::NodeId Tape::param(const Tensor& v) { return push(v, true, nullptr); }

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  check_same_shape(val(a), val(b), "add");
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, b, id](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad_mut(a);
    Tensor& gb = t.grad_mut(b);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i] += g.data[i];
    }
  };
  return id;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  check_same_shape(val(a), val(b), "sub");
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= vb.data[i];
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, b, id](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad_mut(a);
    Tensor& gb = t.grad_mut(b);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i] -= g.data[i];
    }
  };
  return id;
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  check_same_shape(val(a), val(b), "mul");
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, b, id](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& va = t.val(a);
    const Tensor& vb2 = t.val(b);
    Tensor& ga = t.grad_mut(a);
    Tensor& gb = t.grad_mut(b);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga.data[i] += g.data[i] * vb2.data[i];
      gb.data[i] += g.data[i] * va.data[i];
    }
  };
  return id;
}

Tape::NodeId Tape::scale(NodeId a, double c) {
  Tensor out = val(a);
  for (double& x : out.data) x *= c;
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, c, id](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += c * g.data[i];
  };
  return id;
}

Tape::NodeId Tape::add_scalar(NodeId a, double c) {
  Tensor out = val(a);
  for (double& x : out.data) x += c;
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, id](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
  };
  return id;
}

Tape::NodeId Tape::relu(NodeId a) {
  Tensor out = val(a);
  for (double& x : out.data) x = x > 0.0 ? x : 0.0;
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, id](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& va = t.val(a);
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (va.data[i] > 0.0) ga.data[i] += g.data[i];
    }
  };
  return id;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows()) {
    throw std::invalid_argument("matmul: bad shapes " + va.shape_str() + " x " + vb.shape_str());
  }
  std::size_t m = va.rows(), k = va.cols(), n = vb.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double aip = va.at(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * vb.at(p, j);
    }
  }
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, b, id, m, k, n](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& va2 = t.val(a);
    const Tensor& vb2 = t.val(b);
    Tensor& ga = t.grad_mut(a);
    Tensor& gb = t.grad_mut(b);
    // dA = G * B^T ; dB = A^T * G
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double gij = g.at(i, j);
        if (gij == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) {
          ga.at(i, p) += gij * vb2.at(p, j);
          gb.at(p, j) += va2.at(i, p) * gij;
        }
      }
    }
  };
  return id;
}

Tape::NodeId Tape::linear(NodeId x, NodeId w) {
  const Tensor& vx = val(x);
  const Tensor& vw = val(w);
  if (vx.rank() != 2 || vw.rank() != 2 || vx.cols() != vw.cols()) {
    throw std::invalid_argument("linear: bad shapes " + vx.shape_str() + " x " + vw.shape_str());
  }
  std::size_t n = vx.rows(), in = vx.cols(), out_dim = vw.rows();
  Tensor out({n, out_dim});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = 0.0;
      for (std::size_t p = 0; p < in; ++p) s += vx.at(i, p) * vw.at(o, p);
      out.at(i, o) = s;
    }
  }
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [x, w, id, n, in, out_dim](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& vx2 = t.val(x);
    const Tensor& vw2 = t.val(w);
    Tensor& gx = t.grad_mut(x);
    Tensor& gw = t.grad_mut(w);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < out_dim; ++o) {
        double gio = g.at(i, o);
        if (gio == 0.0) continue;
        for (std::size_t p = 0; p < in; ++p) {
          gx.at(i, p) += gio * vw2.at(o, p);
          gw.at(o, p) += gio * vx2.at(i, p);
        }
      }
    }
  };
  return id;
}

Tape::NodeId Tape::add_rowvec(NodeId x, NodeId b) {
  const Tensor& vx = val(x);
  const Tensor& vb = val(b);
  if (vx.rank() != 2 || vb.rank() != 1 || vx.cols() != vb.shape[0]) {
    throw std::invalid_argument("add_rowvec: bad shapes");
  }
  Tensor out = vx;
  for (std::size_t i = 0; i < vx.rows(); ++i)
    for (std::size_t j = 0; j < vx.cols(); ++j) out.at(i, j) += vb.at(j);
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [x, b, id](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& gx = t.grad_mut(x);
    Tensor& gb = t.grad_mut(b);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) {
        gx.at(i, j) += g.at(i, j);
        gb.at(j) += g.at(i, j);
      }
  };
  return id;
}

Tape::NodeId Tape::reshape(NodeId a, std::vector<std::size_t> shape) {
  const Tensor& va = val(a);
  if (Tensor::numel_of(shape) != va.numel()) throw std::invalid_argument("reshape: numel mismatch");
  Tensor out(shape, va.data);
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, id](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
  };
  return id;
}

Tape::NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  std::size_t n = val(parts[0]).rows();
  std::size_t total = 0;
  for (NodeId p : parts) {
    if (val(p).rank() != 2 || val(p).rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
    total += val(p).cols();
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (NodeId p : parts) {
    const Tensor& vp = val(p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < vp.cols(); ++j) out.at(i, off + j) = vp.at(i, j);
    off += vp.cols();
  }
  std::vector<NodeId> ps = parts;
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [ps, id, n](Tape& t) {
    const Tensor& g = t.grad(id);
    std::size_t off2 = 0;
    for (NodeId p : ps) {
      Tensor& gp = t.grad_mut(p);
      std::size_t c = gp.cols();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gp.at(i, j) += g.at(i, off2 + j);
      off2 += c;
    }
  };
  return id;
}

Tape::NodeId Tape::gather_rows(NodeId a, std::vector<int> idx) {
  const Tensor& va = val(a);
  if (va.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 input required");
  Tensor out({idx.size(), va.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    int r = idx[i];
    if (r < 0 || static_cast<std::size_t>(r) >= va.rows()) throw std::out_of_range("gather_rows: index");
    for (std::size_t j = 0; j < va.cols(); ++j) out.at(i, j) = va.at(r, j);
  }
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, idx = std::move(idx), id](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga.at(idx[i], j) += g.at(i, j);
  };
  return id;
}

Tape::NodeId Tape::scatter_rows(NodeId a, std::vector<int> idx, std::size_t out_rows) {
  const Tensor& va = val(a);
  if (va.rank() != 2 || va.rows() != idx.size()) throw std::invalid_argument("scatter_rows: bad shapes");
  Tensor out({out_rows, va.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    int r = idx[i];
    if (r < 0 || static_cast<std::size_t>(r) >= out_rows) throw std::out_of_range("scatter_rows: index");
    for (std::size_t j = 0; j < va.cols(); ++j) out.at(r, j) += va.at(i, j);
  }
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, idx = std::move(idx), id](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga.at(i, j) += g.at(idx[i], j);
  };
  return id;
}

Tape::NodeId Tape::broadcast_row(NodeId v, std::size_t n) {
  const Tensor& vv = val(v);
  if (vv.rank() != 1) throw std::invalid_argument("broadcast_row: rank-1 input required");
  std::size_t d = vv.shape[0];
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = vv.at(j);
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [v, id](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& gv = t.grad_mut(v);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gv.at(j) += g.at(i, j);
  };
  return id;
}

Tape::NodeId Tape::sparse_row_combine(const std::vector<SparseEntry>& entries, NodeId x, std::size_t out_rows) {
  const Tensor& vx = val(x);
  if (vx.rank() != 2) throw std::invalid_argument("sparse_row_combine: rank-2 input required");
  std::size_t d = vx.cols();
  Tensor out({out_rows, d});
  for (const SparseEntry& e : entries) {
    for (std::size_t j = 0; j < d; ++j) out.at(e.dst, j) += e.weight * vx.at(e.src, j);
  }
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [entries, x, id, d](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& gx = t.grad_mut(x);
    for (const SparseEntry& e : entries) {
      for (std::size_t j = 0; j < d; ++j) gx.at(e.src, j) += e.weight * g.at(e.dst, j);
    }
  };
  return id;
}

Tape::NodeId Tape::column(NodeId a, std::size_t j) {
  const Tensor& va = val(a);
  if (va.rank() != 2 || j >= va.cols()) throw std::invalid_argument("column: bad index");
  Tensor out({va.rows()});
  for (std::size_t i = 0; i < va.rows(); ++i) out.at(i) = va.at(i, j);
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, j, id](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.shape[0]; ++i) ga.at(i, j) += g.at(i);
  };
  return id;
}

Tape::NodeId Tape::colwise_scale(NodeId x, NodeId w) {
  const Tensor& vx = val(x);
  const Tensor& vw = val(w);
  if (vx.rank() != 2 || vw.rank() != 1 || vw.shape[0] != vx.rows()) {
    throw std::invalid_argument("colwise_scale: bad shapes");
  }
  Tensor out = vx;
  for (std::size_t i = 0; i < vx.rows(); ++i)
    for (std::size_t j = 0; j < vx.cols(); ++j) out.at(i, j) *= vw.at(i);
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [x, w, id](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& vx2 = t.val(x);
    const Tensor& vw2 = t.val(w);
    Tensor& gx = t.grad_mut(x);
    Tensor& gw = t.grad_mut(w);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) {
        gx.at(i, j) += vw2.at(i) * g.at(i, j);
        acc += vx2.at(i, j) * g.at(i, j);
      }
      gw.at(i) += acc;
    }
  };
  return id;
}

Tape::NodeId Tape::repeat_interleave(NodeId v, std::size_t n) {
  const Tensor& vv = val(v);
  if (vv.rank() != 1) throw std::invalid_argument("repeat_interleave: rank-1 input required");
  Tensor out({vv.shape[0] * n});
  for (std::size_t i = 0; i < vv.shape[0]; ++i)
    for (std::size_t k = 0; k < n; ++k) out.at(i * n + k) = vv.at(i);
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [v, n, id](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& gv = t.grad_mut(v);
    for (std::size_t i = 0; i < gv.shape[0]; ++i)
      for (std::size_t k = 0; k < n; ++k) gv.at(i) += g.at(i * n + k);
  };
  return id;
}

Tape::NodeId Tape::row_softmax(NodeId a) {
  const Tensor& va = val(a);
  if (va.rank() != 2) throw std::invalid_argument("row_softmax: rank-2 input required");
  Tensor out = va;
  for (std::size_t i = 0; i < va.rows(); ++i) {
    double m = out.at(i, 0);
    for (std::size_t j = 1; j < va.cols(); ++j) m = std::max(m, out.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < va.cols(); ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - m);
      z += out.at(i, j);
    }
    for (std::size_t j = 0; j < va.cols(); ++j) out.at(i, j) /= z;
  }
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, id](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& y = t.val(id);
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  };
  return id;
}

Tape::NodeId Tape::layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
  const Tensor& vx = val(x);
  const Tensor& vg = val(gamma);
  const Tensor& vb = val(beta);
  if (vx.rank() != 2 || vg.rank() != 1 || vb.rank() != 1 || vg.shape[0] != vx.cols() || vb.shape[0] != vx.cols()) {
    throw std::invalid_argument("layer_norm: bad shapes");
  }
  std::size_t n = vx.rows(), d = vx.cols();
  Tensor out({n, d});
  std::vector<double> means(n), inv_stds(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += vx.at(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = vx.at(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    means[i] = mu;
    inv_stds[i] = inv;
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = vg.at(j) * (vx.at(i, j) - mu) * inv + vb.at(j);
  }
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [x, gamma, beta, id, n, d, means = std::move(means), inv_stds = std::move(inv_stds)](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& vx2 = t.val(x);
    const Tensor& vg2 = t.val(gamma);
    Tensor& gx = t.grad_mut(x);
    Tensor& gg = t.grad_mut(gamma);
    Tensor& gb = t.grad_mut(beta);
    for (std::size_t i = 0; i < n; ++i) {
      double inv = inv_stds[i];
      // dxhat accumulated per row, then standard two-correction formula
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double xhat = (vx2.at(i, j) - means[i]) * inv;
        double dxhat = g.at(i, j) * vg2.at(j);
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        gg.at(j) += g.at(i, j) * xhat;
        gb.at(j) += g.at(i, j);
      }
      for (std::size_t j = 0; j < d; ++j) {
        double xhat = (vx2.at(i, j) - means[i]) * inv;
        double dxhat = g.at(i, j) * vg2.at(j);
        gx.at(i, j) += inv * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / static_cast<double>(d));
      }
    }
  };
  return id;
}

Tape::NodeId Tape::sum_all(NodeId a) {
  const Tensor& va = val(a);
  double s = 0.0;
  for (double x : va.data) s += x;
  NodeId id = push(Tensor::scalar(s), true, nullptr);
  nodes_[id].back = [a, id](Tape& t) {
    double g = t.grad(id).at(0);
    Tensor& ga = t.grad_mut(a);
    for (double& x : ga.data) x += g;
  };
  return id;
}

Tape::NodeId Tape::mean_all(NodeId a) {
  const Tensor& va = val(a);
  if (va.numel() == 0) return constant(Tensor::scalar(0.0));
  double s = 0.0;
  for (double x : va.data) s += x;
  double inv = 1.0 / static_cast<double>(va.numel());
  NodeId id = push(Tensor::scalar(s * inv), true, nullptr);
  nodes_[id].back = [a, id, inv](Tape& t) {
    double g = t.grad(id).at(0) * inv;
    Tensor& ga = t.grad_mut(a);
    for (double& x : ga.data) x += g;
  };
  return id;
}

Tape::NodeId Tape::mean_rows(NodeId a) {
  const Tensor& va = val(a);
  if (va.rank() != 2 || va.rows() == 0) throw std::invalid_argument("mean_rows: bad input");
  std::size_t n = va.rows(), c = va.cols();
  double inv = 1.0 / static_cast<double>(n);
  Tensor out({c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j) += va.at(i, j) * inv;
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, id, n, c, inv](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += g.at(j) * inv;
  };
  return id;
}

Tape::NodeId Tape::triple_dot(NodeId a, NodeId b, NodeId c) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  const Tensor& vc = val(c);
  check_same_shape(va, vb, "triple_dot");
  check_same_shape(va, vc, "triple_dot");
  if (va.rank() != 2) throw std::invalid_argument("triple_dot: rank-2 inputs required");
  std::size_t n = va.rows(), d = va.cols();
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += va.at(i, j) * vb.at(i, j) * vc.at(i, j);
    out.at(i) = s;
  }
  NodeId id = push(std::move(out), true, nullptr);
  nodes_[id].back = [a, b, c, id, n, d](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& va2 = t.val(a);
    const Tensor& vb2 = t.val(b);
    const Tensor& vc2 = t.val(c);
    Tensor& ga = t.grad_mut(a);
    Tensor& gb = t.grad_mut(b);
    Tensor& gc = t.grad_mut(c);
    for (std::size_t i = 0; i < n; ++i) {
      double gi = g.at(i);
      if (gi == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) {
        ga.at(i, j) += gi * vb2.at(i, j) * vc2.at(i, j);
        gb.at(i, j) += gi * va2.at(i, j) * vc2.at(i, j);
        gc.at(i, j) += gi * va2.at(i, j) * vb2.at(i, j);
      }
    }
  };
  return id;
}

Tape::NodeId Tape::cross_entropy(NodeId logits, std::vector<int> labels) {
  const Tensor& vl = val(logits);
  if (vl.rank() != 2 || vl.rows() != labels.size()) throw std::invalid_argument("cross_entropy: bad shapes");
  std::size_t n = vl.rows(), c = vl.cols();
  double total = 0.0;
  Tensor soft({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) throw std::out_of_range("cross_entropy: label");
    double m = vl.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, vl.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(vl.at(i, j) - m);
    double lse = m + std::log(z);
    total += lse - vl.at(i, labels[i]);
    for (std::size_t j = 0; j < c; ++j) soft.at(i, j) = std::exp(vl.at(i, j) - lse);
  }
  double inv = 1.0 / static_cast<double>(n);
  NodeId id = push(Tensor::scalar(total * inv), true, nullptr);
  nodes_[id].back = [logits, id, labels = std::move(labels), soft = std::move(soft), inv](Tape& t) {
    double g = t.grad(id).at(0) * inv;
    Tensor& gl = t.grad_mut(logits);
    for (std::size_t i = 0; i < soft.rows(); ++i) {
      for (std::size_t j = 0; j < soft.cols(); ++j) {
        double ind = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
        gl.at(i, j) += g * (soft.at(i, j) - ind);
      }
    }
  };
  return id;
}

void Tape::backward(NodeId root) {
  if (val(root).numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  for (Node& n : nodes_) {
    std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
  }
  grad_mut(root).at(0) = 1.0;
  for (NodeId i = static_cast<NodeId>(nodes_.size()) - 1; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back(*this);
  }
}

}  // namespace cmkl
