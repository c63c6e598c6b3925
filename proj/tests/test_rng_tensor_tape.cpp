#include "doctest.h"

#include <cmath>
#include <functional>

#include "cmkl/rng.hpp"
#include "cmkl/tape.hpp"
#include "cmkl/tensor.hpp"

using namespace cmkl;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.data) x = scale * rng.normal();
  return t;
}

// Finite-difference check of a scalar-valued tape program against one leaf.
double fd_max_rel_error(const std::function<Tape::NodeId(Tape&, Tape::NodeId)>& program,
                        const Tensor& x0, double h = 1e-6) {
  Tape tape;
  Tape::NodeId x = tape.param(x0);
  Tape::NodeId loss = program(tape, x);
  tape.backward(loss);
  Tensor analytic = tape.grad(x);

  double max_rel = 0.0;
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    auto eval = [&](double v) {
      Tensor shifted = x0;
      shifted.data[i] = v;
      Tape t2;
      Tape::NodeId x2 = t2.param(shifted);
      return t2.val(program(t2, x2)).at(0);
    };
    double numeric = (eval(x0.data[i] + h) - eval(x0.data[i] - h)) / (2.0 * h);
    double denom = std::max({std::fabs(analytic.data[i]), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::fabs(analytic.data[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace

TEST_CASE("rng determinism and bounds") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  Rng c(5);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(c.below(7) < 7);
  }
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}

TEST_CASE("rng shuffle deterministic") {
  std::vector<int> v1{1, 2, 3, 4, 5, 6, 7}, v2 = v1;
  Rng a(9), b(9);
  a.shuffle(v1);
  b.shuffle(v2);
  CHECK(v1 == v2);
}

TEST_CASE("tape elementwise and reduction backward") {
  Rng rng(11);
  Tensor x = random_tensor({3, 4}, rng);
  CHECK(fd_max_rel_error([](Tape& t, Tape::NodeId xn) { return t.sum_all(t.mul(xn, xn)); }, x) < 1e-7);
  CHECK(fd_max_rel_error([](Tape& t, Tape::NodeId xn) { return t.mean_all(t.relu(xn)); }, x) < 1e-6);
  CHECK(fd_max_rel_error(
            [](Tape& t, Tape::NodeId xn) { return t.sum_all(t.add_scalar(t.scale(xn, -2.5), 1.0)); }, x) < 1e-7);
}

TEST_CASE("tape linear algebra backward") {
  Rng rng(12);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor w = random_tensor({4, 5}, rng);
  Tensor m = random_tensor({5, 2}, rng);
  CHECK(fd_max_rel_error(
            [&](Tape& t, Tape::NodeId xn) {
              return t.sum_all(t.mul(t.linear(xn, t.constant(w)), t.linear(xn, t.constant(w))));
            },
            x) < 1e-6);
  CHECK(fd_max_rel_error(
            [&](Tape& t, Tape::NodeId xn) { return t.sum_all(t.matmul(xn, t.constant(m))); }, x) < 1e-7);
  Tensor b = random_tensor({5}, rng);
  CHECK(fd_max_rel_error(
            [&](Tape& t, Tape::NodeId xn) { return t.sum_all(t.add_rowvec(xn, t.constant(b))); }, x) < 1e-7);
  // gradient also flows into the weight side
  CHECK(fd_max_rel_error(
            [&](Tape& t, Tape::NodeId wn) {
              return t.sum_all(t.mul(t.linear(t.constant(x), wn), t.linear(t.constant(x), wn)));
            },
            w) < 1e-6);
}

TEST_CASE("tape softmax, layernorm, cross entropy backward") {
  Rng rng(13);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor probe = random_tensor({4, 3}, rng);
  CHECK(fd_max_rel_error(
            [&](Tape& t, Tape::NodeId xn) {
              return t.sum_all(t.mul(t.row_softmax(xn), t.constant(probe)));
            },
            x) < 1e-6);
  Tensor g = random_tensor({3}, rng);
  Tensor be = random_tensor({3}, rng);
  CHECK(fd_max_rel_error(
            [&](Tape& t, Tape::NodeId xn) {
              Tensor p{{4, 3}, {0.3, -1, 2, 0.5, 0.1, -0.2, 1, 1, 1, -2, 0.4, 0.9}};
              return t.sum_all(t.mul(t.layer_norm(xn, t.constant(g), t.constant(be)), t.constant(p)));
            },
            x) < 1e-5);
  CHECK(fd_max_rel_error(
            [](Tape& t, Tape::NodeId xn) { return t.cross_entropy(xn, {0, 2, 1, 0}); }, x) < 1e-6);
}

TEST_CASE("tape structural ops backward") {
  Rng rng(14);
  Tensor x = random_tensor({5, 3}, rng);
  CHECK(fd_max_rel_error(
            [](Tape& t, Tape::NodeId xn) {
              Tape::NodeId gat = t.gather_rows(xn, {0, 2, 2, 4});
              return t.sum_all(t.mul(gat, gat));
            },
            x) < 1e-6);
  CHECK(fd_max_rel_error(
            [](Tape& t, Tape::NodeId xn) {
              Tape::NodeId s = t.scatter_rows(xn, {1, 3, 5, 0, 2}, 7);
              return t.sum_all(t.mul(s, s));
            },
            x) < 1e-6);
  std::vector<SparseEntry> edges{{0, 1, 0.5}, {0, 2, 0.5}, {3, 4, 1.0}, {2, 0, 1.0}};
  CHECK(fd_max_rel_error(
            [&](Tape& t, Tape::NodeId xn) {
              Tape::NodeId m = t.sparse_row_combine(edges, xn, 5);
              return t.sum_all(t.mul(m, m));
            },
            x) < 1e-6);
  CHECK(fd_max_rel_error(
            [](Tape& t, Tape::NodeId xn) {
              Tape::NodeId c = t.colwise_scale(xn, t.column(xn, 1));
              return t.sum_all(c);
            },
            x) < 1e-6);
  Tensor v = random_tensor({4}, rng);
  CHECK(fd_max_rel_error(
            [](Tape& t, Tape::NodeId vn) {
              Tape::NodeId b = t.broadcast_row(vn, 3);
              return t.sum_all(t.mul(b, b));
            },
            v) < 1e-7);
  CHECK(fd_max_rel_error(
            [](Tape& t, Tape::NodeId vn) {
              Tape::NodeId r = t.repeat_interleave(vn, 3);
              return t.sum_all(t.mul(r, r));
            },
            v) < 1e-7);
  CHECK(fd_max_rel_error(
            [&](Tape& t, Tape::NodeId xn) {
              Tape::NodeId c = t.concat_cols({xn, t.mul(xn, xn)});
              return t.sum_all(t.mul(c, c));
            },
            x) < 1e-6);
  Tensor a = random_tensor({4, 3}, rng);
  Tensor c2 = random_tensor({4, 3}, rng);
  CHECK(fd_max_rel_error(
            [&](Tape& t, Tape::NodeId xn) {
              return t.sum_all(t.triple_dot(xn, t.constant(a), t.constant(c2)));
            },
            random_tensor({4, 3}, rng)) < 1e-6);
  CHECK(fd_max_rel_error(
            [&](Tape& t, Tape::NodeId xn) { return t.sum_all(t.mean_rows(t.mul(xn, xn))); }, x) < 1e-7);
  CHECK(fd_max_rel_error(
            [](Tape& t, Tape::NodeId xn) {
              Tape::NodeId r = t.reshape(xn, {3, 5});
              return t.sum_all(t.mul(r, r));
            },
            x) < 1e-7);
}

TEST_CASE("tape reuses a node in several consumers") {
  // f(x) = sum(x*x) + sum(relu(x)) + sum(x); gradient accumulates across uses.
  Rng rng(15);
  Tensor x = random_tensor({6}, rng);
  CHECK(fd_max_rel_error(
            [](Tape& t, Tape::NodeId xn) {
              Tape::NodeId a = t.sum_all(t.mul(xn, xn));
              Tape::NodeId b = t.sum_all(t.relu(xn));
              return t.add(t.add(a, b), t.sum_all(xn));
            },
            x) < 1e-6);
}

TEST_CASE("relu subgradient at zero is zero") {
  Tape tape;
  Tape::NodeId x = tape.param(Tensor({3}, {-1.0, 0.0, 2.0}));
  Tape::NodeId loss = tape.sum_all(tape.relu(x));
  tape.backward(loss);
  CHECK(tape.grad(x).at(0) == 0.0);
  CHECK(tape.grad(x).at(1) == 0.0);  // the documented convention
  CHECK(tape.grad(x).at(2) == 1.0);
}
