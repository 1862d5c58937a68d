#include <doctest.h>

#include <cmath>
#include <vector>

#include "cellsurv/errors.hpp"
#include "cellsurv/graph.hpp"
#include "cellsurv/tensor.hpp"
#include "op_catalog.hpp"
#include "support.hpp"

using namespace cellsurv;
using testing::max_gradient_error;
using testing::probe;
using testing::path3;
using testing::random_matrix;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("matmul values and flop count") {
  Tape t;
  Var id = t.constant(Matrix::Identity(2, 2));
  Var m = t.constant(mat({{1, 2}, {3, 4}}));
  CHECK(matmul(id, m).value() == mat({{1, 2}, {3, 4}}));
  CHECK(t.flop_count() == 2 * 2 * 2 * 2);

  Tape t2;
  Var p = matmul(t2.constant(mat({{1, 0}, {0, 0}})), t2.constant(mat({{5}, {7}})));
  CHECK(p.value() == mat({{5}, {0}}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape t;
  Var a = t.constant(Matrix::Zero(2, 3));
  Var b = t.constant(Matrix::Zero(2, 3));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("gradient of sum(A B) with respect to A is ones * B^T") {
  Rng rng(1);
  ParameterStore store;
  store.add("A", random_matrix(3, 4, rng));
  const Matrix B = random_matrix(4, 2, rng);
  Tape t;
  Var loss = sum(matmul(t.param(store, 0), t.constant(B)));
  auto g = t.backward(loss);
  const Matrix expected = Matrix::Ones(3, 2) * B.transpose();
  CHECK((g[0] - expected).cwiseAbs().maxCoeff() < 1e-12);

  auto build = [B](Tape& tape, const ParameterStore& s) { return sum(matmul(tape.param(s, 0), tape.constant(B))); };
  CHECK(max_gradient_error(build, store) < 1e-4);
}

TEST_CASE("elementwise values") {
  Tape t;
  CHECK(sigmoid(t.constant(Matrix::Zero(1, 1))).scalar() == doctest::Approx(0.5));
  Var s = elementwise(Elementwise::add, t.constant(mat({{1, 2}})), t.constant(mat({{3, 4}})));
  CHECK(s.value() == mat({{4, 6}}));
  CHECK(elementwise(Elementwise::relu, t.constant(mat({{-1, 2}}))).value() == mat({{0, 2}}));
  CHECK_THROWS_AS(elementwise(Elementwise::sigmoid, t.constant(mat({{1}})), t.constant(mat({{1}}))), ContractError);
}

TEST_CASE("sigmoid gradient at zero is one quarter") {
  ParameterStore store;
  store.add("x", Matrix::Zero(1, 1));
  Tape t;
  auto g = t.backward(sigmoid(t.param(store, 0)));
  CHECK(g[0](0, 0) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("sigmoid is stable for large inputs") {
  Tape t;
  Var s = sigmoid(t.constant(mat({{-800, 800}})));
  CHECK(s.value()(0, 0) == 0.0);
  CHECK(s.value()(0, 1) == 1.0);
}

TEST_CASE("log of non-positive input is a domain error") {
  Tape t;
  CHECK_THROWS_AS(log(t.constant(mat({{1, 0}}))), DomainError);
  CHECK_THROWS_AS(log(t.constant(mat({{-2}}))), DomainError);
}

TEST_CASE("exp overflow is a numerical error") {
  Tape t;
  CHECK_THROWS_AS(exp(t.constant(mat({{1000}}))), NumericalError);
}

TEST_CASE("flops per element follow the documented convention") {
  Tape t;
  Var x = t.constant(Matrix::Constant(2, 3, 0.5));
  const auto f0 = t.flop_count();
  add(x, x);
  CHECK(t.flop_count() - f0 == 6);
  const auto f1 = t.flop_count();
  sigmoid(x);
  CHECK(t.flop_count() - f1 == 24);
  const auto f2 = t.flop_count();
  tanh(x);
  exp(x);
  CHECK(t.flop_count() - f2 == 48);
  const auto f3 = t.flop_count();
  relu(x);
  CHECK(t.flop_count() - f3 == 24);
}

TEST_CASE("softmax rows") {
  Tape t;
  CHECK(softmax_rows(t.constant(mat({{0, 0}}))).value().isApprox(mat({{0.5, 0.5}})));
  Var big = softmax_rows(t.constant(mat({{1000, 1000}})));
  CHECK(big.value().allFinite());
  CHECK(big.value().isApprox(mat({{0.5, 0.5}})));
  Rng rng(3);
  Var s = softmax_rows(t.constant(random_matrix(4, 7, rng, 3.0)));
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(std::abs(s.value().row(i).sum() - 1.0) < 1e-12);
}

TEST_CASE("row reductions and gathers") {
  Tape t;
  Var a = t.constant(mat({{1, 3}, {3, 5}}));
  CHECK(row_mean(a).value() == mat({{2, 4}}));
  CHECK(row_max(a).value() == mat({{3, 5}}));
  Var g = gather_rows(t.constant(mat({{0, 0}, {1, 1}, {2, 2}})), std::vector<std::uint32_t>{2, 0});
  CHECK(g.value() == mat({{2, 2}, {0, 0}}));
  CHECK_THROWS_AS(gather_rows(a, std::vector<std::uint32_t>{5}), DimensionError);
  Var empty = gather_rows(a, std::vector<std::uint32_t>{});
  CHECK_THROWS_AS(row_mean(empty), DegenerateInputError);
  CHECK_THROWS_AS(row_max(empty), DegenerateInputError);
}

TEST_CASE("row_max routes the gradient to the first maximal row") {
  ParameterStore store;
  store.add("a", mat({{2, 1}, {2, 5}, {0, 5}}));
  Tape t;
  auto g = t.backward(sum(row_max(t.param(store, 0))));
  CHECK(g[0] == mat({{1, 0}, {0, 1}, {0, 0}}));
}

TEST_CASE("concat operations") {
  Tape t;
  Var a = t.constant(mat({{1}, {2}}));
  Var b = t.constant(mat({{3, 4}, {5, 6}}));
  CHECK(concat_cols(a, b).value() == mat({{1, 3, 4}, {2, 5, 6}}));
  std::vector<Var> rows{t.constant(mat({{1, 2}})), t.constant(mat({{3, 4}}))};
  CHECK(concat_rows(rows).value() == mat({{1, 2}, {3, 4}}));
  CHECK_THROWS_AS(concat_cols(a, t.constant(Matrix::Zero(3, 1))), DimensionError);
}

TEST_CASE("instance_norm") {
  Tape t;
  CHECK(instance_norm(t.constant(mat({{1, 1, 1, 1}}))).value() == Matrix::Zero(1, 4));
  const double expected = 1.0 / std::sqrt(1.0 + kInstanceNormEps);
  Var v = instance_norm(t.constant(mat({{0, 2}})));
  CHECK(v.value()(0, 0) == doctest::Approx(-expected).epsilon(1e-14));
  CHECK(v.value()(0, 1) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(0.999995).epsilon(1e-6));
  Rng rng(4);
  Var r = instance_norm(t.constant(random_matrix(1, 32, rng)));
  CHECK(std::abs(r.value().mean()) < 1e-10);
  CHECK_THROWS_AS(instance_norm(t.constant(mat({{3}}))), DegenerateInputError);
}

TEST_CASE("neighbor_mean") {
  Tape t;
  std::vector<Edge> pair{{0, 1}};
  Var swapped = neighbor_mean(t.constant(mat({{2}, {4}})), Adjacency::from_edges(2, pair));
  CHECK(swapped.value() == mat({{4}, {2}}));

  std::vector<Edge> none;
  Var isolated = neighbor_mean(t.constant(mat({{7, 8}})), Adjacency::from_edges(1, none));
  CHECK(isolated.value() == Matrix::Zero(1, 2));

  const auto before = t.flop_count();
  Var path = neighbor_mean(t.constant(mat({{1}, {2}, {3}})), path3());
  CHECK(path.value() == mat({{2}, {2}, {2}}));
  CHECK(t.flop_count() - before == 2 * 2 * 1);
}

TEST_CASE("backward contract") {
  ParameterStore store;
  store.add("W", mat({{1, 2}, {3, 4}}));
  store.add("unused", Matrix::Ones(2, 2));
  const Matrix x = mat({{5}, {6}});
  Tape t;
  Var loss = sum(matmul(t.param(store, 0), t.constant(x)));
  auto g = t.backward(loss);
  CHECK(g[0] == mat({{5, 6}, {5, 6}}));
  CHECK(g[1] == Matrix::Zero(2, 2));
  CHECK(t.consumed());
  CHECK_THROWS_AS(t.backward(loss), ContractError);

  Tape t2;
  Var not_scalar = matmul(t2.param(store, 0), t2.constant(x));
  CHECK_THROWS_AS(t2.backward(not_scalar), ContractError);
}

TEST_CASE("parameters shared between roles accumulate gradient") {
  ParameterStore store;
  store.add("w", mat({{3}}));
  Tape t;
  Var w1 = t.param(store, 0);
  Var w2 = t.param(store, 0);
  CHECK(w1.id() == w2.id());
  auto g = t.backward(mul(w1, w2));
  CHECK(g[0](0, 0) == doctest::Approx(6.0));
}

TEST_CASE("every differentiable op matches central differences") {
  auto catalog = testing::make_op_catalog();
  for (const auto& [name, build] : catalog.cases) {
    CAPTURE(name);
    CHECK(max_gradient_error(build, catalog.store) < 1e-4);
  }
}

TEST_CASE("identical inputs give bit-identical values and flop counts") {
  auto run = [] {
    Rng rng(5);
    Tape t;
    Var x = t.constant(random_matrix(5, 4, rng));
    Var y = softmax_rows(matmul(tanh(x), t.constant(random_matrix(4, 3, rng))));
    return std::make_pair(Matrix(y.value()), t.flop_count());
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("adam with zero gradient and no decay leaves parameters unchanged") {
  ParameterStore store;
  store.add("w", mat({{1.5, -2.0}}));
  const Matrix before = store.value(0);
  AdamState state;
  adam_step(store, zero_gradients(store), 0.1, 0.0, state);
  CHECK(store.value(0) == before);
}

TEST_CASE("adam descends a quadratic") {
  ParameterStore store;
  store.add("w", mat({{1.0}}));
  AdamState state;
  Tape t;
  auto g = t.backward(mul(t.param(store, 0), t.param(store, 0)));
  adam_step(store, g, 0.1, 0.0, state);
  CHECK(store.value(0)(0, 0) < 1.0);
}

TEST_CASE("adam converges on a two-dimensional quadratic") {
  // f(w) = (w0 - 3)^2 + 10 (w1 + 1)^2, minimum at (3, -1).
  ParameterStore store;
  store.add("w", mat({{0.0, 0.0}}));
  AdamState state;
  int steps = 0;
  for (; steps < 500; ++steps) {
    const Matrix& w = store.value(0);
    if (std::abs(w(0, 0) - 3.0) < 1e-3 && std::abs(w(0, 1) + 1.0) < 1e-3) break;
    Tape t;
    Var p = t.param(store, 0);
    Var shift = t.constant(mat({{-3.0, 1.0}}));
    Var d = add(p, shift);
    Var weighted = mul(mul(d, d), t.constant(mat({{1.0, 10.0}})));
    auto g = t.backward(sum(weighted));
    const double lr = 0.1 * std::pow(0.99, steps);
    adam_step(store, g, lr, 0.0, state);
  }
  CHECK(steps < 500);
}

TEST_CASE("decoupled weight decay is applied before the moment update") {
  ParameterStore store;
  store.add("w", mat({{2.0}}));
  AdamState state;
  adam_step(store, zero_gradients(store), 0.1, 0.5, state);
  CHECK(store.value(0)(0, 0) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-15));
}
