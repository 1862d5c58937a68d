#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "cellsurv/rng.hpp"
#include "cellsurv/tensor.hpp"

namespace testing {

using cellsurv::Matrix;
using cellsurv::ParameterStore;
using cellsurv::Tape;
using cellsurv::Var;

using LossBuilder = std::function<Var(Tape&, const ParameterStore&)>;

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, cellsurv::Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline double eval_loss(const LossBuilder& build, const ParameterStore& store) {
  Tape tape;
  return build(tape, store).scalar();
}

// Largest entrywise relative error between tape gradients and central
// differences over every parameter. Entries smaller than `floor` are compared
// on an absolute scale.
inline double max_gradient_error(const LossBuilder& build, ParameterStore& store, double h = 1e-6,
                                 double floor = 1e-5) {
  Tape tape;
  auto grads = tape.backward(build(tape, store));
  double worst = 0.0;
  for (std::size_t s = 0; s < store.size(); ++s) {
    auto& value = store.value(s);
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + h;
      const double up = eval_loss(build, store);
      value.data()[i] = saved - h;
      const double down = eval_loss(build, store);
      value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[s].data()[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

// Scalar probe of a matrix-valued result: sum(out .* W) with fixed random W.
inline Var probe(Var out, std::uint64_t seed = 99) {
  cellsurv::Rng rng(seed);
  Var w = out.tape()->constant(random_matrix(out.rows(), out.cols(), rng));
  return cellsurv::sum(cellsurv::mul(out, w));
}

}  // namespace testing
