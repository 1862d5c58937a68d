#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellsurv/errors.hpp"
#include "cellsurv/model.hpp"
#include "cellsurv/survival.hpp"
#include "model_fixtures.hpp"
#include "support.hpp"

using namespace cellsurv;
using testing::make_graph;
using testing::make_patient;
using testing::max_gradient_error;
using testing::probe;
using testing::random_cells;
using testing::random_matrix;
using testing::small_config;

namespace {

double risk_of(const PatientRecord& p, const ModelParams& params) { return embed_patient(p, params).risk; }

// Same cells, relabeled by `perm`.
std::vector<CellRecord> permuted(const std::vector<CellRecord>& cells, const std::vector<std::size_t>& perm) {
  std::vector<CellRecord> out;
  for (auto i : perm) out.push_back(cells[i]);
  return out;
}

}  // namespace

TEST_CASE("coupled layer with selector weights and identity shared factor passes features through") {
  auto cfg = small_config(1, 4);
  cfg.hidden_dim = 4;
  auto params = init_model(cfg, 1);
  Matrix selector = Matrix::Zero(8, 4);
  selector.topRows(4) = Matrix::Identity(4, 4);
  params.store.value(params.branches[0].layer[0]) = selector;
  params.store.value(*params.shared_first_layer) = Matrix::Identity(4, 4);

  Rng rng(2);
  const Matrix h = random_matrix(5, 4, rng);
  std::vector<Edge> edges{{0, 1}, {1, 2}, {3, 4}};
  Tape t;
  Var out = coupled_graphsage_layer(t, t.constant(h), Adjacency::from_edges(5, edges), 0, 0, params);
  CHECK(out.value() == h.cwiseMax(0.0));
}

TEST_CASE("isolated node sees a zero neighbor half") {
  auto params = init_model(small_config(1, 5), 3);
  Rng rng(4);
  const Matrix h = random_matrix(1, 5, rng);
  std::vector<Edge> none;
  Tape t;
  Var out = coupled_graphsage_layer(t, t.constant(h), Adjacency::from_edges(1, none), 0, 0, params);
  Matrix x(1, 10);
  x << h, Matrix::Zero(1, 5);
  const Matrix expected =
      (x * params.store.value(params.branches[0].layer[0]) * params.store.value(*params.shared_first_layer)).cwiseMax(0.0);
  CHECK((out.value() - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("the shared factor applies to the first layer only") {
  auto params = init_model(small_config(1, 5), 5);
  Rng rng(6);
  const Matrix h = random_matrix(3, 6, rng);
  std::vector<Edge> edges{{0, 1}, {1, 2}};
  const auto adj = Adjacency::from_edges(3, edges);
  Tape t;
  Var out = coupled_graphsage_layer(t, t.constant(h), adj, 1, 0, params);
  Matrix x(3, 12);
  Matrix nm(3, 6);
  nm << h.row(1), (h.row(0) + h.row(2)) / 2.0, h.row(1);
  x << h, nm;
  const Matrix expected = (x * params.store.value(params.branches[0].layer[1])).cwiseMax(0.0);
  CHECK((out.value() - expected).cwiseAbs().maxCoeff() < 1e-13);
}

namespace {

// Store whose scorer returns tanh(h) for a one-column h on an edgeless graph.
struct ScorerFixture {
  ParameterStore store;
  std::size_t w = 0, b = 0;
  ScorerFixture() {
    Matrix wv(2, 1);
    wv << 1.0, 0.0;
    w = store.add("w", wv);
    b = store.add("b", Matrix::Zero(1, 1));
  }
};

}  // namespace

TEST_CASE("sagpool keeps the top scores, ties to the lower index") {
  ScorerFixture f;
  Matrix h(4, 1);
  h << std::atanh(0.9), std::atanh(0.1), std::atanh(0.8), std::atanh(0.2);
  std::vector<Edge> none;
  Tape t;
  auto pooled = sagpool(t, t.constant(h), Adjacency::from_edges(4, none), f.store, f.w, f.b, 0.5);
  CHECK(pooled.kept == std::vector<std::uint32_t>{0, 2});
  CHECK(pooled.features.value()(0, 0) == doctest::Approx(h(0, 0) * 0.9));
  CHECK(pooled.features.value()(1, 0) == doctest::Approx(h(2, 0) * 0.8));

  Matrix tied = Matrix::Constant(4, 1, 0.3);
  Tape t2;
  auto p2 = sagpool(t2, t2.constant(tied), Adjacency::from_edges(4, none), f.store, f.w, f.b, 0.5);
  CHECK(p2.kept == std::vector<std::uint32_t>{0, 1});
}

TEST_CASE("sagpool with ratio one keeps everything, gated by the scores") {
  ScorerFixture f;
  Rng rng(7);
  const Matrix h = random_matrix(5, 1, rng);
  std::vector<Edge> edges{{0, 1}, {2, 3}};
  Tape t;
  auto pooled = sagpool(t, t.constant(h), Adjacency::from_edges(5, edges), f.store, f.w, f.b, 1.0);
  CHECK(pooled.kept.size() == 5);
  CHECK(pooled.adjacency.neighbors == Adjacency::from_edges(5, edges).neighbors);
  Matrix x(5, 2);
  x << h, neighbor_mean(t.constant(h), Adjacency::from_edges(5, edges)).value();
  const Matrix s = x.col(0).array().tanh().matrix();
  CHECK((pooled.features.value() - h.cwiseProduct(s)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("sagpool on a single node keeps it") {
  ScorerFixture f;
  std::vector<Edge> none;
  Tape t;
  Matrix h(1, 1);
  h << -5.0;
  auto pooled = sagpool(t, t.constant(h), Adjacency::from_edges(1, none), f.store, f.w, f.b, 0.1);
  CHECK(pooled.kept == std::vector<std::uint32_t>{0});
  CHECK(pooled_size(1, 0.01) == 1);
  CHECK(pooled_size(7, 0.5) == 4);
  CHECK(pooled_size(4, 0.5) == 2);
}

TEST_CASE("sagpool restricts the adjacency to kept nodes") {
  ScorerFixture f;
  Matrix h(4, 1);
  h << 3.0, -3.0, 2.0, 1.0;
  std::vector<Edge> edges{{0, 1}, {1, 2}, {0, 2}, {2, 3}};
  Tape t;
  auto pooled = sagpool(t, t.constant(h), Adjacency::from_edges(4, edges), f.store, f.w, f.b, 0.75);
  REQUIRE(pooled.kept == std::vector<std::uint32_t>{0, 2, 3});
  std::vector<Edge> induced{{0, 1}, {1, 2}};
  CHECK(pooled.adjacency.neighbors == Adjacency::from_edges(3, induced).neighbors);
}

TEST_CASE("branch output has the configured width and handles a one-cell graph") {
  ModelConfig cfg;
  cfg.d_node = 5;
  const auto params = init_model(cfg, 8);
  Rng rng(9);
  const auto g = make_graph(random_cells(40, rng, 2), "a");
  Tape t;
  Var out = branch_forward(t, g, 0, params);
  CHECK(out.rows() == 1);
  CHECK(out.cols() == 32);

  const auto single = make_graph(random_cells(1, rng, 2), "b");
  Tape t2;
  Var one = branch_forward(t2, single, 0, params);
  CHECK(one.value().allFinite());
}

TEST_CASE("branch output is invariant to node relabeling") {
  const auto params = init_model(small_config(1, 5), 10);
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cells = random_cells(static_cast<std::size_t>(rng.uniform_int(2, 80)), rng, 2);
    std::vector<std::size_t> perm(cells.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    const auto a = make_graph(cells, "a", 500.0);
    const auto b = make_graph(permuted(cells, perm), "a", 500.0);
    Tape t1, t2;
    const Matrix ra = branch_forward(t1, a, 0, params).value();
    const Matrix rb = branch_forward(t2, b, 0, params).value();
    CHECK((ra - rb).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("instance attention") {
  Rng rng(12);
  Tape t;
  Var w = t.constant(random_matrix(4, 1, rng));
  Var r1 = t.constant(random_matrix(1, 4, rng));
  Var r2 = t.constant(random_matrix(1, 4, rng));
  Var r3 = t.constant(random_matrix(1, 4, rng));

  std::vector<Var> single{r1};
  const double gate = 1.0 / (1.0 + std::exp(-(r1.value() * w.value())(0, 0)));
  const Matrix expected_single = instance_norm(t.constant(gate * r1.value())).value();
  const Matrix got_single = instance_attention(t, single, w).value();
  CHECK((got_single - expected_single).cwiseAbs().maxCoeff() < 1e-14);

  std::vector<Var> fwd{r1, r2, r3}, rev{r3, r1, r2};
  const Matrix a = instance_attention(t, fwd, w).value();
  const Matrix b = instance_attention(t, rev, w).value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-14);

  Var zero = t.constant(Matrix::Zero(4, 1));
  std::vector<Var> two{r1, r2};
  const Matrix half = instance_norm(t.constant(0.5 * (r1.value() + r2.value()))).value();
  const Matrix gated = instance_attention(t, two, zero).value();
  CHECK((gated - half).cwiseAbs().maxCoeff() < 1e-14);

  std::vector<Var> none;
  CHECK_THROWS_AS(instance_attention(t, none, w), DegenerateInputError);
}

TEST_CASE("single-modality attention puts all weight on the only token") {
  const auto params = init_model(small_config(1, 5), 13);
  Rng rng(14);
  const Matrix R = random_matrix(1, 4, rng);
  Tape t;
  auto out = cross_modal_transformer(t, t.constant(R), params);
  for (const auto& a : out.attention) CHECK(a(0, 0) == 1.0);

  // Head outputs are the value rows, so the block output is R + MLP([R Wv_h]_h).
  const auto& s = params.store;
  const auto& cm = params.cross_modal;
  Matrix heads(1, 4);
  heads << R * s.value(cm.value[0]), R * s.value(cm.value[1]);
  const Matrix hidden = (heads * s.value(cm.mlp_hidden.weight) + s.value(*cm.mlp_hidden.bias)).cwiseMax(0.0);
  const Matrix expected = R + hidden * s.value(cm.mlp_out.weight) + s.value(*cm.mlp_out.bias);
  CHECK((out.embedding.value() - expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(out.risk.scalar() == doctest::Approx((expected * s.value(params.risk_head))(0, 0)));
}

TEST_CASE("attention rows sum to one and modality order does not change the embedding") {
  const auto params = init_model(small_config(3, 5), 15);
  Rng rng(16);
  const Matrix R = random_matrix(3, 4, rng);
  Tape t;
  auto out = cross_modal_transformer(t, t.constant(R), params);
  for (const auto& a : out.attention) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-12);
  }
  Matrix P(3, 4);
  P << R.row(2), R.row(0), R.row(1);
  const Matrix base = out.embedding.value();
  const Matrix moved = cross_modal_transformer(t, t.constant(P), params).embedding.value();
  CHECK((base - moved).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(cross_modal_transformer(t, t.constant(R.topRows(2)), params), ContractError);
}

TEST_CASE("patient forward smoke") {
  const auto params = init_model(small_config(2, 5), 17);
  Rng rng(18);
  const auto p = make_patient("p", 2, 1, 30, rng);
  const auto e = embed_patient(p, params);
  CHECK(std::isfinite(e.risk));
  CHECK(e.flops > 0);
  CHECK(e.embedding.cols() == 4);
}

TEST_CASE("duplicating an instance changes the modality representation") {
  auto cfg = small_config(1, 5);
  cfg.instance_norm = false;
  const auto params = init_model(cfg, 19);
  Rng rng(20);
  auto p = make_patient("p", 1, 1, 25, rng);
  Tape t1;
  const Matrix once = patient_forward(t1, p, params).modality_reps[0].value();
  auto copy = p.graphs[0][0];
  copy.image_id += "_copy";
  p.graphs[0].push_back(copy);
  Tape t2;
  const Matrix twice = patient_forward(t2, p, params).modality_reps[0].value();
  CHECK((twice - 2.0 * once).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("patient risk is invariant to node and instance permutations") {
  const auto params = init_model(small_config(2, 5), 21);
  Rng rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = make_patient("p", 2, 3, 40, rng);
    const double base = risk_of(p, params);

    auto shuffled = p;
    for (auto& m : shuffled.graphs) rng.shuffle(m.begin(), m.end());
    CHECK(risk_of(shuffled, params) == base);

    auto relabeled = p;
    for (auto& m : relabeled.graphs) {
      for (auto& g : m) g = testing::permute_nodes(g, rng);
    }
    CHECK(std::abs(risk_of(relabeled, params) - base) <= 1e-10);
  }
}

TEST_CASE("activations stay finite for large features") {
  const auto params = init_model(small_config(2, 5), 23);
  Rng rng(24);
  const auto p = make_patient("p", 2, 2, 30, rng, 2, 1e3);
  CHECK(std::isfinite(embed_patient(p, params).risk));

  ModelConfig full;
  full.n_modalities = 2;
  full.d_node = 5;
  const auto big = init_model(full, 25);
  CHECK(std::isfinite(embed_patient(p, big).risk));
}

TEST_CASE("end-to-end risk gradient matches finite differences on a toy patient") {
  auto params = init_model(small_config(2, 5), 26);
  Rng rng(27);
  const auto p = make_patient("toy", 2, 1, 3, rng);
  auto build = [&p, &params](Tape& t, const ParameterStore&) { return patient_forward(t, p, params).risk; };
  CHECK(max_gradient_error(build, params.store) < 1e-3);
}

TEST_CASE("patient forward into the Cox loss matches finite differences") {
  auto params = init_model(small_config(2, 5), 28);
  Rng rng(29);
  std::vector<PatientRecord> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(make_patient("p" + std::to_string(i), 2, 1, 3, rng));
  batch[0].event = Event::observed;
  std::vector<double> times;
  std::vector<Event> events;
  for (const auto& p : batch) {
    times.push_back(p.survival_time);
    events.push_back(p.event);
  }
  auto build = [&](Tape& t, const ParameterStore&) {
    std::vector<Var> risks;
    for (const auto& p : batch) risks.push_back(patient_forward(t, p, params).risk);
    return cox_batch_loss(concat_rows(risks), times, events);
  };
  CHECK(max_gradient_error(build, params.store) < 1e-3);
}

TEST_CASE("a loss on one modality still reaches the shared weights") {
  auto params = init_model(small_config(2, 5), 30);
  Rng rng(31);
  const auto p = make_patient("p", 2, 2, 20, rng);
  Tape t;
  auto fwd = patient_forward(t, p, params);
  auto g = t.backward(probe(fwd.modality_reps[0]));
  CHECK(g[*params.shared_first_layer].cwiseAbs().maxCoeff() > 0.0);
  CHECK(g[params.instance_attention[0]].cwiseAbs().maxCoeff() > 0.0);
  CHECK(g[params.branches[0].layer[1]].cwiseAbs().maxCoeff() > 0.0);
  CHECK(g[params.branches[1].layer[1]].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shared weight gradient sums the contributions of every branch") {
  auto params = init_model(small_config(2, 5), 32);
  Rng rng(33);
  const auto p = make_patient("p", 2, 1, 4, rng);
  auto grad_for = [&](int which) {
    Tape t;
    auto fwd = patient_forward(t, p, params);
    Var loss = which < 0 ? add(probe(fwd.modality_reps[0], 1), probe(fwd.modality_reps[1], 2))
                         : probe(fwd.modality_reps[static_cast<std::size_t>(which)], static_cast<std::uint64_t>(which + 1));
    return t.backward(loss)[*params.shared_first_layer];
  };
  const Matrix both = grad_for(-1);
  CHECK((both - grad_for(0) - grad_for(1)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(grad_for(1).cwiseAbs().maxCoeff() > 0.0);
  auto build = [&](Tape& t, const ParameterStore&) {
    auto fwd = patient_forward(t, p, params);
    return add(probe(fwd.modality_reps[0], 1), probe(fwd.modality_reps[1], 2));
  };
  CHECK(max_gradient_error(build, params.store) < 1e-3);
}

TEST_CASE("sharing switches produce the expected parameter layout") {
  auto cfg = small_config(3, 5);
  const auto coupled = init_model(cfg, 1);
  CHECK(coupled.shared_first_layer.has_value());
  CHECK(coupled.branches[0].layer[0] != coupled.branches[1].layer[0]);
  CHECK(coupled.instance_attention[0] == coupled.instance_attention[2]);

  cfg.sharing = WeightSharing::none;
  const auto none = init_model(cfg, 1);
  CHECK_FALSE(none.shared_first_layer.has_value());
  CHECK_FALSE(none.store.find("shared.W_s").has_value());

  cfg.sharing = WeightSharing::full;
  const auto full = init_model(cfg, 1);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto L = static_cast<std::size_t>(l);
    CHECK(full.branches[0].layer[L] == full.branches[1].layer[L]);
    CHECK(full.branches[1].layer[L] == full.branches[2].layer[L]);
  }
  CHECK(full.store.size() < coupled.store.size());

  cfg.sharing = WeightSharing::coupled;
  cfg.shared_attention = false;
  const auto separate = init_model(cfg, 1);
  CHECK(separate.instance_attention[0] != separate.instance_attention[1]);

  cfg.aggregator = InstanceAggregator::transformer;
  const auto tf = init_model(cfg, 1);
  CHECK(tf.instance_attention.empty());
  CHECK(tf.instance_transformer.has_value());
}

TEST_CASE("instance normalization switch") {
  auto cfg = small_config(1, 5);
  Rng rng(34);
  const auto p = make_patient("p", 1, 2, 20, rng);
  const auto on = init_model(cfg, 35);
  Tape t1;
  const Matrix normed = patient_forward(t1, p, on).modality_reps[0].value();
  CHECK(std::abs(normed.mean()) < 1e-12);

  cfg.instance_norm = false;
  const auto off = init_model(cfg, 35);
  Tape t2;
  const Matrix raw = patient_forward(t2, p, off).modality_reps[0].value();
  CHECK(std::abs(raw.mean()) > 1e-6);
}

TEST_CASE("transformer aggregator forward and gradient") {
  auto cfg = small_config(2, 5);
  cfg.aggregator = InstanceAggregator::transformer;
  auto params = init_model(cfg, 36);
  Rng rng(37);
  const auto p = make_patient("p", 2, 2, 3, rng);
  CHECK(std::isfinite(embed_patient(p, params).risk));
  auto build = [&](Tape& t, const ParameterStore&) { return patient_forward(t, p, params).risk; };
  CHECK(max_gradient_error(build, params.store) < 1e-3);
}

TEST_CASE("mlp_dim must be divisible by the head count") {
  auto cfg = small_config(1, 5);
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("initialization is deterministic in the seed") {
  const auto a = init_model(small_config(2, 5), 40);
  const auto b = init_model(small_config(2, 5), 40);
  const auto c = init_model(small_config(2, 5), 41);
  CHECK(a.store.value(0) == b.store.value(0));
  CHECK(a.store.value(0) != c.store.value(0));
}
