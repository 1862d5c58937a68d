#include "cellsurv/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellsurv/errors.hpp"
#include "cellsurv/rng.hpp"

namespace cellsurv {

std::string to_string(WeightSharing s) {
  switch (s) {
    case WeightSharing::coupled: return "coupled";
    case WeightSharing::none: return "none";
    case WeightSharing::full: return "full";
  }
  return "coupled";
}

std::string to_string(InstanceAggregator a) {
  return a == InstanceAggregator::gated_sum ? "gated_sum" : "transformer";
}

WeightSharing parse_weight_sharing(const std::string& name) {
  if (name == "coupled") return WeightSharing::coupled;
  if (name == "none") return WeightSharing::none;
  if (name == "full") return WeightSharing::full;
  throw ConfigError("unknown weight sharing mode '" + name + "'");
}

InstanceAggregator parse_instance_aggregator(const std::string& name) {
  if (name == "gated_sum") return InstanceAggregator::gated_sum;
  if (name == "transformer") return InstanceAggregator::transformer;
  throw ConfigError("unknown instance aggregator '" + name + "'");
}

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("model: n_layers must be >= 1");
  if (hidden_dim < 1 || mlp_dim < 2) throw ConfigError("model: hidden_dim >= 1 and mlp_dim >= 2 required");
  if (!(pool_ratio > 0.0 && pool_ratio <= 1.0)) throw ConfigError("model: pool_ratio must lie in (0, 1]");
  if (n_heads < 1 || mlp_dim % n_heads != 0) throw ConfigError("model: mlp_dim must be divisible by n_heads");
  if (n_modalities < 1) throw ConfigError("model: at least one modality required");
  if (d_node < 1) throw ConfigError("model: d_node must be positive");
}

namespace {

Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
  }
  return m;
}

LinearSlots add_linear(ParameterStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                       Rng& rng) {
  LinearSlots s;
  s.weight = store.add(prefix + ".W", glorot(in, out, rng));
  s.bias = store.add(prefix + ".b", Matrix::Zero(1, out));
  return s;
}

BranchSlots add_branch(ParameterStore& store, const ModelConfig& cfg, const std::string& prefix, Rng& rng) {
  BranchSlots b;
  Eigen::Index d = cfg.d_node;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto tag = prefix + ".layer" + std::to_string(l);
    b.layer.push_back(store.add(tag + ".W", glorot(2 * d, cfg.hidden_dim, rng)));
    d = cfg.hidden_dim;
    b.pool_weight.push_back(store.add(tag + ".pool.w", glorot(2 * d, 1, rng)));
    b.pool_bias.push_back(store.add(tag + ".pool.b", Matrix::Zero(1, 1)));
  }
  b.mlp_hidden = add_linear(store, prefix + ".mlp1", 2 * cfg.hidden_dim, cfg.hidden_dim, rng);
  b.mlp_out = add_linear(store, prefix + ".mlp2", cfg.hidden_dim, cfg.mlp_dim, rng);
  return b;
}

AttentionBlockSlots add_attention_block(ParameterStore& store, const ModelConfig& cfg, const std::string& prefix,
                                        Rng& rng) {
  AttentionBlockSlots a;
  const Eigen::Index d = cfg.mlp_dim;
  const Eigen::Index dh = cfg.head_dim();
  for (int h = 0; h < cfg.n_heads; ++h) {
    const auto tag = prefix + ".head" + std::to_string(h);
    a.query.push_back(store.add(tag + ".Wq", glorot(d, dh, rng)));
    a.key.push_back(store.add(tag + ".Wk", glorot(d, dh, rng)));
    a.value.push_back(store.add(tag + ".Wv", glorot(d, dh, rng)));
  }
  a.mlp_hidden = add_linear(store, prefix + ".mlp1", d, d, rng);
  a.mlp_out = add_linear(store, prefix + ".mlp2", d, d, rng);
  return a;
}

}  // namespace

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(derive_seed(seed, "model-init"));
  auto& store = p.store;

  if (config.sharing != WeightSharing::none) {
    p.shared_first_layer = store.add("shared.W_s", glorot(config.hidden_dim, config.hidden_dim, rng));
  }
  if (config.sharing == WeightSharing::full) {
    const auto encoder = add_branch(store, config, "encoder", rng);
    p.branches.assign(static_cast<std::size_t>(config.n_modalities), encoder);
  } else {
    for (int m = 0; m < config.n_modalities; ++m) {
      p.branches.push_back(add_branch(store, config, "branch" + std::to_string(m), rng));
    }
  }

  if (config.aggregator == InstanceAggregator::gated_sum) {
    if (config.shared_attention) {
      const auto slot = store.add("instance_attention.w", glorot(config.mlp_dim, 1, rng));
      p.instance_attention.assign(static_cast<std::size_t>(config.n_modalities), slot);
    } else {
      for (int m = 0; m < config.n_modalities; ++m) {
        p.instance_attention.push_back(
            store.add("instance_attention" + std::to_string(m) + ".w", glorot(config.mlp_dim, 1, rng)));
      }
    }
  } else {
    p.instance_transformer = add_attention_block(store, config, "instance_transformer", rng);
  }

  p.cross_modal = add_attention_block(store, config, "cross_modal", rng);
  p.risk_head = store.add("risk_head.w", glorot(config.mlp_dim, 1, rng));
  return p;
}

Var linear(Tape& tape, const ParameterStore& store, Var x, const LinearSlots& slots) {
  Var y = matmul(x, tape.param(store, slots.weight));
  if (slots.bias) y = add_row(y, tape.param(store, *slots.bias));
  return y;
}

Var coupled_graphsage_layer(Tape& tape, Var h, const Adjacency& adjacency, int layer, int modality,
                            const ModelParams& params) {
  const auto& branch = params.branches.at(static_cast<std::size_t>(modality));
  const auto& store = params.store;
  Var x = concat_cols(h, neighbor_mean(h, adjacency));
  Var y = matmul(x, tape.param(store, branch.layer.at(static_cast<std::size_t>(layer))));
  if (layer == 0 && params.shared_first_layer) y = matmul(y, tape.param(store, *params.shared_first_layer));
  return relu(y);
}

std::size_t pooled_size(std::size_t c, double ratio) {
  const auto k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(c) - 1e-9));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(c, 1));
}

PoolResult sagpool(Tape& tape, Var h, const Adjacency& adjacency, const ParameterStore& store,
                   std::size_t score_weight, std::size_t score_bias, double ratio) {
  const auto c = static_cast<std::size_t>(h.rows());
  if (c == 0) throw DegenerateInputError("sagpool: graph has no nodes");
  Var x = concat_cols(h, neighbor_mean(h, adjacency));
  Var scores = tanh(add_row(matmul(x, tape.param(store, score_weight)), tape.param(store, score_bias)));

  const auto k = pooled_size(c, ratio);
  std::vector<std::uint32_t> order(c);
  std::iota(order.begin(), order.end(), 0u);
  const auto& s = scores.value();
  std::stable_sort(order.begin(), order.end(), [&s](std::uint32_t a, std::uint32_t b) { return s(a, 0) > s(b, 0); });
  order.resize(k);
  std::sort(order.begin(), order.end());

  PoolResult out;
  out.scores = scores;
  out.features = mul_col(gather_rows(h, order), gather_rows(scores, order));
  out.adjacency = k == c ? adjacency : adjacency.induced(order);
  out.kept = std::move(order);
  return out;
}

Var branch_forward(Tape& tape, const CellularGraph& graph, int modality, const ModelParams& params) {
  if (graph.num_nodes() == 0) throw DegenerateInputError("branch_forward: graph " + graph.image_id + " is empty");
  const auto& cfg = params.config;
  if (graph.node_features.cols() != cfg.d_node) {
    throw DimensionError("branch_forward: graph " + graph.image_id + " has node width " +
                         std::to_string(graph.node_features.cols()) + ", model expects " +
                         std::to_string(cfg.d_node));
  }
  const auto& branch = params.branches.at(static_cast<std::size_t>(modality));
  const auto& store = params.store;

  Var h = tape.constant(graph.node_features);
  Adjacency adjacency = graph.adjacency;
  Var readout;
  for (int l = 0; l < cfg.n_layers; ++l) {
    h = coupled_graphsage_layer(tape, h, adjacency, l, modality, params);
    auto pooled = sagpool(tape, h, adjacency, store, branch.pool_weight[static_cast<std::size_t>(l)],
                          branch.pool_bias[static_cast<std::size_t>(l)], cfg.pool_ratio);
    h = pooled.features;
    adjacency = std::move(pooled.adjacency);
    Var r = concat_cols(row_mean(h), row_max(h));
    readout = readout.valid() ? add(readout, r) : r;
  }
  Var hidden = relu(linear(tape, store, readout, branch.mlp_hidden));
  return linear(tape, store, hidden, branch.mlp_out);
}

Var instance_attention(Tape& tape, std::span<const Var> reps, Var gate_weight, bool normalize) {
  if (reps.empty()) throw DegenerateInputError("instance_attention: no instances");
  (void)tape;
  Var total;
  for (const auto& r : reps) {
    Var gated = mul_col(r, sigmoid(matmul(r, gate_weight)));
    total = total.valid() ? add(total, gated) : gated;
  }
  return normalize ? instance_norm(total) : total;
}

AttentionBlockOutput attention_block(Tape& tape, Var x, const ParameterStore& store,
                                     const AttentionBlockSlots& slots, int n_heads) {
  AttentionBlockOutput out;
  std::vector<Var> heads;
  for (int h = 0; h < n_heads; ++h) {
    const auto i = static_cast<std::size_t>(h);
    Var q = matmul(x, tape.param(store, slots.query.at(i)));
    Var k = matmul(x, tape.param(store, slots.key.at(i)));
    Var v = matmul(x, tape.param(store, slots.value.at(i)));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Var weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
    out.attention.push_back(weights.value());
    heads.push_back(matmul(weights, v));
  }
  Var merged = concat_cols(heads);
  Var mlp = linear(tape, store, relu(linear(tape, store, merged, slots.mlp_hidden)), slots.mlp_out);
  out.output = add(x, mlp);
  return out;
}

TransformerOutput cross_modal_transformer(Tape& tape, Var modality_reps, const ModelParams& params) {
  const auto& cfg = params.config;
  if (modality_reps.rows() != cfg.n_modalities) {
    throw ContractError("cross_modal_transformer: expected " + std::to_string(cfg.n_modalities) +
                        " modality rows, got " + std::to_string(modality_reps.rows()));
  }
  auto block = attention_block(tape, modality_reps, params.store, params.cross_modal, cfg.n_heads);
  TransformerOutput out;
  out.embedding = row_mean(block.output);
  out.risk = matmul(out.embedding, tape.param(params.store, params.risk_head));
  out.attention = std::move(block.attention);
  return out;
}

PatientForward patient_forward(Tape& tape, const PatientRecord& patient, const ModelParams& params,
                               const MaskSource* masks) {
  const auto& cfg = params.config;
  if (patient.graphs.size() != static_cast<std::size_t>(cfg.n_modalities)) {
    throw ContractError("patient " + patient.patient_id + " has " + std::to_string(patient.graphs.size()) +
                        " modalities, model expects " + std::to_string(cfg.n_modalities));
  }
  const bool sparsify = masks != nullptr && masks->config.ratio > 0.0;
  PatientForward out;
  for (int m = 0; m < cfg.n_modalities; ++m) {
    const auto& instances = patient.graphs[static_cast<std::size_t>(m)];
    if (instances.empty()) {
      throw DegenerateInputError("patient " + patient.patient_id + " has no instance for modality " +
                                 std::to_string(m));
    }
    // Image-id order makes the gated sum independent of list order, bit for bit.
    std::vector<const CellularGraph*> ordered;
    for (const auto& g : instances) ordered.push_back(&g);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const CellularGraph* a, const CellularGraph* b) { return a->image_id < b->image_id; });
    std::vector<Var> reps;
    reps.reserve(instances.size());
    for (const auto* g : ordered) {
      const auto& graph = *g;
      if (sparsify) {
        reps.push_back(branch_forward(tape, masks->sparsify(graph), m, params));
      } else {
        reps.push_back(branch_forward(tape, graph, m, params));
      }
    }
    Var rep;
    if (cfg.aggregator == InstanceAggregator::gated_sum) {
      Var gate = tape.param(params.store, params.instance_attention.at(static_cast<std::size_t>(m)));
      rep = instance_attention(tape, reps, gate, cfg.instance_norm);
    } else {
      auto block = attention_block(tape, concat_rows(reps), params.store, *params.instance_transformer, cfg.n_heads);
      rep = row_mean(block.output);
      if (cfg.instance_norm) rep = instance_norm(rep);
    }
    out.modality_reps.push_back(rep);
  }
  auto fused = cross_modal_transformer(tape, concat_rows(out.modality_reps), params);
  out.embedding = fused.embedding;
  out.risk = fused.risk;
  return out;
}

PatientEmbedding embed_patient(const PatientRecord& patient, const ModelParams& params, const MaskSource* masks) {
  Tape tape;
  auto fwd = patient_forward(tape, patient, params, masks);
  PatientEmbedding out;
  out.embedding = fwd.embedding.value();
  out.risk = fwd.risk.scalar();
  out.flops = tape.flop_count();
  if (!out.embedding.allFinite() || !std::isfinite(out.risk)) {
    throw NumericalError("non-finite embedding for patient " + patient.patient_id);
  }
  return out;
}

}  // namespace cellsurv
