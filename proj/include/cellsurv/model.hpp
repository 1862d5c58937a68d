#pragma once

// Multi-branch cellular-graph encoder with shared-context coupling.
//
// Per modality: three coupled GraphSAGE layers, each followed by top-k
// attention pooling; mean||max readouts after every pooling step are summed
// and fed to a 2-layer MLP, giving one vector per graph instance. Instances
// of a modality are merged by a sigmoid-gated sum (gate weights shared across
// modalities) followed by instance normalization. The M modality vectors go
// through one multi-head self-attention block, are averaged, and a linear head
// gives the scalar risk.
//
// Weights use the row-vector convention: node features are rows, so a layer
// computes X * W with W stored as (in x out).
//
// Shared factor of the coupled layer: only the first layer carries a learnable
// shared matrix W_s; later layers have no shared factor (identity). Reading
// the shared factor of later layers as an all-ones matrix would collapse
// every node embedding onto its feature sum.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cellsurv/cohort.hpp"
#include "cellsurv/sparsify.hpp"
#include "cellsurv/tensor.hpp"

namespace cellsurv {

enum class WeightSharing {
  coupled,  // shared W_s on the first layer, modality-specific W_m everywhere
  none,     // no shared factor
  full,     // one encoder for all modalities
};

enum class InstanceAggregator {
  gated_sum,    // sigmoid-gated sum over instances
  transformer,  // self-attention block over instances, then mean
};

std::string to_string(WeightSharing s);
std::string to_string(InstanceAggregator a);
// Throw ConfigError on unknown names.
WeightSharing parse_weight_sharing(const std::string& name);
InstanceAggregator parse_instance_aggregator(const std::string& name);

struct ModelConfig {
  int n_layers = 3;
  int hidden_dim = 128;
  int mlp_dim = 32;
  double pool_ratio = 0.5;
  int n_heads = 4;
  int n_modalities = 1;
  int d_node = 0;

  bool instance_norm = true;
  WeightSharing sharing = WeightSharing::coupled;
  bool shared_attention = true;
  InstanceAggregator aggregator = InstanceAggregator::gated_sum;

  int head_dim() const { return mlp_dim / n_heads; }
  void validate() const;
};

struct LinearSlots {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;
};

struct BranchSlots {
  std::vector<std::size_t> layer;        // W_m per layer, (2 d_l) x d_{l+1}
  std::vector<std::size_t> pool_weight;  // SAGPool scorer per layer, (2 d) x 1
  std::vector<std::size_t> pool_bias;    // 1 x 1
  LinearSlots mlp_hidden;                // 2h -> h
  LinearSlots mlp_out;                   // h -> mlp_dim
};

struct AttentionBlockSlots {
  std::vector<std::size_t> query, key, value;  // per head, d x head_dim
  LinearSlots mlp_hidden;                      // d -> d
  LinearSlots mlp_out;                         // d -> d
};

/// Learnable parameters plus the slot layout. Slots shared between roles
/// hold the same index, so sharing patterns can be checked structurally.
struct ModelParams {
  ModelConfig config;
  ParameterStore store;
  std::optional<std::size_t> shared_first_layer;  // W_s, h x h
  std::vector<BranchSlots> branches;               // one per modality
  std::vector<std::size_t> instance_attention;     // per modality, d x 1; empty for the transformer aggregator
  std::optional<AttentionBlockSlots> instance_transformer;
  AttentionBlockSlots cross_modal;
  std::size_t risk_head = 0;  // d x 1
};

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

// --- building blocks -------------------------------------------------------

Var linear(Tape& tape, const ParameterStore& store, Var x, const LinearSlots& slots);

/// relu( [h | mean of neighbors] * W_m (* W_s on the first layer) ).
Var coupled_graphsage_layer(Tape& tape, Var h, const Adjacency& adjacency, int layer, int modality,
                            const ModelParams& params);

struct PoolResult {
  std::vector<std::uint32_t> kept;  // ascending original indices
  Var features;                      // h[kept] * score[kept]
  Var scores;                        // tanh scores for all input nodes, c x 1
  Adjacency adjacency;               // induced on kept
};

/// Keeps the ceil(ratio * c) highest-scoring nodes (ties to the lower index).
PoolResult sagpool(Tape& tape, Var h, const Adjacency& adjacency, const ParameterStore& store,
                   std::size_t score_weight, std::size_t score_bias, double ratio);

// Keep-count rule used by sagpool, always >= 1 for c >= 1.
std::size_t pooled_size(std::size_t c, double ratio);

/// Encodes one graph instance into a 1 x mlp_dim row.
Var branch_forward(Tape& tape, const CellularGraph& graph, int modality, const ModelParams& params);

/// InstanceNorm( sum_i sigmoid(R_i * w) R_i ), normalization optional.
Var instance_attention(Tape& tape, std::span<const Var> reps, Var gate_weight, bool normalize = true);

struct AttentionBlockOutput {
  Var output;                      // T x d
  std::vector<Matrix> attention;   // per head, T x T
};

/// Multi-head self-attention with a residual 2-layer MLP: X + MLP(concat_h softmax(Q K^T / sqrt(dh)) V).
AttentionBlockOutput attention_block(Tape& tape, Var x, const ParameterStore& store,
                                     const AttentionBlockSlots& slots, int n_heads);

struct TransformerOutput {
  Var embedding;  // 1 x d
  Var risk;       // 1 x 1
  std::vector<Matrix> attention;
};

/// R has one row per modality in registry order.
TransformerOutput cross_modal_transformer(Tape& tape, Var modality_reps, const ModelParams& params);

struct PatientForward {
  Var embedding;
  Var risk;
  std::vector<Var> modality_reps;  // R_n^m, 1 x d each
};

/// Full forward pass for one patient. Instances are encoded in image-id order.
/// With `masks`, each input graph is
/// sparsified before encoding.
PatientForward patient_forward(Tape& tape, const PatientRecord& patient, const ModelParams& params,
                               const MaskSource* masks = nullptr);

struct PatientEmbedding {
  Matrix embedding;  // 1 x d
  double risk = 0.0;
  std::uint64_t flops = 0;
};

/// Forward pass without gradients.
PatientEmbedding embed_patient(const PatientRecord& patient, const ModelParams& params,
                               const MaskSource* masks = nullptr);

}  // namespace cellsurv
