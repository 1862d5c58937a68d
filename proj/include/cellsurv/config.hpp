#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cellsurv/datagen.hpp"
#include "cellsurv/graph.hpp"
#include "cellsurv/model.hpp"
#include "cellsurv/sparsify.hpp"
#include "cellsurv/survival.hpp"

namespace cellsurv {

/// Everything a run needs. Each field has a flat key (see config_fields())
/// usable in a config file as `key = value` and on the command line as
/// `--key value`.
struct RunConfig {
  // Data: prebuilt graphs, raw tables, or (when neither is given) a synthetic cohort.
  std::string data_graphs;
  std::string data_cells;
  std::string data_extents;
  std::string data_patients;
  std::vector<std::string> modalities;  // registry order; empty = sorted names
  SynthConfig synth;
  KnnOptions knn;

  int n_layers = 3;
  int hidden_dim = 128;
  int mlp_dim = 32;
  double pool_ratio = 0.5;
  int n_heads = 4;

  double sparsity = 0.8;
  int sparsity_min_kept = 1;

  std::size_t batch_size = 128;
  std::optional<double> bcp_alpha = 0.1;  // nullopt = uniform
  double lr = 0.002;
  double weight_decay = 1e-4;
  int epochs = 30;
  int folds = 3;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::uint64_t fold_seed = 2024;
  int max_batch_retries = 100;

  bool no_instance_norm = false;
  bool no_weight_sharing = false;
  bool full_weight_sharing = false;
  bool no_bcp = false;
  bool transformer_attention = false;
  bool inference_time_sparsity = false;
  bool non_shared_attention = false;

  std::string out_dir = "runs";
  std::string run_id;  // empty = derived from the command and config
  std::string checkpoint;
  bool save_checkpoints = true;
  bool verbose = false;

  std::vector<double> sweep_sparsity{0.0, 0.2, 0.4, 0.6, 0.8};
  // Numbers, "uniform", or "censored_fraction" (resolved against the cohort).
  std::vector<std::string> sweep_alphas{"0", "0.1", "0.25", "0.5", "uniform"};

  void validate() const;

  ModelConfig model_config(int n_modalities, int d_node) const;
  SparsityConfig sparsity_config() const;
  BatchSpec batch_spec() const;
};

struct ConfigField {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigField>& config_fields();
const ConfigField* find_config_field(const std::string& key);

/// Sets one field from text; throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// `key = value` lines; blank lines and `#` comments ignored.
void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin = "<config>");
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// Every field in registry order.
std::map<std::string, std::string> config_values(const RunConfig& config);
std::string config_text(const RunConfig& config);

std::optional<double> parse_alpha(const std::string& text);
std::string alpha_string(const std::optional<double>& alpha);

}  // namespace cellsurv
