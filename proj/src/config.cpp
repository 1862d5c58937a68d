#include "cellsurv/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cellsurv/errors.hpp"
#include "cellsurv/io.hpp"

namespace cellsurv {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto t = trim(text);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ConfigError("config '" + key + "': cannot parse '" + text + "' as a number");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  auto t = trim(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw ConfigError("config '" + key + "': expected a boolean, got '" + text + "'");
}

template <class T>
std::string show(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    return format_double(v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else {
    return std::to_string(v);
  }
}

template <class T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + show(items[i]);
  return out;
}

template <class T>
T parse_scalar(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<T, bool>) {
    return parse_bool(key, text);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return trim(text);
  } else {
    return parse_number<T>(key, text);
  }
}

// Field bound to a member reached through `access`.
template <class T, class Access>
ConfigField field(std::string key, std::string help, Access access) {
  ConfigField f;
  f.key = key;
  f.help = std::move(help);
  f.set = [access, key](RunConfig& c, const std::string& v) { access(c) = parse_scalar<T>(key, v); };
  f.get = [access](const RunConfig& c) { return show(access(c)); };
  return f;
}

template <class T, class Access>
ConfigField list_field(std::string key, std::string help, Access access) {
  ConfigField f;
  f.key = key;
  f.help = std::move(help);
  f.set = [access, key](RunConfig& c, const std::string& v) {
    std::vector<T> items;
    for (const auto& item : split_list(v)) items.push_back(parse_scalar<T>(key, item));
    access(c) = std::move(items);
  };
  f.get = [access](const RunConfig& c) { return join(access(c)); };
  return f;
}

#define CS_MEMBER(expr) [](auto& c) -> auto& { return c.expr; }

std::vector<ConfigField> make_fields() {
  std::vector<ConfigField> f;
  f.push_back(field<std::string>("data_graphs", "directory of .csg graph files", CS_MEMBER(data_graphs)));
  f.push_back(field<std::string>("data_cells", "cell table CSV", CS_MEMBER(data_cells)));
  f.push_back(field<std::string>("data_extents", "image extent manifest CSV", CS_MEMBER(data_extents)));
  f.push_back(field<std::string>("data_patients", "patient metadata CSV", CS_MEMBER(data_patients)));
  f.push_back(list_field<std::string>("modalities", "modality registry, comma separated", CS_MEMBER(modalities)));

  f.push_back(field<std::uint64_t>("synth_seed", "synthetic cohort seed", CS_MEMBER(synth.seed)));
  f.push_back(field<int>("synth_patients", "synthetic patients", CS_MEMBER(synth.n_patients)));
  f.push_back(field<int>("synth_modalities", "synthetic modality count", CS_MEMBER(synth.modalities)));
  f.push_back(field<int>("synth_cores_min", "cores per modality, low", CS_MEMBER(synth.cores_per_modality.lo)));
  f.push_back(field<int>("synth_cores_max", "cores per modality, high", CS_MEMBER(synth.cores_per_modality.hi)));
  f.push_back(field<int>("synth_cells_min", "cells per core, low", CS_MEMBER(synth.cells_per_core.lo)));
  f.push_back(field<int>("synth_cells_max", "cells per core, high", CS_MEMBER(synth.cells_per_core.hi)));
  f.push_back(field<int>("synth_d_in", "cell feature width", CS_MEMBER(synth.d_in)));
  f.push_back(field<double>("synth_positive_lo", "positive fraction, low", CS_MEMBER(synth.positive_fraction_lo)));
  f.push_back(field<double>("synth_positive_hi", "positive fraction, high", CS_MEMBER(synth.positive_fraction_hi)));
  f.push_back(field<double>("synth_censor_rate", "censoring probability", CS_MEMBER(synth.censor_rate)));
  f.push_back(field<double>("synth_hazard_scale", "baseline hazard", CS_MEMBER(synth.hazard_scale)));
  f.push_back(field<double>("synth_risk_sd", "latent risk spread", CS_MEMBER(synth.risk_sd)));
  f.push_back(field<double>("synth_feature_noise", "feature noise sd", CS_MEMBER(synth.feature_noise)));

  f.push_back(field<int>("knn_k", "neighbors per cell", CS_MEMBER(knn.k)));
  f.push_back(field<double>("max_edge_len", "edge pruning length, pixels", CS_MEMBER(knn.max_edge_len)));

  f.push_back(field<int>("n_layers", "graph layers per branch", CS_MEMBER(n_layers)));
  f.push_back(field<int>("hidden_dim", "graph layer width", CS_MEMBER(hidden_dim)));
  f.push_back(field<int>("mlp_dim", "branch output width", CS_MEMBER(mlp_dim)));
  f.push_back(field<double>("pool_ratio", "fraction of nodes kept per pooling step", CS_MEMBER(pool_ratio)));
  f.push_back(field<int>("n_heads", "attention heads", CS_MEMBER(n_heads)));

  f.push_back(field<double>("sparsity", "training-time node drop probability", CS_MEMBER(sparsity)));
  f.push_back(field<int>("sparsity_min_kept", "minimum nodes kept per graph", CS_MEMBER(sparsity_min_kept)));

  f.push_back(field<std::size_t>("batch_size", "patients per batch", CS_MEMBER(batch_size)));
  {
    ConfigField a;
    a.key = "bcp_alpha";
    a.help = "censored-slot probability, or 'uniform'";
    a.set = [](RunConfig& c, const std::string& v) { c.bcp_alpha = parse_alpha(v); };
    a.get = [](const RunConfig& c) { return alpha_string(c.bcp_alpha); };
    f.push_back(std::move(a));
  }
  f.push_back(field<double>("lr", "peak learning rate", CS_MEMBER(lr)));
  f.push_back(field<double>("weight_decay", "decoupled weight decay", CS_MEMBER(weight_decay)));
  f.push_back(field<int>("epochs", "training epochs", CS_MEMBER(epochs)));
  f.push_back(field<int>("folds", "cross-validation folds", CS_MEMBER(folds)));
  f.push_back(list_field<std::uint64_t>("seeds", "training seeds, comma separated", CS_MEMBER(seeds)));
  f.push_back(field<std::uint64_t>("fold_seed", "seed of the fold assignment", CS_MEMBER(fold_seed)));
  f.push_back(field<int>("max_batch_retries", "resamples of an all-censored batch", CS_MEMBER(max_batch_retries)));

  f.push_back(field<bool>("no_instance_norm", "ablation", CS_MEMBER(no_instance_norm)));
  f.push_back(field<bool>("no_weight_sharing", "ablation", CS_MEMBER(no_weight_sharing)));
  f.push_back(field<bool>("full_weight_sharing", "ablation", CS_MEMBER(full_weight_sharing)));
  f.push_back(field<bool>("no_bcp", "ablation", CS_MEMBER(no_bcp)));
  f.push_back(field<bool>("transformer_attention", "ablation", CS_MEMBER(transformer_attention)));
  f.push_back(field<bool>("inference_time_sparsity", "ablation", CS_MEMBER(inference_time_sparsity)));
  f.push_back(field<bool>("non_shared_attention", "ablation", CS_MEMBER(non_shared_attention)));

  f.push_back(field<std::string>("out_dir", "root of run directories", CS_MEMBER(out_dir)));
  f.push_back(field<std::string>("run_id", "run directory name", CS_MEMBER(run_id)));
  f.push_back(field<std::string>("checkpoint", "checkpoint to evaluate", CS_MEMBER(checkpoint)));
  f.push_back(field<bool>("save_checkpoints", "write per-fold checkpoints", CS_MEMBER(save_checkpoints)));
  f.push_back(field<bool>("verbose", "progress on stderr", CS_MEMBER(verbose)));

  f.push_back(list_field<double>("sweep_sparsity", "sparsity values", CS_MEMBER(sweep_sparsity)));
  f.push_back(list_field<std::string>("sweep_alphas", "bcp values", CS_MEMBER(sweep_alphas)));
  return f;
}

#undef CS_MEMBER

}  // namespace

std::optional<double> parse_alpha(const std::string& text) {
  const auto t = trim(text);
  if (t == "uniform") return std::nullopt;
  return parse_number<double>("bcp_alpha", t);
}

std::string alpha_string(const std::optional<double>& alpha) { return alpha ? format_double(*alpha) : "uniform"; }

const std::vector<ConfigField>& config_fields() {
  static const auto fields = make_fields();
  return fields;
}

const ConfigField* find_config_field(const std::string& key) {
  for (const auto& f : config_fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  const auto* f = find_config_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(config, value);
}

void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(config, buf.str(), path.string());
}

std::map<std::string, std::string> config_values(const RunConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& f : config_fields()) out[f.key] = f.get(config);
  return out;
}

std::string config_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : config_fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

void RunConfig::validate() const {
  if (folds < 2) throw ConfigError("folds must be at least 2");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (max_batch_retries < 0) throw ConfigError("max_batch_retries must be non-negative");
  if (no_weight_sharing && full_weight_sharing) {
    throw ConfigError("no_weight_sharing and full_weight_sharing are mutually exclusive");
  }
  if (knn.k < 1) throw ConfigError("knn_k must be positive");
  if (!(knn.max_edge_len > 0.0)) throw ConfigError("max_edge_len must be positive");
  if (!data_cells.empty() && (data_extents.empty() || data_patients.empty())) {
    throw ConfigError("data_cells needs data_extents and data_patients");
  }
  if (!data_graphs.empty() && data_patients.empty()) throw ConfigError("data_graphs needs data_patients");
  if (data_cells.empty() && data_graphs.empty()) synth.validate();
  sparsity_config().validate();
  batch_spec().validate();
  for (double s : sweep_sparsity) {
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("sweep_sparsity values must lie in [0, 1)");
  }
  for (const auto& a : sweep_alphas) {
    if (a == "censored_fraction") continue;
    BatchSpec spec = batch_spec();
    spec.bcp_alpha = parse_alpha(a);
    spec.validate();
  }
  ModelConfig probe = model_config(1, 1);
  probe.validate();
}

ModelConfig RunConfig::model_config(int n_modalities, int d_node) const {
  ModelConfig c;
  c.n_layers = n_layers;
  c.hidden_dim = hidden_dim;
  c.mlp_dim = mlp_dim;
  c.pool_ratio = pool_ratio;
  c.n_heads = n_heads;
  c.n_modalities = n_modalities;
  c.d_node = d_node;
  c.instance_norm = !no_instance_norm;
  c.sharing = no_weight_sharing ? WeightSharing::none : full_weight_sharing ? WeightSharing::full : WeightSharing::coupled;
  c.shared_attention = !non_shared_attention;
  c.aggregator = transformer_attention ? InstanceAggregator::transformer : InstanceAggregator::gated_sum;
  return c;
}

SparsityConfig RunConfig::sparsity_config() const {
  SparsityConfig s;
  s.ratio = sparsity;
  s.apply_at_inference = inference_time_sparsity;
  s.min_kept = sparsity_min_kept;
  return s;
}

BatchSpec RunConfig::batch_spec() const {
  BatchSpec b;
  b.batch_size = batch_size;
  b.bcp_alpha = no_bcp ? std::nullopt : bcp_alpha;
  return b;
}

}  // namespace cellsurv
