#include "cellsurv/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <set>

#include <json.hpp>

#include "cellsurv/datagen.hpp"
#include "cellsurv/errors.hpp"
#include "cellsurv/io.hpp"
#include "cellsurv/rng.hpp"
#include "cellsurv/serialize.hpp"
#include "cellsurv/survival.hpp"

namespace cellsurv {

using Json = nlohmann::ordered_json;

namespace {

void log_line(const RunConfig& cfg, const std::string& msg) {
  if (cfg.verbose) std::clog << "[cellsurv] " << msg << '\n';
}

void warn(const std::string& msg) { std::clog << "[cellsurv] warning: " << msg << '\n'; }

std::vector<SurvivalOutcome> outcomes_for(const Cohort& cohort, std::span<const std::size_t> subset,
                                          std::span<const double> risks) {
  std::vector<SurvivalOutcome> out;
  out.reserve(subset.size());
  for (std::size_t i = 0; i < subset.size(); ++i) {
    const auto& p = cohort.patients[subset[i]];
    out.push_back({p.survival_time, p.event, risks[i]});
  }
  return out;
}

std::vector<std::size_t> all_indices(const Cohort& cohort) {
  std::vector<std::size_t> idx(cohort.patients.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

Cohort load_cohort(const RunConfig& cfg) {
  if (!cfg.data_graphs.empty()) {
    return load_patient_metadata(cfg.data_patients, read_graph_dir(cfg.data_graphs), cfg.modalities);
  }
  if (!cfg.data_cells.empty()) {
    auto graphs = build_graphs(load_cell_table(cfg.data_cells), load_extent_manifest(cfg.data_extents), cfg.knn);
    return load_patient_metadata(cfg.data_patients, std::move(graphs), cfg.modalities);
  }
  return generate_cohort(cfg.synth, cfg.knn);
}

BatchGradient batch_gradient(const Cohort& cohort, std::span<const std::size_t> patients, const ModelParams& params,
                             const MaskSource* masks) {
  const auto n = patients.size();
  std::vector<Tape> tapes(n);
  std::vector<Var> risk_vars(n);
  Matrix risks(static_cast<Eigen::Index>(n), 1);
  std::vector<double> times(n);
  std::vector<Event> events(n);
  BatchGradient out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& patient = cohort.patients.at(patients[i]);
    auto fwd = patient_forward(tapes[i], patient, params, masks);
    risk_vars[i] = fwd.risk;
    risks(static_cast<Eigen::Index>(i), 0) = fwd.risk.scalar();
    times[i] = patient.survival_time;
    events[i] = patient.event;
    out.forward_flops += tapes[i].flop_count();
  }

  // dL/dr from a small tape over the batch risks, then one reverse pass per patient.
  ParameterStore risk_store;
  risk_store.add("risks", risks);
  Tape loss_tape;
  Var loss = cox_batch_loss(loss_tape.param(risk_store, 0), times, events);
  out.loss = loss.scalar();
  out.grads = zero_gradients(params.store);
  if (!std::isfinite(out.loss)) return out;
  const Matrix d_risk = loss_tape.backward(loss)[0];
  for (std::size_t i = 0; i < n; ++i) {
    accumulate(out.grads, tapes[i].backward(risk_vars[i], d_risk(static_cast<Eigen::Index>(i), 0)));
  }
  return out;
}

TrainResult train_model(const Cohort& cohort, std::span<const std::size_t> train, const RunConfig& cfg,
                        std::uint64_t seed) {
  const auto model_cfg =
      cfg.model_config(static_cast<int>(cohort.num_modalities()), static_cast<int>(cohort.d_node()));
  TrainResult out;
  out.params = init_model(model_cfg, seed);
  auto& params = out.params;
  const auto spec = cfg.batch_spec();
  spec.validate();

  std::vector<Event> events;
  for (auto i : train) events.push_back(cohort.patients.at(i).event);
  const auto n_observed = static_cast<std::size_t>(std::count(events.begin(), events.end(), Event::observed));
  if (n_observed == 0) throw DegenerateInputError("training split has no observed event");
  const bool censored_eligible = !spec.bcp_alpha || *spec.bcp_alpha > 0.0;
  const auto eligible = censored_eligible ? events.size() : n_observed;
  const auto batch = std::min(spec.batch_size, eligible);
  const auto steps_per_epoch = (train.size() + batch - 1) / batch;
  const auto total_steps = static_cast<std::size_t>(cfg.epochs) * steps_per_epoch;

  Rng batch_rng(derive_seed(seed, "batches"));
  AdamState adam;
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const MaskSource masks{cfg.sparsity_config(), derive_seed(seed, "train-mask"), static_cast<std::uint64_t>(epoch)};
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
      std::vector<std::size_t> picks;
      for (int attempt = 0;; ++attempt) {
        picks = bcp_sample_batch(events, spec, batch_rng);
        if (std::any_of(picks.begin(), picks.end(), [&](auto p) { return events[p] == Event::observed; })) break;
        if (attempt >= cfg.max_batch_retries) {
          throw DegenerateInputError("no batch with an observed event after " +
                                     std::to_string(cfg.max_batch_retries) + " resamples");
        }
        ++out.resampled_batches;
        warn("all-censored batch at epoch " + std::to_string(epoch) + ", resampling");
      }

      std::vector<std::size_t> patients;
      for (auto p : picks) patients.push_back(train[p]);
      auto bg = batch_gradient(cohort, patients, params, &masks);
      if (!std::isfinite(bg.loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(b));
      }
      out.forward_flops += bg.forward_flops;
      out.forward_count += patients.size();
      const double loss_value = bg.loss;
      const auto& grads = bg.grads;
      const double lr = cfg.lr * 0.5 *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
      adam_step(params.store, grads, lr, cfg.weight_decay, adam);
      epoch_loss += loss_value;
    }
    out.epoch_loss.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
    log_line(cfg, "seed " + std::to_string(seed) + " epoch " + std::to_string(epoch) + " loss " +
                      format_double(out.epoch_loss.back()));
  }
  return out;
}

Prediction predict_risks(const Cohort& cohort, std::span<const std::size_t> subset, const ModelParams& params,
                         const RunConfig& cfg, std::uint64_t seed) {
  Prediction out;
  std::optional<MaskSource> masks;
  if (cfg.inference_time_sparsity) masks = MaskSource{cfg.sparsity_config(), derive_seed(seed, "inference-mask"), 0};
  for (auto i : subset) {
    const auto e = embed_patient(cohort.patients.at(i), params, masks ? &*masks : nullptr);
    out.risk.push_back(e.risk);
    out.flops += e.flops;
  }
  return out;
}

std::vector<int> assign_folds(const Cohort& cohort, int folds, std::uint64_t fold_seed) {
  if (folds < 2) throw ConfigError("folds must be at least 2");
  std::vector<std::string> observed, censored;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
    const auto& p = cohort.patients[i];
    index[p.patient_id] = i;
    (p.event == Event::observed ? observed : censored).push_back(p.patient_id);
  }
  for (const auto* group : {&observed, &censored}) {
    if (group->size() < static_cast<std::size_t>(folds)) {
      throw ValidationError("cross-validation needs at least " + std::to_string(folds) +
                            " patients per event class, found " + std::to_string(observed.size()) + " observed and " +
                            std::to_string(censored.size()) + " censored");
    }
  }
  Rng rng(derive_seed(fold_seed, "folds"));
  std::vector<int> fold_of(cohort.patients.size(), -1);
  std::size_t offset = 0;
  for (auto* group : {&observed, &censored}) {
    std::sort(group->begin(), group->end());
    rng.shuffle(group->begin(), group->end());
    for (std::size_t k = 0; k < group->size(); ++k) {
      fold_of[index[(*group)[k]]] = static_cast<int>((offset + k) % static_cast<std::size_t>(folds));
    }
    offset = (offset + group->size()) % static_cast<std::size_t>(folds);
  }
  return fold_of;
}

EvaluationSummary evaluate_risks(const Cohort& cohort, std::span<const std::size_t> subset,
                                 std::span<const double> risks) {
  const auto outcomes = outcomes_for(cohort, subset, risks);
  EvaluationSummary s;
  const auto counts = concordance_counts(outcomes);
  if (counts.admissible > 0) s.c_index = counts.c_index();
  if (outcomes.size() < 2) return s;

  const auto strat = stratify_by_median(std::span<const SurvivalOutcome>(outcomes));
  s.median_risk = strat.median_risk;
  s.n_low = strat.low.size();
  s.n_high = strat.high.size();
  s.median_survival_low = strat.median_survival_low;
  s.median_survival_high = strat.median_survival_high;
  std::vector<SurvivalOutcome> low, high;
  for (auto i : strat.low) low.push_back(outcomes[i]);
  for (auto i : strat.high) high.push_back(outcomes[i]);
  if (!low.empty()) s.km_low = kaplan_meier(low);
  if (!high.empty()) s.km_high = kaplan_meier(high);
  const bool any_event =
      std::any_of(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.event == Event::observed; });
  if (!low.empty() && !high.empty() && any_event) s.logrank = logrank_test(low, high);
  return s;
}

CVResult cross_validate(const Cohort& cohort, const RunConfig& cfg, const std::filesystem::path& checkpoint_dir) {
  cfg.validate();
  CVResult out;
  out.fold_of = assign_folds(cohort, cfg.folds, cfg.fold_seed);
  const auto n = cohort.patients.size();
  const auto everyone = all_indices(cohort);

  double train_flops = 0.0, train_count = 0.0, infer_flops = 0.0, infer_count = 0.0;
  for (auto seed : cfg.seeds) {
    std::vector<double> oof(n, std::numeric_limits<double>::quiet_NaN());
    for (int f = 0; f < cfg.folds; ++f) {
      std::vector<std::size_t> train, test;
      for (std::size_t i = 0; i < n; ++i) (out.fold_of[i] == f ? test : train).push_back(i);
      std::set<std::string> train_ids;
      for (auto i : train) train_ids.insert(cohort.patients[i].patient_id);
      for (auto i : test) {
        if (train_ids.count(cohort.patients[i].patient_id)) {
          throw ContractError("patient " + cohort.patients[i].patient_id + " is in both train and test of fold " +
                              std::to_string(f));
        }
      }

      const auto cell_seed = derive_seed(seed, "fold", static_cast<std::uint64_t>(f));
      auto trained = train_model(cohort, train, cfg, cell_seed);
      const auto pred = predict_risks(cohort, test, trained.params, cfg, cell_seed);
      for (std::size_t k = 0; k < test.size(); ++k) oof[test[k]] = pred.risk[k];

      CVCell cell;
      cell.seed = seed;
      cell.fold = f;
      cell.n_train = train.size();
      cell.n_test = test.size();
      const auto counts = concordance_counts(outcomes_for(cohort, test, pred.risk));
      if (counts.admissible > 0) cell.c_index = counts.c_index();
      cell.final_loss = trained.epoch_loss.back();
      out.cells.push_back(cell);

      train_flops += static_cast<double>(trained.forward_flops);
      train_count += static_cast<double>(trained.forward_count);
      infer_flops += static_cast<double>(pred.flops);
      infer_count += static_cast<double>(test.size());
      if (!checkpoint_dir.empty()) {
        save_checkpoint(checkpoint_dir / ("seed" + std::to_string(seed) + "_fold" + std::to_string(f) + ".ckpt"),
                        trained.params);
      }
      log_line(cfg, "seed " + std::to_string(seed) + " fold " + std::to_string(f) + " c-index " +
                        (cell.c_index ? format_double(*cell.c_index) : std::string("n/a")));
    }
    out.per_seed.push_back(evaluate_risks(cohort, everyone, oof));
    out.oof_risk.push_back(std::move(oof));
  }

  std::vector<double> valid;
  for (const auto& c : out.cells) {
    if (c.c_index) valid.push_back(*c.c_index);
  }
  out.valid_cells = valid.size();
  if (!valid.empty()) {
    double mean = 0.0;
    for (double v : valid) mean += v;
    mean /= static_cast<double>(valid.size());
    double var = 0.0;
    for (double v : valid) var += (v - mean) * (v - mean);
    out.c_index_mean = mean;
    out.c_index_std = std::sqrt(var / static_cast<double>(valid.size()));
  } else {
    out.c_index_mean = std::numeric_limits<double>::quiet_NaN();
    out.c_index_std = std::numeric_limits<double>::quiet_NaN();
  }

  out.pooled_risk.assign(n, 0.0);
  for (const auto& r : out.oof_risk) {
    for (std::size_t i = 0; i < n; ++i) out.pooled_risk[i] += r[i] / static_cast<double>(out.oof_risk.size());
  }
  out.pooled = evaluate_risks(cohort, everyone, out.pooled_risk);
  out.train_flops_per_patient = train_count > 0 ? train_flops / train_count : 0.0;
  out.inference_flops_per_patient = infer_count > 0 ? infer_flops / infer_count : 0.0;
  return out;
}

std::vector<SweepRow> sweep_sparsity(const Cohort& cohort, const RunConfig& cfg,
                                     const std::filesystem::path& checkpoint_dir) {
  std::vector<SweepRow> rows;
  for (double s : cfg.sweep_sparsity) {
    RunConfig c = cfg;
    c.sparsity = s;
    SweepRow row;
    row.label = format_double(s);
    row.value = s;
    log_line(cfg, "sparsity " + row.label);
    row.result = cross_validate(cohort, c, checkpoint_dir.empty() ? checkpoint_dir : checkpoint_dir / ("s" + row.label));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepRow> sweep_bcp(const Cohort& cohort, const RunConfig& cfg,
                                const std::filesystem::path& checkpoint_dir) {
  std::vector<SweepRow> rows;
  const double censored_fraction =
      static_cast<double>(cohort.num_censored()) / static_cast<double>(cohort.patients.size());
  for (const auto& label : cfg.sweep_alphas) {
    RunConfig c = cfg;
    c.no_bcp = false;
    c.bcp_alpha = label == "censored_fraction" ? std::optional<double>(censored_fraction) : parse_alpha(label);
    SweepRow row;
    row.label = label;
    row.value = c.bcp_alpha ? *c.bcp_alpha : std::numeric_limits<double>::quiet_NaN();
    log_line(cfg, "bcp alpha " + label);
    row.result = cross_validate(cohort, c, checkpoint_dir.empty() ? checkpoint_dir : checkpoint_dir / ("alpha_" + label));
    rows.push_back(std::move(row));
  }
  return rows;
}

LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DegenerateInputError("fit_line: need two or more paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw DegenerateInputError("fit_line: x values are all equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.3f", mean, std);
  return buf;
}

// --- reports ---------------------------------------------------------------

namespace {

Json summary_json(const EvaluationSummary& s) {
  Json j;
  j["c_index"] = opt(s.c_index);
  j["logrank_chi2"] = s.logrank ? Json(s.logrank->chi_square) : Json(nullptr);
  j["logrank_p"] = s.logrank ? Json(s.logrank->p_value) : Json(nullptr);
  j["median_survival_low"] = opt(s.median_survival_low);
  j["median_survival_high"] = opt(s.median_survival_high);
  j["median_risk"] = s.median_risk;
  j["n_low"] = s.n_low;
  j["n_high"] = s.n_high;
  return j;
}

Json cohort_json(const Cohort& cohort) {
  Json j;
  j["n_patients"] = cohort.patients.size();
  j["n_censored"] = cohort.num_censored();
  j["modalities"] = cohort.modalities;
  j["d_in"] = cohort.d_in;
  std::size_t graphs = 0;
  for (const auto& p : cohort.patients) {
    for (const auto& m : p.graphs) graphs += m.size();
  }
  j["n_graphs"] = graphs;
  return j;
}

Json config_json(const RunConfig& cfg) {
  Json j = Json::object();
  for (const auto& [k, v] : config_values(cfg)) j[k] = v;
  return j;
}

Json cv_json(const CVResult& r) {
  Json j;
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"seed", c.seed},
                     {"fold", c.fold},
                     {"n_train", c.n_train},
                     {"n_test", c.n_test},
                     {"c_index", opt(c.c_index)},
                     {"final_loss", c.final_loss}});
  }
  j["cells"] = std::move(cells);
  j["valid_cells"] = r.valid_cells;
  j["c_index_mean"] = r.c_index_mean;
  j["c_index_std"] = r.c_index_std;
  j["c_index_summary"] = format_mean_std(r.c_index_mean, r.c_index_std);
  j["metrics"] = summary_json(r.pooled);
  Json per_seed = Json::array();
  for (std::size_t s = 0; s < r.per_seed.size(); ++s) {
    auto e = summary_json(r.per_seed[s]);
    e["seed"] = r.cells.empty() ? 0 : r.cells[s * (r.cells.size() / r.per_seed.size())].seed;
    per_seed.push_back(std::move(e));
  }
  j["per_seed"] = std::move(per_seed);
  j["flops"] = {{"train_forward_per_patient", r.train_flops_per_patient},
                {"inference_per_patient", r.inference_flops_per_patient}};
  return j;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

std::string sweep_csv(const std::string& key, const std::vector<SweepRow>& rows) {
  std::string out = key + ",c_index_mean,c_index_std,c_index_pooled,logrank_p,train_gflops_per_patient\n";
  for (const auto& row : rows) {
    const auto& r = row.result;
    out += row.label + "," + format_double(r.c_index_mean) + "," + format_double(r.c_index_std) + "," +
           (r.pooled.c_index ? format_double(*r.pooled.c_index) : "") + "," +
           (r.pooled.logrank ? format_double(r.pooled.logrank->p_value) : "") + "," +
           format_double(r.train_flops_per_patient / 1e9) + "\n";
  }
  return out;
}

Json sweep_rows_json(const std::string& key, const std::vector<SweepRow>& rows) {
  Json arr = Json::array();
  for (const auto& row : rows) {
    Json j;
    j[key] = row.label;
    j["c_index_mean"] = row.result.c_index_mean;
    j["c_index_std"] = row.result.c_index_std;
    j["c_index_summary"] = format_mean_std(row.result.c_index_mean, row.result.c_index_std);
    j["metrics"] = summary_json(row.result.pooled);
    j["flops"] = {{"train_forward_per_patient", row.result.train_flops_per_patient},
                  {"inference_per_patient", row.result.inference_flops_per_patient}};
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace

void write_km_csv(const std::filesystem::path& path, const EvaluationSummary& summary) {
  std::string out = "group,time,survival_prob,at_risk\n";
  auto emit = [&out](const char* group, const std::optional<KMCurve>& km, std::size_t n) {
    if (!km) return;
    out += std::string(group) + ",0,1," + std::to_string(n) + "\n";
    for (std::size_t i = 0; i < km->event_times.size(); ++i) {
      out += std::string(group) + "," + format_double(km->event_times[i]) + "," + format_double(km->survival_prob[i]) +
             "," + std::to_string(km->at_risk[i]) + "\n";
    }
  };
  emit("low", summary.km_low, summary.n_low);
  emit("high", summary.km_high, summary.n_high);
  write_text(path, out);
}

std::string default_run_id(const std::string& command, const RunConfig& config) {
  RunConfig c = config;
  c.run_id.clear();
  c.verbose = false;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%08llx",
                static_cast<unsigned long long>(fnv1a(command + "\n" + config_text(c)) & 0xffffffffULL));
  return command + "-" + buf;
}

CommandOutput run_command(const std::string& command, const RunConfig& config) {
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end()) {
    throw ConfigError("unknown command '" + command + "'");
  }
  config.validate();
  CommandOutput out;
  out.run_dir = std::filesystem::path(config.out_dir) / (config.run_id.empty() ? default_run_id(command, config) : config.run_id);
  std::filesystem::create_directories(out.run_dir);
  write_text(out.run_dir / "config.txt", config_text(config));
  const auto ckpt_dir = config.save_checkpoints ? out.run_dir / "checkpoints" : std::filesystem::path{};

  Json report;
  report["command"] = command;
  report["config"] = config_json(config);

  if (command == "generate-synthetic") {
    const auto data = generate_synthetic(config.synth);
    write_synthetic(out.run_dir, data);
    std::vector<SurvivalOutcome> truth;
    for (std::size_t i = 0; i < data.metadata.size(); ++i) {
      truth.push_back({data.metadata[i].survival_time, data.metadata[i].event, data.true_risk[i]});
    }
    std::size_t censored = 0;
    for (const auto& m : data.metadata) censored += m.event == Event::censored ? 1 : 0;
    report["n_patients"] = data.metadata.size();
    report["n_censored"] = censored;
    report["n_images"] = data.cells.size();
    report["true_risk_c_index"] = concordance_index(truth);
  } else if (command == "build-graph") {
    if (config.data_cells.empty() || config.data_extents.empty()) {
      throw ConfigError("build-graph needs data_cells and data_extents");
    }
    const auto table = load_cell_table(config.data_cells);
    const auto graphs = build_graphs(table, load_extent_manifest(config.data_extents), config.knn);
    for (const auto& g : graphs) validate_graph(g, config.knn.max_edge_len);
    const auto dir = config.data_graphs.empty() ? out.run_dir / "graphs" : std::filesystem::path(config.data_graphs);
    write_graph_dir(dir, graphs);
    Json images = Json::array();
    for (const auto& g : graphs) {
      images.push_back({{"image_id", g.image_id}, {"nodes", g.num_nodes()}, {"edges", g.num_edges()}});
    }
    report["graph_dir"] = dir.string();
    report["images"] = std::move(images);
  } else {
    const auto cohort = load_cohort(config);
    report["cohort"] = cohort_json(cohort);
    const auto everyone = all_indices(cohort);

    if (command == "train") {
      Json runs = Json::array();
      for (auto seed : config.seeds) {
        auto trained = train_model(cohort, everyone, config, seed);
        const auto pred = predict_risks(cohort, everyone, trained.params, config, seed);
        const auto summary = evaluate_risks(cohort, everyone, pred.risk);
        const auto path = out.run_dir / "checkpoints" / ("seed" + std::to_string(seed) + ".ckpt");
        save_checkpoint(path, trained.params);
        runs.push_back({{"seed", seed},
                        {"checkpoint", path.filename().string()},
                        {"epoch_loss", trained.epoch_loss},
                        {"resampled_batches", trained.resampled_batches},
                        {"train_forward_flops_per_patient", trained.flops_per_forward()},
                        {"training_set", summary_json(summary)}});
        if (seed == config.seeds.front()) write_km_csv(out.run_dir / "km_curves.csv", summary);
      }
      report["runs"] = std::move(runs);
    } else if (command == "evaluate") {
      if (config.checkpoint.empty()) throw ConfigError("evaluate needs a checkpoint");
      const auto params = load_checkpoint(config.checkpoint);
      if (params.config.n_modalities != static_cast<int>(cohort.num_modalities()) ||
          params.config.d_node != static_cast<int>(cohort.d_node())) {
        throw ValidationError("checkpoint expects " + std::to_string(params.config.n_modalities) +
                              " modalities of node width " + std::to_string(params.config.d_node) +
                              ", cohort has " + std::to_string(cohort.num_modalities()) + " of width " +
                              std::to_string(cohort.d_node()));
      }
      const auto pred = predict_risks(cohort, everyone, params, config, config.seeds.front());
      const auto summary = evaluate_risks(cohort, everyone, pred.risk);
      report["metrics"] = summary_json(summary);
      report["flops"] = {{"inference_per_patient",
                          static_cast<double>(pred.flops) / static_cast<double>(cohort.patients.size())}};
      Json risks = Json::array();
      for (std::size_t i = 0; i < everyone.size(); ++i) {
        risks.push_back({{"patient_id", cohort.patients[i].patient_id}, {"risk", pred.risk[i]}});
      }
      report["risks"] = std::move(risks);
      write_km_csv(out.run_dir / "km_curves.csv", summary);
    } else if (command == "cross-validate") {
      const auto result = cross_validate(cohort, config, ckpt_dir);
      Json cv = cv_json(result);
      for (auto& [k, v] : cv.items()) report[k] = v;
      Json folds = Json::array();
      for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
        folds.push_back({{"patient_id", cohort.patients[i].patient_id},
                         {"fold", result.fold_of[i]},
                         {"oof_risk", result.pooled_risk[i]}});
      }
      report["patients"] = std::move(folds);
      write_km_csv(out.run_dir / "km_curves.csv", result.pooled);
    } else if (command == "sweep-sparsity") {
      const auto rows = sweep_sparsity(cohort, config, ckpt_dir);
      std::vector<double> keep, flops;
      for (const auto& r : rows) {
        keep.push_back(1.0 - r.value);
        flops.push_back(r.result.train_flops_per_patient);
      }
      report["rows"] = sweep_rows_json("sparsity", rows);
      if (rows.size() >= 2) {
        const auto fit = fit_line(keep, flops);
        report["flops_fit"] = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r_squared", fit.r_squared}};
      }
      write_text(out.run_dir / "sweep_sparsity.csv", sweep_csv("sparsity", rows));
    } else if (command == "sweep-bcp") {
      const auto rows = sweep_bcp(cohort, config, ckpt_dir);
      report["censored_fraction"] =
          static_cast<double>(cohort.num_censored()) / static_cast<double>(cohort.patients.size());
      report["rows"] = sweep_rows_json("alpha", rows);
      write_text(out.run_dir / "sweep_bcp.csv", sweep_csv("alpha", rows));
    }
  }

  out.report_json = dump(report);
  write_text(out.run_dir / "report.json", out.report_json);
  return out;
}

}  // namespace cellsurv
