#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cellsurv/cohort.hpp"
#include "cellsurv/config.hpp"
#include "cellsurv/metrics.hpp"
#include "cellsurv/model.hpp"
#include "cellsurv/sparsify.hpp"

namespace cellsurv {

/// Prebuilt graphs, raw tables, or a synthetic cohort, in that order of preference.
Cohort load_cohort(const RunConfig& config);

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::uint64_t forward_flops = 0;
  std::uint64_t forward_count = 0;  // patient forwards during training
  std::size_t resampled_batches = 0;

  double flops_per_forward() const {
    return forward_count ? static_cast<double>(forward_flops) / static_cast<double>(forward_count) : 0.0;
  }
};

struct BatchGradient {
  double loss = 0.0;
  Gradients grads;
  std::uint64_t forward_flops = 0;
};

/// Cox loss over the given patients and its parameter gradient. Each patient
/// gets its own tape; the loss is seeded back through them one at a time.
BatchGradient batch_gradient(const Cohort& cohort, std::span<const std::size_t> patients, const ModelParams& params,
                             const MaskSource* masks = nullptr);

/// Adam with a cosine schedule from config.lr to 0 over all optimizer steps.
/// Each epoch draws ceil(n_train / batch) batches and fresh sparsity masks.
TrainResult train_model(const Cohort& cohort, std::span<const std::size_t> train, const RunConfig& config,
                        std::uint64_t seed);

struct Prediction {
  std::vector<double> risk;
  std::uint64_t flops = 0;
};

Prediction predict_risks(const Cohort& cohort, std::span<const std::size_t> subset, const ModelParams& params,
                         const RunConfig& config, std::uint64_t seed);

/// Patient-level stratified assignment: ids of each event class are sorted,
/// shuffled with fold_seed, and dealt round-robin. Independent of input order.
std::vector<int> assign_folds(const Cohort& cohort, int folds, std::uint64_t fold_seed);

struct EvaluationSummary {
  std::optional<double> c_index;
  std::optional<LogRankResult> logrank;
  std::optional<double> median_survival_low;
  std::optional<double> median_survival_high;
  double median_risk = 0.0;
  std::size_t n_low = 0;
  std::size_t n_high = 0;
  std::optional<KMCurve> km_low;
  std::optional<KMCurve> km_high;
};

/// Risks are aligned with `subset`.
EvaluationSummary evaluate_risks(const Cohort& cohort, std::span<const std::size_t> subset,
                                 std::span<const double> risks);

struct CVCell {
  std::uint64_t seed = 0;
  int fold = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::optional<double> c_index;  // missing when the fold has no admissible pair
  double final_loss = 0.0;
};

struct CVResult {
  std::vector<int> fold_of;                     // per patient
  std::vector<CVCell> cells;                    // seed-major
  std::vector<std::vector<double>> oof_risk;    // [seed][patient]
  std::vector<double> pooled_risk;              // mean of oof_risk over seeds
  double c_index_mean = 0.0;
  double c_index_std = 0.0;                     // population std over valid cells
  std::size_t valid_cells = 0;
  EvaluationSummary pooled;
  std::vector<EvaluationSummary> per_seed;
  double train_flops_per_patient = 0.0;
  double inference_flops_per_patient = 0.0;
};

/// Checkpoints go to checkpoint_dir when it is non-empty.
CVResult cross_validate(const Cohort& cohort, const RunConfig& config,
                        const std::filesystem::path& checkpoint_dir = {});

struct SweepRow {
  std::string label;
  double value = 0.0;  // sparsity, or alpha (NaN for uniform)
  CVResult result;
};

std::vector<SweepRow> sweep_sparsity(const Cohort& cohort, const RunConfig& config,
                                     const std::filesystem::path& checkpoint_dir = {});
std::vector<SweepRow> sweep_bcp(const Cohort& cohort, const RunConfig& config,
                                const std::filesystem::path& checkpoint_dir = {});

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};
LinearFit fit_line(std::span<const double> x, std::span<const double> y);

/// "0.57 ± 0.002"
std::string format_mean_std(double mean, double std);

// --- commands ---------------------------------------------------------------

inline const std::vector<std::string> kCommands{"build-graph",  "train",      "cross-validate",    "sweep-sparsity",
                                                "sweep-bcp",    "evaluate",   "generate-synthetic"};

std::string default_run_id(const std::string& command, const RunConfig& config);

struct CommandOutput {
  std::filesystem::path run_dir;
  std::string report_json;
};

/// Runs one command and writes its outputs under out_dir/run_id.
CommandOutput run_command(const std::string& command, const RunConfig& config);

void write_km_csv(const std::filesystem::path& path, const EvaluationSummary& summary);

}  // namespace cellsurv
