#include "cellsurv/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cellsurv/errors.hpp"
#include "cellsurv/rng.hpp"

namespace cellsurv {

void SynthConfig::validate() const {
  auto check_range = [](const IntRange& r, int min, const char* what) {
    if (r.lo < min || r.hi < r.lo) {
      throw ConfigError(std::string("synth: ") + what + " range must be non-empty with lo >= " + std::to_string(min));
    }
  };
  if (n_patients < 2) throw ConfigError("synth: n_patients must be at least 2");
  if (modalities < 1) throw ConfigError("synth: at least one modality required");
  check_range(cores_per_modality, 1, "cores_per_modality");
  check_range(cells_per_core, 1, "cells_per_core");
  if (d_in < 1) throw ConfigError("synth: d_in must be positive");
  if (!(positive_fraction_lo >= 0.0 && positive_fraction_lo <= positive_fraction_hi && positive_fraction_hi <= 1.0)) {
    throw ConfigError("synth: positive fraction range must lie in [0, 1]");
  }
  if (!(censor_rate >= 0.0 && censor_rate < 1.0)) throw ConfigError("synth: censor_rate must lie in [0, 1)");
  if (!(hazard_scale > 0.0)) throw ConfigError("synth: hazard_scale must be positive");
  if (!(risk_sd > 0.0)) throw ConfigError("synth: risk_sd must be positive");
  if (!(feature_noise >= 0.0)) throw ConfigError("synth: feature_noise must be non-negative");
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

std::string patient_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "P%04d", i);
  return buf;
}

// Uniform background plus a few Gaussian clusters, clipped to the image.
std::vector<CellRecord> place_cells(int c, double side, Rng& rng) {
  std::vector<CellRecord> cells(static_cast<std::size_t>(c));
  const int n_clusters = static_cast<int>(rng.uniform_int(1, 3));
  std::vector<std::pair<double, double>> centers;
  for (int k = 0; k < n_clusters; ++k) centers.emplace_back(rng.uniform(0.2, 0.8) * side, rng.uniform(0.2, 0.8) * side);
  const double spread = side / 10.0;
  for (auto& cell : cells) {
    if (rng.bernoulli(0.5)) {
      const auto& ctr = centers[rng.below(centers.size())];
      cell.x = std::clamp(rng.normal(ctr.first, spread), 0.0, side);
      cell.y = std::clamp(rng.normal(ctr.second, spread), 0.0, side);
    } else {
      cell.x = rng.uniform(0.0, side);
      cell.y = rng.uniform(0.0, side);
    }
  }
  return cells;
}

}  // namespace

SyntheticData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  SyntheticData data;
  for (int m = 0; m < cfg.modalities; ++m) data.modalities.push_back("stain" + std::to_string(m));

  // Fixed map from (type flag, local positive density, 1) to feature space.
  Matrix feature_map(3, cfg.d_in);
  {
    Rng rng(derive_seed(cfg.seed, "feature-map"));
    for (Eigen::Index i = 0; i < feature_map.size(); ++i) feature_map.data()[i] = rng.normal();
  }

  for (int n = 0; n < cfg.n_patients; ++n) {
    const auto pid = patient_name(n);
    Rng rng(derive_seed(cfg.seed, "patient", static_cast<std::uint64_t>(n)));

    const double risk = rng.normal(0.0, cfg.risk_sd);
    double time = rng.exponential(cfg.hazard_scale * std::exp(risk));
    Event event = Event::observed;
    if (rng.bernoulli(cfg.censor_rate)) {
      double cut = 0.0;
      while (cut <= 0.0) cut = rng.uniform(0.0, time);
      time = cut;
      event = Event::censored;
    }
    data.metadata.push_back({pid, time, event});
    data.true_risk.push_back(risk);

    std::size_t pos_total = 0, cell_total = 0;
    for (int m = 0; m < cfg.modalities; ++m) {
      const double frac = m == 0 ? cfg.positive_fraction_lo + (cfg.positive_fraction_hi - cfg.positive_fraction_lo) *
                                                                  normal_cdf(risk / cfg.risk_sd)
                                 : rng.uniform(cfg.positive_fraction_lo, cfg.positive_fraction_hi);
      const auto n_cores = rng.uniform_int(cfg.cores_per_modality.lo, cfg.cores_per_modality.hi);
      for (std::int64_t core = 0; core < n_cores; ++core) {
        const auto image_id = pid + "_" + data.modalities[static_cast<std::size_t>(m)] + "_c" + std::to_string(core);
        const int c = static_cast<int>(rng.uniform_int(cfg.cells_per_core.lo, cfg.cells_per_core.hi));
        const double side = std::round(40.0 * std::sqrt(static_cast<double>(c)));
        auto cells = place_cells(c, side, rng);
        for (auto& cell : cells) cell.type = rng.bernoulli(frac) ? CellType::positive : CellType::negative;

        const auto knn = knn_lists(cells, 5);
        for (std::size_t i = 0; i < cells.size(); ++i) {
          double density = 0.0;
          for (auto j : knn[i]) density += cells[j].type == CellType::positive ? 1.0 : 0.0;
          if (!knn[i].empty()) density /= static_cast<double>(knn[i].size());
          const double flag = cells[i].type == CellType::positive ? 1.0 : -1.0;
          cells[i].features.resize(static_cast<std::size_t>(cfg.d_in));
          for (int f = 0; f < cfg.d_in; ++f) {
            cells[i].features[static_cast<std::size_t>(f)] = flag * feature_map(0, f) + density * feature_map(1, f) +
                                                             feature_map(2, f) + cfg.feature_noise * rng.normal();
          }
          if (m == 0) pos_total += cells[i].type == CellType::positive ? 1 : 0;
        }
        if (m == 0) cell_total += cells.size();
        data.extents[image_id] = {side, side};
        data.cells[image_id] = CellGroup{pid, data.modalities[static_cast<std::size_t>(m)], std::move(cells)};
      }
    }
    data.positive_fraction.push_back(static_cast<double>(pos_total) / static_cast<double>(cell_total));
  }
  return data;
}

Cohort build_cohort(const SyntheticData& data, const KnnOptions& knn) {
  return assemble_cohort(data.metadata, build_graphs(data.cells, data.extents, knn), data.modalities);
}

Cohort generate_cohort(const SynthConfig& config, const KnnOptions& knn) {
  return build_cohort(generate_synthetic(config), knn);
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticData& data) {
  std::filesystem::create_directories(dir);
  write_cell_table(dir / "cells.csv", data.cells);
  write_patient_metadata(dir / "patients.csv", data.metadata);
  write_extent_manifest(dir / "extents.csv", data.extents);
  std::ofstream out(dir / "ground_truth.csv", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "ground_truth.csv").string());
  out << "patient_id,true_risk,positive_fraction\n";
  for (std::size_t i = 0; i < data.metadata.size(); ++i) {
    out << data.metadata[i].patient_id << ',' << format_double(data.true_risk[i]) << ','
        << format_double(data.positive_fraction[i]) << '\n';
  }
}

}  // namespace cellsurv
