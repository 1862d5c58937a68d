#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cellsurv/cohort.hpp"
#include "cellsurv/graph.hpp"
#include "cellsurv/io.hpp"

namespace cellsurv {

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct SynthConfig {
  std::uint64_t seed = 7;
  int n_patients = 150;
  int modalities = 2;
  IntRange cores_per_modality{1, 2};
  IntRange cells_per_core{100, 300};
  int d_in = 16;
  double positive_fraction_lo = 0.1;
  double positive_fraction_hi = 0.9;
  double censor_rate = 0.2;
  double hazard_scale = 0.2;
  // Spread of the latent log-hazard. Larger values make the survival
  // ordering follow the planted signal more closely.
  double risk_sd = 1.5;
  double feature_noise = 0.5;

  void validate() const;
};

/// Raw tables in the ingestion formats plus the latent risk per patient.
struct SyntheticData {
  std::vector<std::string> modalities;
  CellTable cells;
  ExtentManifest extents;
  std::vector<PatientMetadata> metadata;
  std::vector<double> true_risk;          // aligned with metadata
  std::vector<double> positive_fraction;  // realized, modality 0, pooled over cores
};

/// Pure function of the config: every patient draws from its own derived stream.
SyntheticData generate_synthetic(const SynthConfig& config);

/// Generates the tables and runs them through graph construction and cohort assembly.
Cohort generate_cohort(const SynthConfig& config, const KnnOptions& knn = {});
Cohort build_cohort(const SyntheticData& data, const KnnOptions& knn = {});

/// Writes cells.csv, patients.csv, extents.csv and ground_truth.csv.
void write_synthetic(const std::filesystem::path& dir, const SyntheticData& data);

}  // namespace cellsurv
