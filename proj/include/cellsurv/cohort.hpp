#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cellsurv/graph.hpp"

namespace cellsurv {

enum class Event { observed, censored };

struct PatientRecord {
  std::string patient_id;
  double survival_time = 0.0;  // years
  Event event = Event::censored;
  // graphs[m] holds the instances of modality m in registry order; never empty.
  std::vector<std::vector<CellularGraph>> graphs;
};

struct Cohort {
  std::vector<PatientRecord> patients;
  std::vector<std::string> modalities;
  std::size_t d_in = 0;

  std::size_t num_modalities() const { return modalities.size(); }
  std::size_t d_node() const { return d_in + kNodeExtraFeatures; }
  const PatientRecord& patient(const std::string& id) const;
  std::optional<std::size_t> index_of(const std::string& id) const;
  std::size_t num_censored() const;
};

struct PatientMetadata {
  std::string patient_id;
  double survival_time = 0.0;
  Event event = Event::censored;
};

/// Groups graphs by patient and modality and checks the cohort invariants:
/// unique patient ids, positive survival times, at least one graph per
/// registered modality for every patient, and every graph owned by a known
/// patient. An empty registry means "all modalities seen, sorted by name".
Cohort assemble_cohort(const std::vector<PatientMetadata>& metadata, std::vector<CellularGraph> graphs,
                       std::vector<std::string> modality_registry = {});

}  // namespace cellsurv
