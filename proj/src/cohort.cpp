#include "cellsurv/cohort.hpp"

#include <algorithm>
#include <set>

#include "cellsurv/errors.hpp"

namespace cellsurv {

const PatientRecord& Cohort::patient(const std::string& id) const {
  const auto idx = index_of(id);
  if (!idx) throw ContractError("unknown patient '" + id + "'");
  return patients[*idx];
}

std::optional<std::size_t> Cohort::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < patients.size(); ++i) {
    if (patients[i].patient_id == id) return i;
  }
  return std::nullopt;
}

std::size_t Cohort::num_censored() const {
  return static_cast<std::size_t>(std::count_if(patients.begin(), patients.end(), [](const auto& p) {
    return p.event == Event::censored;
  }));
}

Cohort assemble_cohort(const std::vector<PatientMetadata>& metadata, std::vector<CellularGraph> graphs,
                       std::vector<std::string> modality_registry) {
  Cohort cohort;
  if (modality_registry.empty()) {
    std::set<std::string> seen;
    for (const auto& g : graphs) seen.insert(g.modality);
    modality_registry.assign(seen.begin(), seen.end());
  }
  if (modality_registry.empty()) throw ValidationError("cohort has no modalities");
  {
    std::set<std::string> unique(modality_registry.begin(), modality_registry.end());
    if (unique.size() != modality_registry.size()) throw ValidationError("duplicate modality in registry");
  }
  cohort.modalities = modality_registry;

  std::map<std::string, std::size_t> patient_index;
  for (const auto& row : metadata) {
    if (!(row.survival_time > 0.0)) {
      throw ValidationError("patient " + row.patient_id + ": survival time must be positive");
    }
    if (!patient_index.emplace(row.patient_id, cohort.patients.size()).second) {
      throw ValidationError("duplicate patient_id '" + row.patient_id + "'");
    }
    PatientRecord p;
    p.patient_id = row.patient_id;
    p.survival_time = row.survival_time;
    p.event = row.event;
    p.graphs.resize(modality_registry.size());
    cohort.patients.push_back(std::move(p));
  }

  std::optional<std::size_t> d_node;
  for (auto& g : graphs) {
    const auto pit = patient_index.find(g.patient_id);
    if (pit == patient_index.end()) {
      throw ValidationError("image " + g.image_id + " belongs to unknown patient '" + g.patient_id + "'");
    }
    const auto mit = std::find(modality_registry.begin(), modality_registry.end(), g.modality);
    if (mit == modality_registry.end()) {
      throw ValidationError("image " + g.image_id + " has unregistered modality '" + g.modality + "'");
    }
    const auto width = static_cast<std::size_t>(g.node_features.cols());
    if (d_node && *d_node != width) {
      throw ValidationError("image " + g.image_id + " has node width " + std::to_string(width) +
                            ", expected " + std::to_string(*d_node));
    }
    d_node = width;
    const auto m = static_cast<std::size_t>(mit - modality_registry.begin());
    cohort.patients[pit->second].graphs[m].push_back(std::move(g));
  }
  for (auto& p : cohort.patients) {
    for (std::size_t m = 0; m < modality_registry.size(); ++m) {
      if (p.graphs[m].empty()) {
        throw ValidationError("patient " + p.patient_id + " has no image for modality " + modality_registry[m]);
      }
      std::sort(p.graphs[m].begin(), p.graphs[m].end(),
                [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
    }
  }
  if (!d_node || *d_node < kNodeExtraFeatures) throw ValidationError("cohort has no graphs");
  cohort.d_in = *d_node - kNodeExtraFeatures;
  return cohort;
}

}  // namespace cellsurv
