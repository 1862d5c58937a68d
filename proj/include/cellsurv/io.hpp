#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cellsurv/cohort.hpp"
#include "cellsurv/graph.hpp"

namespace cellsurv {

/// Cells of one image plus the owning patient and the stain.
struct CellGroup {
  std::string patient_id;
  std::string modality;
  std::vector<CellRecord> cells;
};

/// Image id -> cells, ordered by image id.
using CellTable = std::map<std::string, CellGroup>;
using ExtentManifest = std::map<std::string, ImageExtent>;

// Cell table CSV: image_id,patient_id,modality,x,y,cell_type,f0..f{d-1}.
// cell_type accepts positive/negative and the aliases pos/neg, +/-, 1/0
// (case-insensitive). Errors carry the file name and 1-based line number.
CellTable load_cell_table(const std::filesystem::path& path);
void write_cell_table(const std::filesystem::path& path, const CellTable& table);

// Patient metadata CSV: patient_id,survival_time_years,event (1 = death, 0 = censored).
std::vector<PatientMetadata> load_patient_metadata_rows(const std::filesystem::path& path);
void write_patient_metadata(const std::filesystem::path& path, const std::vector<PatientMetadata>& rows);

// Extent manifest CSV: image_id,width_px,height_px.
ExtentManifest load_extent_manifest(const std::filesystem::path& path);
void write_extent_manifest(const std::filesystem::path& path, const ExtentManifest& extents);

/// Builds one KNN graph per image in the table.
std::vector<CellularGraph> build_graphs(const CellTable& table, const ExtentManifest& extents,
                                        const KnnOptions& options = {});

/// Reads metadata and assembles the cohort over prebuilt graphs.
Cohort load_patient_metadata(const std::filesystem::path& path, std::vector<CellularGraph> graphs,
                             std::vector<std::string> modality_registry = {});

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace cellsurv
