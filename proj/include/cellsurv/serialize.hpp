#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cellsurv/graph.hpp"
#include "cellsurv/model.hpp"

namespace cellsurv {

// Graph file: "CSGR", u32 version, u64 schema hash, then length-prefixed
// fields. Integers and doubles are stored little-endian.
inline constexpr std::uint32_t kGraphFormatVersion = 1;
std::uint64_t graph_schema_hash();

void write_graph(const std::filesystem::path& path, const CellularGraph& graph);
CellularGraph read_graph(const std::filesystem::path& path);

/// Writes one <image_id>.csg per graph; returns the written paths.
std::vector<std::filesystem::path> write_graph_dir(const std::filesystem::path& dir,
                                                   const std::vector<CellularGraph>& graphs);
/// Reads every .csg file in `dir`, ordered by file name.
std::vector<CellularGraph> read_graph_dir(const std::filesystem::path& dir);

// Checkpoint: "CSCK", u32 version, model config as key=value text, then named
// tensors with shapes and raw doubles. Loading rebuilds the slot layout from
// the config and fills every slot by name, so round trips are bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

std::string model_config_text(const ModelConfig& config);
ModelConfig parse_model_config_text(const std::string& text);

}  // namespace cellsurv
