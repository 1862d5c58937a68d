#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cellsurv/tensor.hpp"

namespace cellsurv {

enum class CellType { positive, negative };

struct CellRecord {
  double x = 0.0;  // pixels
  double y = 0.0;
  CellType type = CellType::negative;
  std::vector<double> features;
};

struct ImageExtent {
  double width = 0.0;  // pixels
  double height = 0.0;
};

using Edge = std::pair<std::uint32_t, std::uint32_t>;

/// One stained image: nodes are cells, edges join spatially close cells.
///
/// Node feature layout is [cell features | type flag | x / width | y / height]
/// with the type flag +1 for positive and -1 for negative cells; coordinates
/// are taken relative to the top-left corner of the image.
struct CellularGraph {
  std::string image_id;
  std::string patient_id;
  std::string modality;
  Matrix node_features;    // c x (d_in + 3)
  Matrix positions;        // c x 2, relative coordinates
  std::vector<Edge> edges;  // undirected, first < second, sorted, unique
  Adjacency adjacency;      // derived from edges
  ImageExtent extent;

  std::size_t num_nodes() const { return static_cast<std::size_t>(node_features.rows()); }
  std::size_t num_edges() const { return edges.size(); }

  // Rebuilds `adjacency` from `edges`; call after editing the edge list.
  void rebuild_adjacency();
};

struct KnnOptions {
  int k = 5;
  double max_edge_len = 60.0;  // pixels; longer edges are removed after the KNN step
};

inline constexpr std::size_t kNodeExtraFeatures = 3;

/// Connects each cell to its min(k, c-1) nearest cells (ties: lower index),
/// takes the undirected union, then drops edges longer than max_edge_len.
CellularGraph build_knn_graph(std::span<const CellRecord> cells, ImageExtent extent,
                              const KnnOptions& options = {});

/// Directed KNN lists before symmetrization and pruning; exposed for inspection.
std::vector<std::vector<std::uint32_t>> knn_lists(std::span<const CellRecord> cells, int k);

/// Checks the structural graph invariants; throws ValidationError on violation.
void validate_graph(const CellularGraph& graph, double max_edge_len);

}  // namespace cellsurv
