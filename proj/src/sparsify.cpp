#include "cellsurv/sparsify.hpp"

#include <algorithm>
#include <cmath>

#include "cellsurv/errors.hpp"

namespace cellsurv {

void SparsityConfig::validate() const {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("sparsity ratio must lie in [0, 1)");
  if (min_kept < 1) throw ConfigError("sparsity min_kept must be at least 1");
}

NodeMask sample_mask(std::size_t c, double s, Rng& rng, int min_kept) {
  if (c == 0) throw DegenerateInputError("sample_mask: graph has no nodes");
  if (!(s >= 0.0 && s < 1.0)) throw DomainError("sample_mask: sparsity ratio must lie in [0, 1)");
  const auto need = std::min<std::size_t>(static_cast<std::size_t>(std::max(min_kept, 1)), c);
  NodeMask mask(c, 1);
  if (s == 0.0) return mask;
  const double keep = 1.0 - s;
  for (;;) {
    std::size_t kept = 0;
    for (auto& m : mask) {
      m = rng.bernoulli(keep) ? 1 : 0;
      kept += m;
    }
    if (kept >= need) return mask;
  }
}

CellularGraph apply_mask(const CellularGraph& graph, std::span<const std::uint8_t> mask) {
  const auto c = graph.num_nodes();
  if (mask.size() != c) {
    throw DimensionError("apply_mask: mask of length " + std::to_string(mask.size()) + " for " +
                         std::to_string(c) + " nodes");
  }
  if (std::all_of(mask.begin(), mask.end(), [](auto m) { return m != 0; })) return graph;

  std::vector<std::int64_t> remap(c, -1);
  std::vector<Eigen::Index> kept;
  for (std::size_t i = 0; i < c; ++i) {
    if (mask[i]) {
      remap[i] = static_cast<std::int64_t>(kept.size());
      kept.push_back(static_cast<Eigen::Index>(i));
    }
  }
  CellularGraph out;
  out.image_id = graph.image_id;
  out.patient_id = graph.patient_id;
  out.modality = graph.modality;
  out.extent = graph.extent;
  out.node_features = graph.node_features(kept, Eigen::all);
  out.positions = graph.positions(kept, Eigen::all);
  for (const auto& [u, v] : graph.edges) {
    if (remap[u] >= 0 && remap[v] >= 0) {
      out.edges.emplace_back(static_cast<std::uint32_t>(remap[u]), static_cast<std::uint32_t>(remap[v]));
    }
  }
  out.rebuild_adjacency();
  return out;
}

CellularGraph MaskSource::sparsify(const CellularGraph& graph) const {
  if (config.ratio == 0.0) return graph;
  Rng rng(derive_seed(seed, graph.image_id, epoch));
  const auto mask = sample_mask(graph.num_nodes(), config.ratio, rng, config.min_kept);
  return apply_mask(graph, mask);
}

}  // namespace cellsurv
