#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cellsurv/graph.hpp"
#include "cellsurv/rng.hpp"

namespace cellsurv {

struct SparsityConfig {
  double ratio = 0.8;  // per-node drop probability s, 0 <= s < 1
  bool apply_at_inference = false;
  int min_kept = 1;

  void validate() const;
};

using NodeMask = std::vector<std::uint8_t>;  // 1 = keep

/// Independent Bernoulli(1 - s) keep flags. Draws are repeated until at least
/// min(min_kept, c) nodes survive.
NodeMask sample_mask(std::size_t c, double s, Rng& rng, int min_kept = 1);

/// Compacts a graph to its kept nodes and the edges between them. Kept nodes
/// retain their relative order. Equivalent to masking the feature matrix and
/// adjacency and then deleting the zeroed nodes.
CellularGraph apply_mask(const CellularGraph& graph, std::span<const std::uint8_t> mask);

/// Mask stream for one (seed, epoch): each graph draws from its own stream keyed
/// by image id, so masks do not depend on processing order.
struct MaskSource {
  SparsityConfig config;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;

  CellularGraph sparsify(const CellularGraph& graph) const;
};

}  // namespace cellsurv
