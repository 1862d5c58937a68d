#include "cellsurv/graph.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "cellsurv/errors.hpp"

namespace cellsurv {

void CellularGraph::rebuild_adjacency() { adjacency = Adjacency::from_edges(num_nodes(), edges); }

namespace {

double squared_distance(const CellRecord& a, const CellRecord& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

// Uniform bucket grid over the cell bounding box.
class BucketGrid {
 public:
  explicit BucketGrid(std::span<const CellRecord> cells) {
    min_x_ = max_x_ = cells[0].x;
    min_y_ = max_y_ = cells[0].y;
    for (const auto& c : cells) {
      min_x_ = std::min(min_x_, c.x);
      max_x_ = std::max(max_x_, c.x);
      min_y_ = std::min(min_y_, c.y);
      max_y_ = std::max(max_y_, c.y);
    }
    const double area = std::max(max_x_ - min_x_, 1.0) * std::max(max_y_ - min_y_, 1.0);
    // About two cells per bucket.
    cell_ = std::max(std::sqrt(2.0 * area / static_cast<double>(cells.size())), 1e-9);
    nx_ = static_cast<std::int64_t>((max_x_ - min_x_) / cell_) + 1;
    ny_ = static_cast<std::int64_t>((max_y_ - min_y_) / cell_) + 1;
    buckets_.resize(static_cast<std::size_t>(nx_ * ny_));
    for (std::uint32_t i = 0; i < cells.size(); ++i) {
      const auto [bx, by] = bucket_of(cells[i]);
      buckets_[static_cast<std::size_t>(by * nx_ + bx)].push_back(i);
    }
  }

  std::pair<std::int64_t, std::int64_t> bucket_of(const CellRecord& c) const {
    auto bx = static_cast<std::int64_t>((c.x - min_x_) / cell_);
    auto by = static_cast<std::int64_t>((c.y - min_y_) / cell_);
    return {std::clamp<std::int64_t>(bx, 0, nx_ - 1), std::clamp<std::int64_t>(by, 0, ny_ - 1)};
  }

  // Visits all buckets at Chebyshev distance exactly `ring` from (bx, by).
  template <class F>
  void for_ring(std::int64_t bx, std::int64_t by, std::int64_t ring, F&& visit) const {
    for (std::int64_t y = by - ring; y <= by + ring; ++y) {
      if (y < 0 || y >= ny_) continue;
      const bool edge_row = (y == by - ring || y == by + ring);
      const std::int64_t step = edge_row ? 1 : 2 * ring;
      for (std::int64_t x = bx - ring; x <= bx + ring; x += (step == 0 ? 1 : step)) {
        if (x >= 0 && x < nx_) {
          for (auto idx : buckets_[static_cast<std::size_t>(y * nx_ + x)]) visit(idx);
        }
      }
    }
  }

  double bucket_size() const { return cell_; }
  std::int64_t max_ring() const { return std::max(nx_, ny_); }

 private:
  double min_x_, max_x_, min_y_, max_y_;
  double cell_;
  std::int64_t nx_, ny_;
  std::vector<std::vector<std::uint32_t>> buckets_;
};

}  // namespace

std::vector<std::vector<std::uint32_t>> knn_lists(std::span<const CellRecord> cells, int k) {
  if (cells.empty()) throw DegenerateInputError("knn: empty cell list");
  if (k < 0) throw DomainError("knn: k must be non-negative");
  const std::size_t c = cells.size();
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), c - 1);
  std::vector<std::vector<std::uint32_t>> lists(c);
  if (kk == 0) return lists;

  const BucketGrid grid(cells);
  using Candidate = std::pair<double, std::uint32_t>;  // (squared distance, index)
  for (std::uint32_t i = 0; i < c; ++i) {
    std::priority_queue<Candidate> best;  // max-heap: top is the current worst
    const auto [bx, by] = grid.bucket_of(cells[i]);
    for (std::int64_t ring = 0; ring <= grid.max_ring(); ++ring) {
      grid.for_ring(bx, by, ring, [&](std::uint32_t j) {
        if (j == i) return;
        const Candidate cand{squared_distance(cells[i], cells[j]), j};
        if (best.size() < kk) {
          best.push(cand);
        } else if (cand < best.top()) {
          best.pop();
          best.push(cand);
        }
      });
      // Anything outside rings 0..ring is farther than ring * bucket_size.
      const double bound = static_cast<double>(ring) * grid.bucket_size();
      if (best.size() == kk && best.top().first <= bound * bound) break;
    }
    auto& out = lists[i];
    out.resize(best.size());
    for (auto it = out.rbegin(); it != out.rend(); ++it) {
      *it = best.top().second;
      best.pop();
    }
  }
  return lists;
}

CellularGraph build_knn_graph(std::span<const CellRecord> cells, ImageExtent extent, const KnnOptions& options) {
  if (cells.empty()) throw DegenerateInputError("build_knn_graph: empty cell list");
  if (!(extent.width > 0.0) || !(extent.height > 0.0)) {
    throw DomainError("build_knn_graph: image extent must be positive");
  }
  const std::size_t d_in = cells[0].features.size();
  for (const auto& cell : cells) {
    if (cell.features.size() != d_in) {
      throw DimensionError("build_knn_graph: feature width " + std::to_string(cell.features.size()) +
                           " differs from " + std::to_string(d_in));
    }
  }

  const auto lists = knn_lists(cells, options.k);
  const double max_sq = options.max_edge_len * options.max_edge_len;
  std::vector<Edge> edges;
  for (std::uint32_t i = 0; i < lists.size(); ++i) {
    for (auto j : lists[i]) {
      if (squared_distance(cells[i], cells[j]) > max_sq) continue;
      edges.emplace_back(std::min(i, j), std::max(i, j));
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  CellularGraph g;
  g.extent = extent;
  const auto c = static_cast<Eigen::Index>(cells.size());
  g.node_features.resize(c, static_cast<Eigen::Index>(d_in + kNodeExtraFeatures));
  g.positions.resize(c, 2);
  for (Eigen::Index i = 0; i < c; ++i) {
    const auto& cell = cells[static_cast<std::size_t>(i)];
    for (std::size_t f = 0; f < d_in; ++f) g.node_features(i, static_cast<Eigen::Index>(f)) = cell.features[f];
    const double rx = cell.x / extent.width;
    const double ry = cell.y / extent.height;
    const auto base = static_cast<Eigen::Index>(d_in);
    g.node_features(i, base) = cell.type == CellType::positive ? 1.0 : -1.0;
    g.node_features(i, base + 1) = rx;
    g.node_features(i, base + 2) = ry;
    g.positions(i, 0) = rx;
    g.positions(i, 1) = ry;
  }
  g.edges = std::move(edges);
  g.rebuild_adjacency();
  return g;
}

void validate_graph(const CellularGraph& graph, double max_edge_len) {
  const auto c = graph.num_nodes();
  if (static_cast<std::size_t>(graph.positions.rows()) != c) {
    throw ValidationError(graph.image_id + ": positions and features disagree on node count");
  }
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const auto [u, v] = graph.edges[e];
    if (u == v) throw ValidationError(graph.image_id + ": self-loop at node " + std::to_string(u));
    if (u > v || v >= c) throw ValidationError(graph.image_id + ": malformed edge");
    if (e > 0 && graph.edges[e - 1] >= graph.edges[e]) {
      throw ValidationError(graph.image_id + ": edge list not sorted or has duplicates");
    }
    const double dx = (graph.positions(u, 0) - graph.positions(v, 0)) * graph.extent.width;
    const double dy = (graph.positions(u, 1) - graph.positions(v, 1)) * graph.extent.height;
    if (std::hypot(dx, dy) > max_edge_len * (1.0 + 1e-9)) {
      throw ValidationError(graph.image_id + ": edge longer than " + std::to_string(max_edge_len) + " px");
    }
  }
}

}  // namespace cellsurv
