#pragma once

// Distributional checks on the batch sampler, shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "cellsurv/metrics.hpp"
#include "cellsurv/rng.hpp"
#include "cellsurv/survival.hpp"

namespace testing {

inline std::vector<cellsurv::Event> event_fixture(std::size_t n, std::size_t censored) {
  std::vector<cellsurv::Event> events(n, cellsurv::Event::observed);
  // Spread the censored subjects so pool membership is not contiguous.
  for (std::size_t k = 0; k < censored; ++k) events[(k * n) / censored] = cellsurv::Event::censored;
  return events;
}

// One slot per batch keeps the draws independent. The slot position cycles so
// every position is covered.
inline std::vector<std::size_t> slot_draws(std::span<const cellsurv::Event> events, const cellsurv::BatchSpec& spec,
                                           std::size_t draws, std::uint64_t seed) {
  cellsurv::Rng rng(seed);
  std::vector<std::size_t> out;
  out.reserve(draws);
  for (std::size_t k = 0; k < draws; ++k) {
    const auto batch = cellsurv::bcp_sample_batch(events, spec, rng);
    out.push_back(batch[k % batch.size()]);
  }
  return out;
}

// Pearson chi-square p-value of per-subject counts against the uniform distribution.
inline double uniform_chi_square_p(std::span<const std::size_t> draws, std::size_t n) {
  std::vector<double> counts(n, 0.0);
  for (auto d : draws) counts[d] += 1.0;
  const double expected = static_cast<double>(draws.size()) / static_cast<double>(n);
  double stat = 0.0;
  for (double c : counts) stat += (c - expected) * (c - expected) / expected;
  return cellsurv::chi_square_sf(stat, static_cast<double>(n - 1));
}

// Asymptotic Kolmogorov tail with the Stephens small-sample correction.
inline double kolmogorov_p(double d, std::size_t m) {
  const double sn = std::sqrt(static_cast<double>(m));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 1.0 : -1.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// KS test of subject indices against discrete uniform. Adding U(0,1) jitter to
// a uniform index gives an exactly continuous U(0, n) variable.
inline double uniform_ks_p(std::span<const std::size_t> draws, std::size_t n, std::uint64_t seed) {
  cellsurv::Rng rng(seed);
  std::vector<double> u;
  u.reserve(draws.size());
  for (auto d : draws) u.push_back((static_cast<double>(d) + rng.uniform()) / static_cast<double>(n));
  std::sort(u.begin(), u.end());
  const double m = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    d = std::max(d, std::max(static_cast<double>(i + 1) / m - u[i], u[i] - static_cast<double>(i) / m));
  }
  return kolmogorov_p(d, u.size());
}

}  // namespace testing
