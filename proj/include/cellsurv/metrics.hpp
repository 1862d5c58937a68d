#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cellsurv/cohort.hpp"

namespace cellsurv {

struct SurvivalOutcome {
  double time = 0.0;
  Event event = Event::censored;
  double risk = 0.0;
};

/// Harrell's counts. A pair (i, j) is admissible when t_i < t_j and i had an
/// observed event; it is concordant when risk_i > risk_j and tied on equal risks.
struct ConcordanceCounts {
  std::uint64_t admissible = 0;
  std::uint64_t concordant = 0;
  std::uint64_t tied = 0;

  double c_index() const;
};

/// O(n log n) via a Fenwick tree over risk ranks.
ConcordanceCounts concordance_counts(std::span<const SurvivalOutcome> outcomes);
/// Throws DegenerateInputError when no pair is admissible.
double concordance_index(std::span<const SurvivalOutcome> outcomes);

struct KMCurve {
  std::vector<double> event_times;     // distinct observed-event times, increasing
  std::vector<double> survival_prob;   // S just after each event time
  std::vector<std::size_t> at_risk;    // subjects at risk just before each event time

  /// First event time with S <= 0.5, if the curve gets there.
  std::optional<double> median_survival() const;
};

KMCurve kaplan_meier(std::span<const SurvivalOutcome> outcomes);

struct LogRankResult {
  double chi_square = 0.0;
  double p_value = 1.0;
};

/// Two-group log-rank test with hypergeometric variance; p from chi-square(1).
LogRankResult logrank_test(std::span<const SurvivalOutcome> group_a, std::span<const SurvivalOutcome> group_b);

/// Regularized upper incomplete gamma Q(a, x).
double regularized_gamma_q(double a, double x);
/// Upper tail of the chi-square distribution.
double chi_square_sf(double x, double dof);

struct Stratification {
  double median_risk = 0.0;
  std::vector<std::size_t> low;   // risk <= median
  std::vector<std::size_t> high;  // risk > median
  std::optional<double> median_survival_low;
  std::optional<double> median_survival_high;
};

/// Median split; subjects exactly at the median go to the low-risk group.
Stratification stratify_by_median(std::span<const double> risks);
/// Same split, plus per-group KM median survival.
Stratification stratify_by_median(std::span<const SurvivalOutcome> outcomes);

}  // namespace cellsurv
