#include "cellsurv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cellsurv/errors.hpp"

namespace cellsurv {

double ConcordanceCounts::c_index() const {
  if (admissible == 0) throw DegenerateInputError("concordance index: no admissible pairs");
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) / static_cast<double>(admissible);
}

namespace {

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Count of entries with index < i.
  std::uint64_t prefix(std::size_t i) const {
    std::uint64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::uint64_t> tree_;
};

}  // namespace

ConcordanceCounts concordance_counts(std::span<const SurvivalOutcome> outcomes) {
  const auto n = outcomes.size();
  std::vector<double> sorted_risks;
  sorted_risks.reserve(n);
  for (const auto& o : outcomes) sorted_risks.push_back(o.risk);
  std::sort(sorted_risks.begin(), sorted_risks.end());
  sorted_risks.erase(std::unique(sorted_risks.begin(), sorted_risks.end()), sorted_risks.end());
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(sorted_risks.begin(), sorted_risks.end(), r) -
                                    sorted_risks.begin());
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return outcomes[a].time > outcomes[b].time; });

  ConcordanceCounts counts;
  Fenwick later(sorted_risks.size());
  std::uint64_t inserted = 0;
  std::size_t g = 0;
  while (g < n) {
    std::size_t end = g;
    while (end < n && outcomes[order[end]].time == outcomes[order[g]].time) ++end;
    for (std::size_t k = g; k < end; ++k) {
      const auto& o = outcomes[order[k]];
      if (o.event != Event::observed) continue;
      const auto r = rank_of(o.risk);
      const auto below = later.prefix(r);
      const auto equal = later.prefix(r + 1) - below;
      counts.admissible += inserted;
      counts.concordant += below;
      counts.tied += equal;
    }
    for (std::size_t k = g; k < end; ++k) {
      later.add(rank_of(outcomes[order[k]].risk));
      ++inserted;
    }
    g = end;
  }
  return counts;
}

double concordance_index(std::span<const SurvivalOutcome> outcomes) { return concordance_counts(outcomes).c_index(); }

KMCurve kaplan_meier(std::span<const SurvivalOutcome> outcomes) {
  if (outcomes.empty()) throw DegenerateInputError("kaplan_meier: empty group");
  std::vector<std::size_t> order(outcomes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return outcomes[a].time < outcomes[b].time; });

  KMCurve curve;
  double s = 1.0;
  std::size_t at_risk = outcomes.size();
  std::size_t g = 0;
  while (g < order.size()) {
    const double t = outcomes[order[g]].time;
    std::size_t end = g;
    std::size_t deaths = 0;
    while (end < order.size() && outcomes[order[end]].time == t) {
      deaths += outcomes[order[end]].event == Event::observed ? 1 : 0;
      ++end;
    }
    if (deaths > 0) {
      s *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
      curve.event_times.push_back(t);
      curve.survival_prob.push_back(s);
      curve.at_risk.push_back(at_risk);
    }
    at_risk -= end - g;
    g = end;
  }
  return curve;
}

std::optional<double> KMCurve::median_survival() const {
  for (std::size_t i = 0; i < event_times.size(); ++i) {
    if (survival_prob[i] <= 0.5) return event_times[i];
  }
  return std::nullopt;
}

LogRankResult logrank_test(std::span<const SurvivalOutcome> group_a, std::span<const SurvivalOutcome> group_b) {
  if (group_a.empty() || group_b.empty()) throw DegenerateInputError("logrank_test: both groups must be nonempty");
  struct Row {
    double time;
    bool in_a;
    bool event;
  };
  std::vector<Row> rows;
  for (const auto& o : group_a) rows.push_back({o.time, true, o.event == Event::observed});
  for (const auto& o : group_b) rows.push_back({o.time, false, o.event == Event::observed});
  if (std::none_of(rows.begin(), rows.end(), [](const Row& r) { return r.event; })) {
    throw DegenerateInputError("logrank_test: no observed events");
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.time < b.time; });

  double n = static_cast<double>(rows.size());
  double n_a = static_cast<double>(group_a.size());
  double observed_minus_expected = 0.0;
  double variance = 0.0;
  std::size_t g = 0;
  while (g < rows.size()) {
    std::size_t end = g;
    double d = 0.0, d_a = 0.0, leaving = 0.0, leaving_a = 0.0;
    while (end < rows.size() && rows[end].time == rows[g].time) {
      d += rows[end].event;
      d_a += rows[end].event && rows[end].in_a;
      leaving += 1.0;
      leaving_a += rows[end].in_a;
      ++end;
    }
    if (d > 0.0) {
      observed_minus_expected += d_a - d * n_a / n;
      if (n > 1.0) variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
    }
    n -= leaving;
    n_a -= leaving_a;
    g = end;
  }
  LogRankResult out;
  if (variance <= 0.0) return out;
  out.chi_square = observed_minus_expected * observed_minus_expected / variance;
  out.p_value = chi_square_sf(out.chi_square, 1.0);
  return out;
}

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw DomainError("regularized_gamma_q: need a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  constexpr int kMaxIter = 1000;
  constexpr double kEps = 1e-16;
  const double log_prefactor = -x + a * std::log(x) - std::lgamma(a);
  if (x < a + 1.0) {
    // Series for P(a, x).
    double term = 1.0 / a;
    double total = term;
    for (int n = 1; n < kMaxIter; ++n) {
      term *= x / (a + n);
      total += term;
      if (std::abs(term) < std::abs(total) * kEps) break;
    }
    return 1.0 - total * std::exp(log_prefactor);
  }
  // Continued fraction for Q(a, x), modified Lentz.
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(log_prefactor) * h;
}

double chi_square_sf(double x, double dof) {
  if (!(dof > 0.0)) throw DomainError("chi_square_sf: degrees of freedom must be positive");
  if (x <= 0.0) return 1.0;
  return regularized_gamma_q(0.5 * dof, 0.5 * x);
}

Stratification stratify_by_median(std::span<const double> risks) {
  if (risks.size() < 2) throw DegenerateInputError("stratify_by_median: needs at least 2 patients");
  std::vector<double> sorted(risks.begin(), risks.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  Stratification s;
  s.median_risk = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  for (std::size_t i = 0; i < risks.size(); ++i) (risks[i] <= s.median_risk ? s.low : s.high).push_back(i);
  return s;
}

Stratification stratify_by_median(std::span<const SurvivalOutcome> outcomes) {
  std::vector<double> risks;
  risks.reserve(outcomes.size());
  for (const auto& o : outcomes) risks.push_back(o.risk);
  auto s = stratify_by_median(risks);
  auto median_of = [&](const std::vector<std::size_t>& group) -> std::optional<double> {
    if (group.empty()) return std::nullopt;
    std::vector<SurvivalOutcome> sub;
    for (auto i : group) sub.push_back(outcomes[i]);
    return kaplan_meier(sub).median_survival();
  };
  s.median_survival_low = median_of(s.low);
  s.median_survival_high = median_of(s.high);
  return s;
}

}  // namespace cellsurv
