#include "cellsurv/survival.hpp"

#include <algorithm>
#include <cmath>

namespace cellsurv {

std::vector<std::vector<std::size_t>> ties_policy(std::span<const double> times) {
  std::vector<std::vector<std::size_t>> sets(times.size());
  for (std::size_t j = 0; j < times.size(); ++j) {
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] >= times[j]) sets[j].push_back(i);
    }
  }
  return sets;
}

namespace {

struct CoxTerms {
  double loss = 0.0;
  std::size_t n_observed = 0;
};

void check_inputs(std::size_t n, std::span<const double> times, std::span<const Event> events) {
  if (times.size() != n || events.size() != n) {
    throw DimensionError("cox_batch_loss: " + std::to_string(n) + " risks, " + std::to_string(times.size()) +
                         " times, " + std::to_string(events.size()) + " events");
  }
  for (double t : times) {
    if (!(t > 0.0)) throw DomainError("cox_batch_loss: survival times must be positive");
  }
  if (std::none_of(events.begin(), events.end(), [](Event e) { return e == Event::observed; })) {
    throw AllCensoredBatchError("all-censored batch: the Cox loss is undefined without an observed event");
  }
}

// log sum_{i: t_i >= t_j} exp(r_i), computed with max subtraction.
double log_risk_set_sum(const Eigen::Ref<const Eigen::VectorXd>& r, std::span<const double> times, double tj) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] >= tj) mx = std::max(mx, r(static_cast<Eigen::Index>(i)));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] >= tj) s += std::exp(r(static_cast<Eigen::Index>(i)) - mx);
  }
  return mx + std::log(s);
}

CoxTerms cox_value(const Eigen::Ref<const Eigen::VectorXd>& r, std::span<const double> times,
                   std::span<const Event> events) {
  CoxTerms out;
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (events[j] != Event::observed) continue;
    out.loss += log_risk_set_sum(r, times, times[j]) - r(static_cast<Eigen::Index>(j));
    ++out.n_observed;
  }
  out.loss /= static_cast<double>(out.n_observed);
  return out;
}

}  // namespace

Var cox_batch_loss(Var risks, std::span<const double> times, std::span<const Event> events) {
  const auto& r = risks.value();
  if (r.cols() != 1) throw DimensionError("cox_batch_loss: risks must be n x 1, got " + shape_string(r));
  const auto n = static_cast<std::size_t>(r.rows());
  check_inputs(n, times, events);
  if (!r.allFinite()) throw NumericalError("cox_batch_loss: non-finite risk");

  const Eigen::VectorXd rv = r.col(0);
  const auto terms = cox_value(rv, times, events);
  Matrix out(1, 1);
  out(0, 0) = terms.loss;

  std::vector<double> t(times.begin(), times.end());
  std::vector<Event> e(events.begin(), events.end());
  const auto ir = risks.id();
  const auto flops = static_cast<std::uint64_t>(6 * n * terms.n_observed);
  return risks.tape()->record(std::move(out), {risks}, [ir, t = std::move(t), e = std::move(e),
                                                        n_obs = terms.n_observed](Tape& tape, std::uint32_t self) {
    const double g = tape.grad(self)(0, 0) / static_cast<double>(n_obs);
    const Eigen::VectorXd rv = tape.value(ir).col(0);
    auto& gr = tape.grad_buffer(ir);
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (e[j] != Event::observed) continue;
      const double lse = log_risk_set_sum(rv, t, t[j]);
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] >= t[j]) gr(static_cast<Eigen::Index>(i), 0) += g * std::exp(rv(static_cast<Eigen::Index>(i)) - lse);
      }
      gr(static_cast<Eigen::Index>(j), 0) -= g;
    }
  }, flops);
}

double cox_batch_loss(std::span<const RiskEntry> entries) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(entries.size()));
  std::vector<double> times;
  std::vector<Event> events;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    r(static_cast<Eigen::Index>(i)) = entries[i].risk;
    times.push_back(entries[i].time);
    events.push_back(entries[i].event);
  }
  check_inputs(entries.size(), times, events);
  return cox_value(r, times, events).loss;
}

void BatchSpec::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 so a risk set has contrast");
  if (bcp_alpha) {
    if (*bcp_alpha >= 1.0) {
      throw ConfigError(
          "bcp_alpha = 1 gives all-censored batches with no explicit gradient; the Cox loss is undefined");
    }
    if (!(*bcp_alpha >= 0.0)) throw ConfigError("bcp_alpha must lie in [0, 1) or be 'uniform'");
  }
}

std::vector<std::size_t> bcp_sample_batch(std::span<const Event> events, const BatchSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<std::size_t> censored, observed;
  for (std::size_t i = 0; i < events.size(); ++i) {
    (events[i] == Event::censored ? censored : observed).push_back(i);
  }
  std::vector<std::size_t> batch;
  if (!spec.bcp_alpha) {
    std::vector<std::size_t> all(events.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto size = std::min(spec.batch_size, all.size());
    while (batch.size() < size) {
      const auto pick = rng.below(all.size());
      batch.push_back(all[pick]);
      all[pick] = all.back();
      all.pop_back();
    }
    return batch;
  }

  const double alpha = *spec.bcp_alpha;
  const bool use_censored = alpha > 0.0;
  if (observed.empty()) throw ValidationError("bcp sampling needs at least one non-censored subject");
  if (use_censored && censored.empty()) throw ValidationError("bcp sampling with alpha > 0 needs a censored subject");
  const auto eligible = observed.size() + (use_censored ? censored.size() : 0);
  const auto size = std::min(spec.batch_size, eligible);
  while (batch.size() < size) {
    bool from_censored = use_censored && rng.bernoulli(alpha);
    if (from_censored && censored.empty()) from_censored = false;
    if (!from_censored && observed.empty()) from_censored = true;
    auto& pool = from_censored ? censored : observed;
    const auto pick = rng.below(pool.size());
    batch.push_back(pool[pick]);
    pool[pick] = pool.back();
    pool.pop_back();
  }
  return batch;
}

std::vector<std::string> bcp_sample_batch(const Cohort& cohort, std::span<const std::size_t> subset,
                                          const BatchSpec& spec, Rng& rng) {
  std::vector<Event> events;
  events.reserve(subset.size());
  for (auto idx : subset) events.push_back(cohort.patients.at(idx).event);
  const auto picks = bcp_sample_batch(events, spec, rng);
  std::vector<std::string> ids;
  ids.reserve(picks.size());
  for (auto p : picks) ids.push_back(cohort.patients[subset[p]].patient_id);
  return ids;
}

}  // namespace cellsurv
