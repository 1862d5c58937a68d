#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cellsurv/cohort.hpp"
#include "cellsurv/errors.hpp"
#include "cellsurv/rng.hpp"
#include "cellsurv/tensor.hpp"

namespace cellsurv {

// A batch with no observed event has no defined Cox loss; callers resample.
class AllCensoredBatchError : public DegenerateInputError {
 public:
  using DegenerateInputError::DegenerateInputError;
};

struct RiskEntry {
  std::string patient_id;
  double risk = 0.0;
  double time = 0.0;
  Event event = Event::censored;
};

/// Risk-set membership under inclusive ties: subject i is at risk at t_j
/// whenever t_i >= t_j. Entry j lists those i in ascending order.
std::vector<std::vector<std::size_t>> ties_policy(std::span<const double> times);

/// Negative Cox partial log-likelihood with hazard exp(risk), averaged over
/// observed events; risk sets are restricted to the batch. Censored subjects
/// appear only in denominators. `risks` is n x 1.
Var cox_batch_loss(Var risks, std::span<const double> times, std::span<const Event> events);

/// Value-only version of the same loss.
double cox_batch_loss(std::span<const RiskEntry> entries);

struct BatchSpec {
  std::size_t batch_size = 128;
  // Probability that a slot is filled from the censored pool; nullopt means
  // plain uniform sampling over all subjects.
  std::optional<double> bcp_alpha = 0.1;

  void validate() const;
};

/// Draws one batch of distinct subject positions. Each slot picks the censored
/// pool with probability alpha, else the observed pool, then a uniform unused
/// member of that pool. A pool with zero probability is never used; if the
/// drawn pool is exhausted the other eligible pool fills the slot. The batch
/// size is capped by the number of eligible subjects.
std::vector<std::size_t> bcp_sample_batch(std::span<const Event> events, const BatchSpec& spec, Rng& rng);

/// Same over a cohort subset, returning patient ids.
std::vector<std::string> bcp_sample_batch(const Cohort& cohort, std::span<const std::size_t> subset,
                                          const BatchSpec& spec, Rng& rng);

}  // namespace cellsurv
