#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cellsurv/errors.hpp"
#include "cellsurv/survival.hpp"
#include "stat_checks.hpp"
#include "support.hpp"

using namespace cellsurv;

namespace {

constexpr auto obs = Event::observed;
constexpr auto cen = Event::censored;

double loss_of(const std::vector<double>& risks, const std::vector<double>& times, const std::vector<Event>& events) {
  Tape t;
  Matrix r(static_cast<Eigen::Index>(risks.size()), 1);
  for (std::size_t i = 0; i < risks.size(); ++i) r(static_cast<Eigen::Index>(i), 0) = risks[i];
  return cox_batch_loss(t.constant(r), times, events).scalar();
}

double censored_share(std::span<const std::size_t> batch, std::span<const Event> events) {
  double c = 0;
  for (auto i : batch) c += events[i] == cen ? 1.0 : 0.0;
  return c / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("cox loss examples") {
  CHECK(loss_of({0.7}, {2.0}, {obs}) == 0.0);
  CHECK(loss_of({0.0, 0.0}, {1.0, 2.0}, {obs, obs}) == doctest::Approx(std::log(2.0) / 2.0).epsilon(1e-12));
  CHECK(loss_of({0.0, 0.0}, {1.0, 2.0}, {obs, obs}) == doctest::Approx(0.34657).epsilon(1e-5));

  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const double r1 = rng.normal() * 3, r2 = rng.normal() * 3, rc = rng.normal() * 3;
    const double before = loss_of({r1, r2}, {1.0, 2.0}, {obs, obs});
    const double after = loss_of({r1, r2, rc}, {1.0, 2.0, 1.0 + rng.uniform()}, {obs, obs, cen});
    CHECK(after > before);
  }
}

TEST_CASE("all-censored batch is an explicit error") {
  CHECK_THROWS_AS(loss_of({0.1, 0.2}, {1.0, 2.0}, {cen, cen}), AllCensoredBatchError);
  std::vector<RiskEntry> entries{{"a", 0.1, 1.0, cen}};
  CHECK_THROWS_AS(cox_batch_loss(entries), AllCensoredBatchError);
}

TEST_CASE("risk sets include ties") {
  const std::vector<double> tied{1.0, 1.0, 2.0};
  const auto sets = ties_policy(tied);
  CHECK(sets[0].size() == 3);
  CHECK(sets[1].size() == 3);
  CHECK(sets[2].size() == 1);
  CHECK(sets[0] == std::vector<std::size_t>{0, 1, 2});

  const std::vector<double> equal{4.0, 4.0};
  const auto pair = ties_policy(equal);
  CHECK(pair[0] == std::vector<std::size_t>{0, 1});
  CHECK(pair[1] == std::vector<std::size_t>{0, 1});

  const std::vector<double> distinct{3.0, 1.0, 2.0, 5.0};
  const auto nested = ties_policy(distinct);
  CHECK(nested[1].size() == 4);
  CHECK(nested[2].size() == 3);
  CHECK(nested[0].size() == 2);
  CHECK(nested[3].size() == 1);
  for (auto i : nested[0]) CHECK(std::find(nested[2].begin(), nested[2].end(), i) != nested[2].end());
}

TEST_CASE("tied event times share a denominator") {
  // Both subjects at t=1 see {0, 1, 2}; the t=2 subject sees only itself.
  const double r0 = 0.3, r1 = -0.2, r2 = 0.5;
  const double denom = std::exp(r0) + std::exp(r1) + std::exp(r2);
  const double expected = (-(r0 - std::log(denom)) - (r1 - std::log(denom))) / 3.0;
  CHECK(loss_of({r0, r1, r2}, {1.0, 1.0, 2.0}, {obs, obs, obs}) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("cox loss is shift invariant and bounded below") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 30));
    std::vector<double> risks(n), times(n);
    std::vector<Event> events(n);
    for (std::size_t i = 0; i < n; ++i) {
      risks[i] = rng.normal() * 2;
      times[i] = static_cast<double>(rng.uniform_int(1, 10));
      events[i] = rng.bernoulli(0.7) ? obs : cen;
    }
    events[0] = obs;
    const double base = loss_of(risks, times, events);
    auto shifted = risks;
    const double c = rng.uniform(-50, 50);
    for (auto& r : shifted) r += c;
    CHECK(std::abs(loss_of(shifted, times, events) - base) <= 1e-10);

    CHECK(base >= 0.0);
    const auto sets = ties_policy(times);
    bool all_singleton = true;
    for (std::size_t j = 0; j < n; ++j) {
      if (events[j] == obs && sets[j].size() > 1) all_singleton = false;
    }
    CHECK((base == 0.0) == all_singleton);
  }
  CHECK(loss_of({0.2, 9.0, 1.0}, {3.0, 1.0, 2.0}, {obs, cen, cen}) == 0.0);
}

TEST_CASE("earliest event gets a negative gradient under equal risks") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = rng.uniform_int(2, 12);
    std::vector<double> times(static_cast<std::size_t>(n));
    std::vector<Event> events(static_cast<std::size_t>(n), obs);
    for (auto& t : times) t = rng.uniform(1.0, 10.0);
    ParameterStore store;
    const auto slot = store.add("r", Matrix::Zero(n, 1));
    Tape t;
    Var loss = cox_batch_loss(t.param(store, slot), times, events);
    const auto g = t.backward(loss);
    const auto earliest = std::min_element(times.begin(), times.end()) - times.begin();
    CHECK(g[slot](earliest, 0) < 0.0);
  }
}

TEST_CASE("cox loss gradient with ties and censoring matches finite differences") {
  Rng rng(4);
  ParameterStore store;
  store.add("r", testing::random_matrix(6, 1, rng));
  const std::vector<double> times{1.0, 1.0, 2.0, 3.0, 3.0, 4.0};
  const std::vector<Event> events{obs, cen, obs, obs, cen, obs};
  auto build = [&](Tape& t, const ParameterStore& s) { return cox_batch_loss(t.param(s, 0), times, events); };
  CHECK(testing::max_gradient_error(build, store) < 1e-4);
}

TEST_CASE("value-only loss agrees with the taped loss") {
  Rng rng(5);
  std::vector<RiskEntry> entries;
  std::vector<double> risks, times;
  std::vector<Event> events;
  for (int i = 0; i < 20; ++i) {
    RiskEntry e{"p" + std::to_string(i), rng.normal(), static_cast<double>(rng.uniform_int(1, 6)), rng.bernoulli(0.6) ? obs : cen};
    entries.push_back(e);
    risks.push_back(e.risk);
    times.push_back(e.time);
    events.push_back(e.event);
  }
  entries[0].event = events[0] = obs;
  CHECK(cox_batch_loss(entries) == doctest::Approx(loss_of(risks, times, events)).epsilon(1e-14));
}

TEST_CASE("loss is stable for large risks") {
  CHECK(std::isfinite(loss_of({800.0, -800.0, 750.0}, {1.0, 2.0, 3.0}, {obs, obs, cen})));
}

TEST_CASE("alpha zero draws only observed subjects") {
  const auto events = testing::event_fixture(100, 30);
  Rng rng(6);
  BatchSpec spec{32, 0.0};
  for (int b = 0; b < 200; ++b) {
    for (auto i : bcp_sample_batch(events, spec, rng)) CHECK(events[i] == obs);
  }
}

TEST_CASE("alpha 0.1 gives about ten percent censored per batch") {
  const auto events = testing::event_fixture(1000, 300);
  Rng rng(7);
  BatchSpec spec{128, 0.1};
  double total = 0;
  const int batches = 10000;
  for (int b = 0; b < batches; ++b) {
    const auto batch = bcp_sample_batch(events, spec, rng);
    REQUIRE(batch.size() == 128);
    total += censored_share(batch, events);
  }
  CHECK(std::abs(total / batches - 0.10) <= 0.01);
}

TEST_CASE("batches hold distinct subjects") {
  const auto events = testing::event_fixture(40, 10);
  Rng rng(8);
  for (double alpha : {0.0, 0.1, 0.5, 0.9}) {
    BatchSpec spec{25, alpha};
    for (int b = 0; b < 50; ++b) {
      auto batch = bcp_sample_batch(events, spec, rng);
      std::sort(batch.begin(), batch.end());
      CHECK(std::adjacent_find(batch.begin(), batch.end()) == batch.end());
    }
  }
}

TEST_CASE("alpha equal to the censored fraction matches uniform slot marginals") {
  const std::size_t n = 60;
  const auto events = testing::event_fixture(n, 12);
  const auto draws = testing::slot_draws(events, BatchSpec{16, 12.0 / 60.0}, 100000, 9);
  const double p = testing::uniform_chi_square_p(draws, n);
  INFO("chi-square p = " << p);
  CHECK(p > 0.01);

  // The test has power: a clearly wrong alpha fails it.
  const auto skewed = testing::slot_draws(events, BatchSpec{16, 0.4}, 100000, 9);
  CHECK(testing::uniform_chi_square_p(skewed, n) < 1e-6);
}

TEST_CASE("uniform sentinel is indistinguishable from uniform sampling") {
  const std::size_t n = 75;
  const auto events = testing::event_fixture(n, 20);
  const auto draws = testing::slot_draws(events, BatchSpec{30, std::nullopt}, 20000, 10);
  const double p = testing::uniform_ks_p(draws, n, 11);
  INFO("KS p = " << p);
  CHECK(p > 0.01);
  const auto skewed = testing::slot_draws(events, BatchSpec{30, 0.0}, 20000, 10);
  CHECK(testing::uniform_ks_p(skewed, n, 11) < 1e-6);
}

TEST_CASE("batch spec validation") {
  CHECK_THROWS_AS((BatchSpec{128, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((BatchSpec{128, -0.1}.validate()), ConfigError);
  CHECK_THROWS_AS((BatchSpec{1, 0.1}.validate()), ConfigError);
  CHECK_NOTHROW((BatchSpec{2, std::nullopt}.validate()));
  const auto events = testing::event_fixture(10, 3);
  Rng rng(12);
  CHECK_THROWS_AS(bcp_sample_batch(events, BatchSpec{4, 1.0}, rng), ConfigError);
}

TEST_CASE("batch size is capped and an exhausted pool falls back") {
  const auto events = testing::event_fixture(10, 3);
  Rng rng(13);
  // alpha = 0 makes the censored pool ineligible: only 7 subjects can appear.
  CHECK(bcp_sample_batch(events, BatchSpec{128, 0.0}, rng).size() == 7);
  // With alpha > 0 both pools are eligible and fill the batch.
  auto all = bcp_sample_batch(events, BatchSpec{128, 0.5}, rng);
  CHECK(all.size() == 10);
  CHECK(bcp_sample_batch(events, BatchSpec{128, std::nullopt}, rng).size() == 10);
}

TEST_CASE("sampler is deterministic in the seed") {
  const auto events = testing::event_fixture(50, 10);
  Rng a(14), b(14);
  for (int k = 0; k < 10; ++k) CHECK(bcp_sample_batch(events, BatchSpec{16, 0.1}, a) == bcp_sample_batch(events, BatchSpec{16, 0.1}, b));
}
