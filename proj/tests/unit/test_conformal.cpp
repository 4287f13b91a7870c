#include <doctest.h>

#include <cmath>
#include <limits>

#include "../common/coverage_sim.hpp"
#include "sohtl/conformal.hpp"
#include "sohtl/error.hpp"

using namespace sohtl;
using namespace sohtl::conformal;

namespace {

// Returns the last SOH of each window, i.e. a persistence forecast.
Predictor identity_on_last_soh() {
  return [](std::span<const std::vector<data::Step>> ws) {
    std::vector<double> out;
    for (const auto& w : ws) out.push_back(w.back()[data::kSoh]);
    return out;
  };
}

Predictor constant(double v) {
  return [v](std::span<const std::vector<data::Step>> ws) { return std::vector<double>(ws.size(), v); };
}

std::vector<data::Step> flat_window(double soh, std::size_t w = 4) {
  return std::vector<data::Step>(w, data::Step{soh, 1.0, 1.0});
}

}  // namespace

TEST_CASE("nonconformity scores") {
  const std::vector<double> p{0.9, 0.8};
  const std::vector<double> y{1.0, 0.7};
  const auto s = scores_from_residuals(p, y);
  REQUIRE(s.q() == 2);
  CHECK(std::abs(s.sorted[0] - 0.1) < 1e-12);
  CHECK(std::abs(s.sorted[1] - 0.1) < 1e-12);
  CHECK(std::isinf(s.sorted[2]));

  const auto perfect = scores_from_residuals(y, y);
  CHECK(perfect.sorted[0] == 0.0);
  CHECK(perfect.sorted[1] == 0.0);

  CHECK_THROWS_AS(scores_from_residuals(std::vector<double>{0.1}, y), ContractError);
  CHECK_THROWS_AS(scores_from_residuals(std::vector<double>{}, std::vector<double>{}), ContractError);
  CHECK_THROWS_AS(scores_from_residuals(std::vector<double>{std::nan("")}, std::vector<double>{1.0}), NumericError);

  std::vector<data::WindowSample> calib(3);
  for (std::size_t i = 0; i < calib.size(); ++i) {
    calib[i].window = flat_window(0.9);
    calib[i].label = 0.9 - 0.01 * static_cast<double>(i);
  }
  const auto ns = nonconformity_scores(identity_on_last_soh(), calib);
  REQUIRE(ns.q() == 3);
  CHECK(ns.sorted[2] == doctest::Approx(0.02));
}

TEST_CASE("quantile_index") {
  CHECK(quantile_index(9, 0.1) == 9);
  CHECK(quantile_index(19, 0.1) == 18);
  CHECK(quantile_index(99, 0.1) == 90);
  CHECK(quantile_index(1, 0.1) == 2);
  CHECK(quantile_index(50, 0.1) == 46);
  CHECK_THROWS_AS(quantile_index(9, 0.0), ContractError);
  CHECK_THROWS_AS(quantile_index(9, 1.0), ContractError);
  CHECK_THROWS_AS(quantile_index(0, 0.1), ContractError);
  // Larger alpha never selects a larger index.
  for (std::size_t q : {5u, 17u, 64u})
    for (double a = 0.05; a < 0.95; a += 0.05) CHECK(quantile_index(q, a + 0.05) <= quantile_index(q, a));
}

TEST_CASE("epsilon_hat") {
  std::vector<double> p(9, 0.0), y;
  for (int i = 1; i <= 9; ++i) y.push_back(0.1 * i);
  const auto e = epsilon_hat(scores_from_residuals(p, y), 0.1);
  CHECK(e.value == doctest::Approx(0.9));
  CHECK(e.p == 9);
  CHECK_FALSE(e.infinite);

  const std::vector<double> zero(9, 0.0);
  CHECK(epsilon_hat(scores_from_residuals(zero, zero), 0.1).value == 0.0);

  const auto one = epsilon_hat(scores_from_residuals(std::vector<double>{0.0}, std::vector<double>{0.3}), 0.1);
  CHECK(one.infinite);
  CHECK(std::isinf(one.value));

  // Adding a score below the current quantile moves it by at most one rank.
  std::vector<double> yy = y;
  yy.push_back(0.05);
  std::vector<double> pp(10, 0.0);
  const auto s10 = scores_from_residuals(pp, yy);
  const auto e10 = epsilon_hat(s10, 0.1);
  CHECK(e10.p == quantile_index(10, 0.1));
  CHECK(e10.value <= e.value);
  CHECK(e10.value >= s10.sorted[e.p - 2]);
}

TEST_CASE("prediction intervals") {
  const auto iv = make_interval(0.95, 0.02);
  CHECK(iv.lower == doctest::Approx(0.93));
  CHECK(iv.upper == doctest::Approx(0.97));
  const auto point = make_interval(0.95, 0.0);
  CHECK(point.lower == point.upper);
  CHECK_THROWS_AS(make_interval(0.9, -0.1), ContractError);
  const auto pi = predict_interval(constant(0.8), flat_window(0.9), 0.05);
  CHECK(pi.center == 0.8);
  CHECK(pi.upper == doctest::Approx(0.85));
}

TEST_CASE("empirical_coverage") {
  std::vector<PredictionInterval> ivs{make_interval(0.5, 0.5), make_interval(0.5, 0.5)};
  CHECK(empirical_coverage(ivs, std::vector<double>{0.5, 1.5}) == 0.5);
  CHECK(empirical_coverage(ivs, std::vector<double>{0.0, 1.0}) == 1.0);
  CHECK_THROWS_AS(empirical_coverage(ivs, std::vector<double>{0.5}), ContractError);
}

TEST_CASE("coverage of exchangeable residuals") {
  const double c = testutil::mean_cp_coverage(50, 0.1, 500, 1);
  CHECK(c >= 0.88);
  CHECK(c <= 0.95);
}

TEST_CASE("rollout_forecast") {
  const std::vector<Rates> rates(5, Rates{1.0, 1.0});
  SUBCASE("zero steps") {
    const auto f = rollout_forecast(identity_on_last_soh(), flat_window(0.9), rates, 0, 0.01);
    CHECK(f.intervals.empty());
    CHECK(f.point.empty());
  }
  SUBCASE("fixed point") {
    const auto f = rollout_forecast(identity_on_last_soh(), flat_window(0.93), rates, 6, 0.01);
    REQUIRE(f.point.size() == 6);
    for (std::size_t k = 0; k < 6; ++k) {
      CHECK(f.point[k] == 0.93);
      CHECK(f.intervals[k].lower == doctest::Approx(0.92));
      CHECK(f.intervals[k].step == k);
    }
    CHECK_FALSE(f.diverged);
  }
  SUBCASE("predictions are fed back with the future rates") {
    std::vector<Rates> r{{2.0, 3.0}, {4.0, 5.0}};
    std::vector<std::vector<data::Step>> seen;
    Predictor spy = [&seen](std::span<const std::vector<data::Step>> ws) {
      seen.push_back(ws.front());
      return std::vector<double>{ws.front().back()[data::kSoh] - 0.01};
    };
    const auto f = rollout_forecast(spy, flat_window(0.9, 3), r, 3, 0.0);
    REQUIRE(seen.size() == 3);
    CHECK(seen[1].back()[data::kSoh] == doctest::Approx(0.89));
    CHECK(seen[1].back()[data::kRateDis] == 2.0);
    CHECK(seen[2].back()[data::kRateCh] == 5.0);
    CHECK(seen[2].size() == 3);
    CHECK(f.point[2] == doctest::Approx(0.87));
  }
  SUBCASE("out-of-range predictions are clamped when fed back") {
    Predictor up = [](std::span<const std::vector<data::Step>> ws) {
      return std::vector<double>{ws.front().back()[data::kSoh] + 0.5};
    };
    const auto f = rollout_forecast(up, flat_window(0.9), rates, 3, 0.0);
    CHECK(f.diverged);
    CHECK(f.point[0] == doctest::Approx(1.4));
    CHECK(f.point[1] == doctest::Approx(1.55));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(rollout_forecast(identity_on_last_soh(), flat_window(0.9), rates, 7, 0.0), ContractError);
    CHECK_THROWS_AS(rollout_forecast(constant(std::nan("")), flat_window(0.9), rates, 2, 0.0), NumericError);
  }
}
