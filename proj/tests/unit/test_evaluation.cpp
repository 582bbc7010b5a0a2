#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <set>

#include "test_support.hpp"
#include "trajmine/errors.hpp"
#include "trajmine/evaluation.hpp"
#include "trajmine/synthgen.hpp"

namespace trajmine {
namespace {

std::vector<Position> line(std::size_t n, Position p0, Position v, std::size_t offset = 0) {
  std::vector<Position> out;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k + offset) * kFramePeriod;
    out.push_back({p0.x + v.x * t, p0.y + v.y * t});
  }
  return out;
}

TEST(Kalman, ExactConstantVelocity) {
  const auto history = line(30, {1.8, 10.0}, {0.3, 22.0});
  const auto truth = line(50, {1.8, 10.0}, {0.3, 22.0}, 30);
  const auto pred = kalman_cv_predict(history, 50, KalmanConfig{});
  ASSERT_EQ(pred.size(), 50u);
  for (std::size_t k = 0; k < 50; ++k) {
    EXPECT_LT(std::hypot(pred[k].x - truth[k].x, pred[k].y - truth[k].y), 1e-6) << "frame " << k;
  }
}

TEST(Kalman, ConstantAccelerationLeavesLargeError) {
  const auto track = test::kinematic_track(1, 0, 80, 5.4, 0.0, 10.0, 2, 2.0);
  const auto ex = test::example_from_track(track);
  const auto pred = kalman_cv_predict(ex, KalmanConfig{});
  EXPECT_GE(terminal_error(pred, positions(ex.future_frames)), 15.0);
}

TEST(Kalman, StationaryStaysPut) {
  const auto history = line(30, {3.0, 42.0}, {0.0, 0.0});
  for (const auto& p : kalman_cv_predict(history, 50, KalmanConfig{})) {
    EXPECT_NEAR(p.x, 3.0, 1e-3);
    EXPECT_NEAR(p.y, 42.0, 1e-3);
  }
}

TEST(Kalman, RandomCvMotionProperty) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Position p0{u(rng), u(rng) * 10};
    const Position v{u(rng) / 10, u(rng)};
    KalmanConfig cfg;
    cfg.process_noise_accel_std = 0.1 + std::abs(u(rng));
    cfg.measurement_noise_std = 0.05 + std::abs(u(rng)) / 10;
    const auto pred = kalman_cv_predict(line(30, p0, v), 50, cfg);
    const auto truth = line(50, p0, v, 30);
    for (std::size_t k = 0; k < 50; ++k) ASSERT_LT(std::hypot(pred[k].x - truth[k].x, pred[k].y - truth[k].y), 1e-6);
  }
}

TEST(Kalman, LostPositiveDefinitenessIsNumericError) {
  KalmanConfig cfg;
  cfg.measurement_noise_std = 1e200;
  EXPECT_THROW(kalman_cv_predict(line(30, {0, 0}, {0, 20}), 50, cfg), NumericError);
}

TEST(Kalman, InvalidInputs) {
  KalmanConfig bad;
  bad.process_noise_accel_std = 0.0;
  EXPECT_THROW(kalman_cv_predict(line(30, {0, 0}, {0, 1}), 50, bad), ConfigError);
  EXPECT_THROW(kalman_cv_predict(line(1, {0, 0}, {0, 1}), 50, KalmanConfig{}), ArgumentError);
  Example short_ex;
  short_ex.history_frames.resize(10);
  EXPECT_THROW(kalman_cv_predict(short_ex, KalmanConfig{}), ArgumentError);
}

TEST(Rmse, SpecExamples) {
  const auto truth = line(50, {0, 0}, {0, 20});
  EXPECT_EQ(rmse5(truth, truth), 0.0);
  auto shifted = truth;
  for (auto& p : shifted) p.x += 3.0, p.y += 4.0;
  EXPECT_NEAR(rmse5(shifted, truth), 5.0, 1e-12);
  EXPECT_NEAR(horizon_rmse(shifted, truth), 5.0, 1e-12);
  const std::vector<double> errs{3.0, 4.0};
  const std::vector<std::size_t> both{0, 1};
  EXPECT_NEAR(subset_rmse(errs, both), 3.5355, 1e-4);
  EXPECT_THROW(rmse5(truth, std::span(truth).first(49)), ArgumentError);
  EXPECT_THROW(subset_rmse(errs, std::vector<std::size_t>{}), MetricError);
}

TEST(Rmse, HorizonAveragedDiffersFromTerminal) {
  const auto truth = line(50, {0, 0}, {0, 20});
  auto drift = truth;
  for (std::size_t k = 0; k < 50; ++k) drift[k].y += 0.1 * static_cast<double>(k + 1);
  EXPECT_NEAR(terminal_error(drift, truth), 5.0, 1e-12);
  double sq = 0.0;
  for (std::size_t k = 1; k <= 50; ++k) sq += 0.01 * static_cast<double>(k * k);
  EXPECT_NEAR(horizon_rmse(drift, truth), std::sqrt(sq / 50.0), 1e-12);
}

TEST(Rmse, PermutationInvariance) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<double> errs(n);
    for (auto& e : errs) e = std::abs(std::normal_distribution<double>(0, 5)(rng));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const double a = subset_rmse(errs, idx);
    std::shuffle(idx.begin(), idx.end(), rng);
    EXPECT_NEAR(subset_rmse(errs, idx), a, 1e-12);
    EXPECT_NEAR(dataset_rmse(errs), a, 1e-12);
  }
}

ScenarioSpec quiet(ScenarioKind kind, std::uint64_t seed) {
  ScenarioSpec spec;
  spec.kind = kind;
  spec.noise_std = 0.0;
  spec.seed = seed;
  return spec;
}

TEST(ReferenceLabels, CarFollowTiesTakeFirstIndices) {
  std::vector<Example> examples;
  for (std::uint64_t s = 0; s < 10; ++s) {
    examples.push_back(test::example_from_track(gen_scenario(quiet(ScenarioKind::car_follow, s)).tracks[0]));
  }
  const auto errs = per_example_errors(examples, KalmanConfig{});
  for (const double e : errs) EXPECT_LT(e, 1e-6);
  const auto labels = reference_labels(examples, 0.3, KalmanConfig{});
  EXPECT_EQ(labels.size(), 3u);
  std::vector<double> zeroed(10, 0.0);
  EXPECT_EQ(reference_labels(zeroed, 0.3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(ReferenceLabels, BrakeIsTheWorstExample) {
  std::vector<Example> examples;
  for (std::uint64_t s = 0; s < 11; ++s) {
    const auto kind = s == 4 ? ScenarioKind::sudden_brake : ScenarioKind::car_follow;
    examples.push_back(test::example_from_track(gen_scenario(quiet(kind, s)).tracks[0]));
  }
  EXPECT_EQ(reference_labels(examples, 1.0 / 11.0, KalmanConfig{}), (std::vector<std::size_t>{4}));
}

TEST(ReferenceLabels, FullRatioAndNesting) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    std::vector<double> errs(n);
    for (auto& e : errs) e = std::floor(std::abs(std::normal_distribution<double>(0, 4)(rng)));
    auto all = reference_labels(errs, 1.0);
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(n);
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(all, expected);
    std::vector<std::size_t> prev;
    for (const double r : {0.05, 0.10, 0.15, 0.20}) {
      const auto cur = reference_labels(errs, r);
      EXPECT_EQ(cur.size(), mined_count(n, r));
      EXPECT_TRUE(std::equal(prev.begin(), prev.end(), cur.begin()));
      prev = cur;
    }
  }
}

TEST(DeltaErr, KnownValues) {
  EXPECT_NEAR(delta_err(9.356, 4.496), 1.081, 5e-4);
  EXPECT_NEAR(delta_err(6.697, 4.496), 0.4895, 5e-4);
  EXPECT_EQ(delta_err(4.496, 4.496), 0.0);
  EXPECT_THROW(delta_err(1.0, 0.0), MetricError);
}

// Err and printed change for D_X, D_Z, D_YX, random, reference at r = 20/15/10/5 %; Err(D) = 4.496.
struct ErrCell {
  double err;
  double printed_pct;
};
const ErrCell kErrGrid[4][5] = {
    {{5.398, 20.1}, {6.620, 47.2}, {6.697, 49.0}, {4.410, -1.90}, {6.679, 48.5}},
    {{5.643, 25.5}, {7.165, 59.4}, {7.333, 63.1}, {4.318, -4.0}, {7.011, 55.9}},
    {{5.470, 21.7}, {7.919, 76.1}, {8.017, 78.3}, {4.301, -4.3}, {7.834, 74.2}},
    {{6.500, 44.6}, {9.233, 105.3}, {9.356, 108.1}, {4.303, -4.3}, {8.934, 98.7}},
};

TEST(DeltaErr, ReferenceGridArithmetic) {
  for (const auto& row : kErrGrid) {
    for (const auto& cell : row) {
      EXPECT_LE(std::abs(100.0 * delta_err(cell.err, 4.496) - cell.printed_pct), 0.15) << cell.err;
    }
  }
}

TEST(Coverage, Cases) {
  const std::vector<std::size_t> a{1, 5, 9};
  EXPECT_EQ(coverage(a, a), 1.0);
  EXPECT_EQ(coverage(a, std::vector<std::size_t>{0, 2}), 0.0);
  std::vector<std::size_t> target(100), mined(100);
  std::iota(target.begin(), target.end(), 0);
  std::iota(mined.begin(), mined.end(), 71);  // overlap 71..99
  EXPECT_EQ(coverage(mined, target), 0.29);
  EXPECT_THROW(coverage(a, std::vector<std::size_t>{}), MetricError);
}

TEST(RandomBaseline, SeededAndFull) {
  EXPECT_EQ(random_baseline(500, 0.1, 3), random_baseline(500, 0.1, 3));
  EXPECT_NE(random_baseline(500, 0.1, 3), random_baseline(500, 0.1, 4));
  const auto all = random_baseline(40, 1.0, 9);
  std::vector<std::size_t> expected(40);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(all, expected);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 1000;
    const double r = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    const auto s = random_baseline(n, r, rng());
    ASSERT_EQ(s.size(), mined_count(n, r));
    ASSERT_TRUE(std::is_sorted(s.begin(), s.end()));
    ASSERT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), s.size());
    if (!s.empty()) ASSERT_LT(s.back(), n);
  }
}

std::vector<double> synthetic_errors(double rare_rate) {
  const auto data = gen_dataset(2000, rare_rate, 1);
  const auto examples = window_examples(data.tracks, 50, data.target_ids());
  return per_example_errors(examples, KalmanConfig{});
}

// Mean and standard error over 100 seeded random subsets of f(subset RMSE / full RMSE).
template <typename F>
std::pair<double, double> random_subset_stat(const std::vector<double>& errs, double r, F f) {
  const double full = dataset_rmse(errs);
  std::vector<double> d;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    d.push_back(f(subset_rmse(errs, random_baseline(errs.size(), r, seed)) / full));
  }
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / 100.0;
  double var = 0.0;
  for (const double x : d) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / 99.0) / 10.0};
}

TEST(RandomBaseline, MeanDeltaErrNearZero) {
  const auto errs = synthetic_errors(0.0);
  for (const double r : {0.05, 0.10, 0.15, 0.20}) {
    const auto [mean, se] = random_subset_stat(errs, r, [](double ratio) { return ratio - 1.0; });
    EXPECT_LE(std::abs(mean), 2.0 * se) << "r=" << r << " mean=" << mean << " se=" << se;
  }
}

TEST(RandomBaseline, MeanSquaredErrorRatioUnbiasedWithRareEvents) {
  const auto errs = synthetic_errors(0.05);
  for (const double r : {0.05, 0.10, 0.15, 0.20}) {
    const auto [mean, se] = random_subset_stat(errs, r, [](double ratio) { return ratio * ratio - 1.0; });
    EXPECT_LE(std::abs(mean), 2.0 * se) << "r=" << r << " mean=" << mean << " se=" << se;
  }
}

ScoreTable ramp_scores(std::size_t n) {
  ScoreTable t;
  for (std::size_t i = 0; i < n; ++i) {
    t.c_x.push_back(-static_cast<double>((i * 7) % n));
    t.c_z.push_back(-static_cast<double>((i * 3) % n));
  }
  return with_lambda(t, 0.5);
}

TEST(BuildReport, FullSubsetsAreIdentities) {
  const std::size_t n = 40;
  const auto scores = ramp_scores(n);
  std::vector<double> errs(n);
  for (std::size_t i = 0; i < n; ++i) errs[i] = 0.5 + static_cast<double>(i % 9);
  const auto rep = build_report(scores, mine_all(scores, 1.0), errs, 1.0);
  EXPECT_EQ(rep.subsets.size(), 5u);
  for (const auto& s : rep.subsets) {
    EXPECT_EQ(s.size, n);
    EXPECT_NEAR(s.delta_err, 0.0, 1e-12) << s.name;
    EXPECT_EQ(s.cov_ref, 1.0) << s.name;
  }
}

TEST(BuildReport, SubsetMetricsMatchDefinitions) {
  const std::size_t n = 200;
  const auto scores = ramp_scores(n);
  std::mt19937_64 rng(2);
  std::vector<double> errs(n);
  for (auto& e : errs) e = std::abs(std::normal_distribution<double>(3, 2)(rng));
  std::vector<std::uint8_t> rare(n, 0);
  for (std::size_t i = 0; i < n; i += 10) rare[i] = 1;
  ReportOptions opts;
  opts.rare_flags = rare;
  opts.external_errors = errs;
  opts.random_seed = 5;
  const auto subsets = mine_all(scores, 0.1);
  const auto rep = build_report(scores, subsets, errs, 0.1, opts);
  const double full = dataset_rmse(errs);
  EXPECT_EQ(rep.err_full, full);
  const auto ref = reference_labels(errs, 0.1);
  EXPECT_EQ(rep.subset("reference").cov_ref, 1.0);
  const auto& yx = rep.subset("D_YX");
  EXPECT_EQ(yx.err, subset_rmse(errs, subsets.d_yx.indices));
  EXPECT_EQ(yx.delta_err, (yx.err - full) / full);
  EXPECT_EQ(yx.cov_ref, coverage(subsets.d_yx.indices, ref));
  EXPECT_EQ(*yx.cov_model, yx.cov_ref);
  std::size_t rare_in = 0;
  for (const auto i : subsets.d_yx.indices) rare_in += rare[i];
  EXPECT_EQ(*yx.rare_fraction, static_cast<double>(rare_in) / 20.0);
  EXPECT_EQ(rep.subset("random").err, subset_rmse(errs, random_baseline(n, 0.1, 5)));
  EXPECT_EQ(rep.random_mean.seeds, 20u);
  EXPECT_THROW(rep.subset("D_Q"), ArgumentError);

  const auto j = nlohmann::json::parse(report_json(rep, "h1"));
  EXPECT_EQ(j["config_hash"], "h1");
  EXPECT_EQ(j["err_full"], full);
  const auto csv = per_example_csv(rep, scores, "h1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(n + 2));
}

TEST(Histogram, CountsCoverEveryScore) {
  const auto scores = ramp_scores(97);
  const auto bins = score_histogram(scores, 12);
  ASSERT_EQ(bins.size(), 12u);
  std::size_t x = 0, z = 0, yx = 0;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    x += bins[b].count_x;
    z += bins[b].count_z;
    yx += bins[b].count_yx;
    EXPECT_LT(bins[b].lower, bins[b].upper);
    if (b > 0) EXPECT_EQ(bins[b].lower, bins[b - 1].upper);
  }
  EXPECT_EQ(x, 97u);
  EXPECT_EQ(z, 97u);
  EXPECT_EQ(yx, 97u);
  EXPECT_EQ(histogram_csv(bins, "h").rfind("# config_hash=h\nbin_lower,bin_upper,count_C_x,count_C_z,count_C_yx\n", 0),
            0u);
}

TEST(ExternalErrors, ParseAndValidate) {
  const auto e = parse_external_errors("example_index,error_m\n1,2.5\n0,1.0\n", 2);
  EXPECT_EQ(e, (std::vector<double>{1.0, 2.5}));
  EXPECT_THROW(parse_external_errors("idx,err\n0,1\n", 1), SchemaError);
  EXPECT_THROW(parse_external_errors("example_index,error_m\n0,1\n0,2\n", 2), DataError);
  EXPECT_THROW(parse_external_errors("example_index,error_m\n0,1\n", 2), DataError);
  EXPECT_THROW(parse_external_errors("example_index,error_m\n0,1\n5,1\n", 2), DataError);
  EXPECT_THROW(parse_external_errors("example_index,error_m\n0,-1\n1,1\n", 2), DataError);
  EXPECT_THROW(parse_external_errors("example_index,error_m\n0,nan\n1,1\n", 2), DataError);
}

}  // namespace
}  // namespace trajmine
