#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "test_support.hpp"
#include "trajmine/errors.hpp"
#include "trajmine/flow.hpp"

namespace trajmine {
namespace {

const double kLn2Pi = std::log(2.0 * std::numbers::pi);

// Seeded init plus random biases and log-scales so no layer is trivial.
FlowModel random_model(std::size_t dim, std::uint64_t seed, std::size_t layers = 4, std::size_t hidden = 16) {
  FlowModel m(dim, {layers, hidden});
  init_parameters(m, seed);
  std::mt19937_64 rng(seed ^ 0xabcdef);
  std::normal_distribution<double> g(0.0, 0.3);
  for (std::size_t l = 0; l < layers; ++l) {
    auto c = m.coupling(l);
    for (auto& b : c.b1) b = g(rng);
    for (auto& b : c.b3) b = g(rng);
  }
  for (auto& s : m.log_scale()) s = g(rng);
  return m;
}

// log |det| by partial-pivot elimination.
double log_abs_det(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  double out = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    out += std::log(std::abs(a[c][c]));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return out;
}

double numeric_log_det(const FlowModel& m, const std::vector<double>& v, double h = 1e-5) {
  const std::size_t d = v.size();
  std::vector<std::vector<double>> jac(d, std::vector<double>(d));
  for (std::size_t j = 0; j < d; ++j) {
    auto plus = v, minus = v;
    plus[j] += h;
    minus[j] -= h;
    const auto bp = flow_forward(m, plus).latent;
    const auto bm = flow_forward(m, minus).latent;
    for (std::size_t i = 0; i < d; ++i) jac[i][j] = (bp[i] - bm[i]) / (2 * h);
  }
  return log_abs_det(jac);
}

TEST(Coupling, SplitIsUnevenForOddDimensions) {
  const auto e = coupling_split(5, Parity::even);
  EXPECT_EQ(e.fixed_size, 3u);
  EXPECT_EQ(e.moved_begin, 3u);
  EXPECT_EQ(e.moved_size, 2u);
  const auto o = coupling_split(5, Parity::odd);
  EXPECT_EQ(o.fixed_begin, 3u);
  EXPECT_EQ(o.moved_begin, 0u);
  EXPECT_EQ(o.moved_size, 3u);
}

TEST(Coupling, ZeroNetIsIdentity) {
  const FlowModel m(6, {4, 8});
  const std::vector<double> v{1, -2, 3, 0.5, -0.25, 7};
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(coupling_forward(m, l, v), v);
    EXPECT_EQ(coupling_inverse(m, l, v), v);
  }
}

TEST(Coupling, ConstantNetShiftsMovedHalf) {
  FlowModel m(2, {1, 4});
  m.coupling(0).b3[0] = 0.75;
  const std::vector<double> v{1.5, -2.0};
  EXPECT_EQ(coupling_forward(m, 0, v), (std::vector<double>{1.5, -1.25}));
  EXPECT_EQ(coupling_inverse(m, 0, std::vector<double>{1.5, -1.25}), v);
}

TEST(Coupling, RoundTripProperty) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng() % 9;
    const auto m = random_model(d, rng(), 2, 8);
    const auto v = test::random_vector(rng, d, 2.0);
    for (std::size_t l = 0; l < 2; ++l) {
      const auto back = coupling_inverse(m, l, coupling_forward(m, l, v));
      for (std::size_t i = 0; i < d; ++i) ASSERT_NEAR(back[i], v[i], 1e-12);
    }
  }
}

TEST(Coupling, DimensionMismatchThrows) {
  const FlowModel m(4, {2, 4});
  EXPECT_THROW(coupling_forward(m, 0, std::vector<double>{1, 2, 3}), ArgumentError);
  EXPECT_THROW(coupling_inverse(m, 0, std::vector<double>{1, 2, 3, 4, 5}), ArgumentError);
  EXPECT_THROW(flow_forward(m, std::vector<double>{1}), ArgumentError);
}

TEST(FlowForward, IdentityFlow) {
  const FlowModel m(4, {4, 8});
  const std::vector<double> v{0.1, 0.2, -3, 4};
  const auto f = flow_forward(m, v);
  EXPECT_EQ(f.latent, v);
  EXPECT_EQ(f.log_det, 0.0);
}

TEST(FlowForward, ScalingOnly) {
  FlowModel m(2, {0, 0});
  m.log_scale()[0] = std::log(2.0);
  m.log_scale()[1] = std::log(2.0);
  const auto f = flow_forward(m, std::vector<double>{1, 1});
  EXPECT_NEAR(f.latent[0], 2.0, 1e-15);
  EXPECT_NEAR(f.latent[1], 2.0, 1e-15);
  EXPECT_NEAR(f.log_det, 2 * std::log(2.0), 1e-15);
}

TEST(FlowForward, LogDetMatchesNumericalJacobian) {
  std::mt19937_64 rng(12);
  for (const std::size_t d : {2u, 3u, 4u, 5u, 6u}) {
    const auto m = random_model(d, 100 + d);
    const auto v = test::random_vector(rng, d);
    const double analytic = flow_forward(m, v).log_det;
    const double numeric = numeric_log_det(m, v);
    EXPECT_LT(std::abs(std::exp(analytic - numeric) - 1.0), 1e-6) << "d=" << d;
  }
}

TEST(FlowForward, NonFiniteInputIsNumericError) {
  const FlowModel m(2, {2, 4});
  EXPECT_THROW(flow_forward(m, std::vector<double>{NAN, 0}), NumericError);
  EXPECT_THROW(log_prob(m, std::vector<double>{0, INFINITY}), NumericError);
}

TEST(FlowProperties, InvertibilityAndVolumePreservation) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng() % 15;
    const auto m = random_model(d, rng());
    const auto v = test::random_vector(rng, d, 3.0);
    const auto f = flow_forward(m, v);
    const auto back = flow_inverse(m, f.latent);
    for (std::size_t i = 0; i < d; ++i) ASSERT_NEAR(back[i], v[i], 1e-9);
    double sum_s = 0.0;
    for (const double s : m.log_scale()) sum_s += s;
    ASSERT_EQ(f.log_det, sum_s);

    auto other = random_model(d, rng());
    std::copy(m.log_scale().begin(), m.log_scale().end(), other.log_scale().begin());
    ASSERT_EQ(flow_forward(other, v).log_det, f.log_det);
  }
}

TEST(LogProb, ClosedForms) {
  EXPECT_NEAR(log_prob(FlowModel(2, {4, 8}), std::vector<double>{0, 0}), -1.837877, 1e-6);
  EXPECT_NEAR(log_prob(FlowModel(2, {4, 8}), std::vector<double>{0, 0}), -kLn2Pi, 1e-15);
  EXPECT_NEAR(log_prob(FlowModel(1, {0, 0}), std::vector<double>{1}), -1.418939, 1e-6);
}

TEST(LogProb, BruteForceChangeOfVariables) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = random_model(3, 40 + trial);
    const auto v = test::random_vector(rng, 3);
    const auto b = flow_forward(m, v).latent;
    double sq = 0.0;
    for (const double x : b) sq += x * x;
    const double expected = -1.5 * kLn2Pi - 0.5 * sq + numeric_log_det(m, v);
    EXPECT_NEAR(log_prob(m, v), expected, 1e-5);
  }
}

TEST(LogProb, RowsAgreeWithSingleEvaluation) {
  const auto m = random_model(7, 8);
  std::mt19937_64 rng(1);
  Matrix rows(300, 7);
  for (auto& x : rows.values) x = std::normal_distribution<double>(0, 1)(rng);
  const auto lp = log_prob_rows(m, rows);
  ASSERT_EQ(lp.size(), 300u);
  for (std::size_t i = 0; i < rows.rows; ++i) EXPECT_NEAR(lp[i], log_prob(m, rows.row(i)), 1e-12);
}

TEST(Sample, IdentityFlowIsStandardNormal) {
  const FlowModel m(2, {2, 4});
  const auto s = sample(m, 100000, 17);
  for (std::size_t j = 0; j < 2; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < s.rows; ++i) mean += s(i, j);
    EXPECT_LT(std::abs(mean / static_cast<double>(s.rows)), 0.02);
  }
}

TEST(Sample, ForwardRecoversLatentDraws) {
  const auto m = random_model(5, 21);
  const auto latent = sample(FlowModel(5, {0, 0}), 50, 9);
  const auto s = sample(m, 50, 9);
  for (std::size_t i = 0; i < s.rows; ++i) {
    const auto b = flow_forward(m, s.row(i)).latent;
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(b[j], latent(i, j), 1e-10);
  }
}

TEST(Sample, Deterministic) {
  const auto m = random_model(4, 2);
  EXPECT_EQ(sample(m, 20, 5), sample(m, 20, 5));
  EXPECT_NE(sample(m, 20, 5), sample(m, 20, 6));
  EXPECT_THROW(sample(m, 0, 5), ArgumentError);
}

TEST(ModelFileTest, RoundTrip) {
  auto m = random_model(7, 11);
  m.set_standardizer({{1, 2, 3, 4, 5, 6, 7}, {0.5, 1, 1, 2, 1e-6, 1, 3}});
  const auto bytes = serialize_model(m, "cafe");
  EXPECT_EQ(bytes.rfind("TRAJMINE-FLOW-1", 0), 0u);
  const auto file = deserialize_model(bytes);
  EXPECT_EQ(file.config_hash, "cafe");
  EXPECT_TRUE(file.model == m);
  EXPECT_EQ(serialize_model(file.model, "cafe"), bytes);
  EXPECT_THROW(deserialize_model("TRAJMINE-FLOW-0\n{}"), DataError);
  EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() - 3)), DataError);
}

TEST(ModelParameters, PathNamesLocation) {
  const FlowModel m(4, {2, 3});
  EXPECT_EQ(m.parameter_path(0).rfind("coupling[0].w1", 0), 0u);
  EXPECT_EQ(m.parameter_path(m.parameter_count() - 1).rfind("log_scale[3]", 0), 0u) << m.parameter_path(m.parameter_count() - 1);
}

}  // namespace
}  // namespace trajmine
