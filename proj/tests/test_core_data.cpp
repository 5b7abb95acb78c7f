#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "overlap/core_data.hpp"

using namespace overlap;

namespace {

Dataset line_data(std::vector<double> xs, std::vector<int> z, std::vector<double> y, std::vector<double> pi) {
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) d.x(static_cast<Eigen::Index>(i), 0) = xs[i];
  d.z = std::move(z);
  d.y = std::move(y);
  d.pi = std::move(pi);
  d.sigma = broadcast_sigma(d.y.size(), 1.0);
  return d;
}

}  // namespace

TEST(OverlapMeasure, Examples) {
  EXPECT_DOUBLE_EQ(overlap_measure(0.5), 0.5);
  EXPECT_DOUBLE_EQ(overlap_measure(0.02), 0.02);
  EXPECT_NEAR(overlap_measure(0.97), 0.03, 1e-15);
  EXPECT_THROW(overlap_measure(1.2), InputError);
}

TEST(OverlapMeasure, SymmetricInPi) {
  for (double p = 0.0; p <= 1.0; p += 0.01) EXPECT_NEAR(overlap_measure(p), overlap_measure(1.0 - p), 1e-15);
}

TEST(Partition, Examples) {
  auto d = line_data({0, 1}, {0, 1}, {0, 0}, {0.02, 0.40});
  auto p = partition(d, 0.05);
  EXPECT_EQ(p.s, (std::vector<bool>{false, true}));
  EXPECT_DOUBLE_EQ(p.w[0], 0.5);
  EXPECT_DOUBLE_EQ(p.w[1], 0.0);

  auto one = partition(line_data({0}, {1}, {0}, {0.5}), 0.05);
  EXPECT_TRUE(one.all_overlap());
  EXPECT_DOUBLE_EQ(one.w[0], 0.0);

  auto all = partition(line_data({0, 1, 2}, {0, 1, 0}, {0, 0, 0}, {0.01, 0.01, 0.01}), 0.05);
  for (double w : all.w) EXPECT_DOUBLE_EQ(w, 1.0 / 3.0);
}

TEST(Partition, ThresholdCountsAsOverlap) {
  auto p = partition(line_data({0}, {1}, {0}, {0.05}), 0.05);
  EXPECT_TRUE(p.s[0]);
}

TEST(Partition, RejectsBadEpsilon) {
  auto d = line_data({0}, {1}, {0}, {0.5});
  EXPECT_THROW(partition(d, 0.0), InputError);
  EXPECT_THROW(partition(d, 0.5), InputError);
}

TEST(Partition, MonotoneInEpsilon) {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> U(0, 1);
  Dataset d = line_data({}, {}, {}, {});
  d.x.resize(200, 1);
  for (int i = 0; i < 200; ++i) {
    d.x(i, 0) = U(g);
    d.pi.push_back(U(g));
    d.z.push_back(0);
    d.y.push_back(0);
  }
  d.sigma = broadcast_sigma(200, 1.0);
  for (double e1 = 0.01; e1 < 0.49; e1 += 0.03) {
    auto a = partition(d, e1);
    auto b = partition(d, std::min(e1 + 0.02, 0.49));
    for (int i = 0; i < 200; ++i)
      if (!a.s[i]) EXPECT_FALSE(b.s[i]);
  }
}

TEST(Decompose, Examples) {
  OverlapPartition p;
  p.s = {true, false};
  auto a = decompose_estimand(std::vector<double>{1, 1}, p);
  EXPECT_DOUBLE_EQ(a.tau, 1.0);
  EXPECT_DOUBLE_EQ(a.tau_plus, 0.5);
  EXPECT_DOUBLE_EQ(a.tau_minus, 0.5);

  p.s = {true, false, true};
  auto z = decompose_estimand(std::vector<double>{0, 0, 0}, p);
  EXPECT_EQ(z.tau, 0.0);
  EXPECT_EQ(z.tau_plus, 0.0);

  p.s = {true, true};
  auto c = decompose_estimand(std::vector<double>{2, -2}, p);
  EXPECT_EQ(c.tau_minus, 0.0);
  EXPECT_EQ(c.tau_plus, 0.0);
}

TEST(Decompose, SumsToTau) {
  std::mt19937_64 g(5);
  std::normal_distribution<double> N(0, 3);
  std::bernoulli_distribution B(0.4);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> t(37);
    OverlapPartition p;
    double direct = 0.0;
    for (auto& v : t) {
      v = N(g);
      direct += v / 37.0;
      p.s.push_back(B(g));
    }
    auto d = decompose_estimand(t, p);
    EXPECT_NEAR(d.tau_plus + d.tau_minus, direct, 1e-12 * std::max(1.0, std::abs(direct)));
  }
}

TEST(NoiseSd, ZeroWhenArmsConstant) {
  auto d = line_data({0, 1, 2, 3, 4, 5}, {0, 0, 0, 1, 1, 1}, {2, 2, 2, -1, -1, -1}, {.5, .5, .5, .5, .5, .5});
  EXPECT_DOUBLE_EQ(estimate_noise_sd(d, 2), 0.0);
}

TEST(NoiseSd, SingleUnitContribution) {
  // unit 0 (y=3) has same-arm neighbours y=1, 1; those three units see each other only
  auto d = line_data({0, 1, 2, 100, 101, 102}, {0, 0, 0, 1, 1, 1}, {3, 1, 1, 0, 0, 0}, {.5, .5, .5, .5, .5, .5});
  // unit 0: (2/3)(3-1)^2 = 8/3. unit 1: neighbours 0 (d=1) and 2 (d=1): mean 2 -> (2/3)(1-2)^2 = 2/3.
  // unit 2: neighbours 1 (d=1), 0 (d=2): mean 2 -> 2/3. Arm 1 contributes 0.
  const double expected = std::sqrt((8.0 / 3.0 + 2.0 / 3.0 + 2.0 / 3.0) / 6.0);
  EXPECT_NEAR(estimate_noise_sd(d, 2), expected, 1e-15);
}

TEST(NoiseSd, ShiftInvariant) {
  std::mt19937_64 g(7);
  std::normal_distribution<double> N(0, 1);
  Dataset d = line_data({}, {}, {}, {});
  d.x.resize(40, 2);
  for (int i = 0; i < 40; ++i) {
    d.x(i, 0) = N(g);
    d.x(i, 1) = N(g);
    d.z.push_back(i % 2);
    d.y.push_back(N(g));
    d.pi.push_back(0.5);
  }
  d.sigma = broadcast_sigma(40, 1.0);
  const double a = estimate_noise_sd(d, 2);
  for (auto& y : d.y) y += 17.25;
  EXPECT_NEAR(estimate_noise_sd(d, 2), a, 1e-12);
}

TEST(NoiseSd, TooFewUnits) {
  auto d = line_data({0, 1, 2, 3}, {0, 0, 1, 1}, {0, 0, 0, 0}, {.5, .5, .5, .5});
  EXPECT_THROW(estimate_noise_sd(d, 2), InputError);
}

TEST(Csv, RoundTrip) {
  auto d = line_data({0.1, 0.2, 0.3}, {0, 1, 1}, {1.5, -2, 0.25}, {0.5, 0.02, 0.9});
  d.sigma = {0.1, 0.2, 0.3};
  std::stringstream ss;
  write_dataset_csv(ss, d);
  Dataset r = read_dataset_csv(ss);
  ASSERT_EQ(r.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(r.x(static_cast<Eigen::Index>(i), 0), d.x(static_cast<Eigen::Index>(i), 0));
    EXPECT_DOUBLE_EQ(r.y[i], d.y[i]);
    EXPECT_EQ(r.z[i], d.z[i]);
    EXPECT_DOUBLE_EQ(r.pi[i], d.pi[i]);
    EXPECT_DOUBLE_EQ(r.sigma[i], d.sigma[i]);
  }
}

TEST(Csv, MissingSigmaIsEstimated) {
  std::stringstream ss("x1,y,z,pi\n0,3,0,0.5\n1,1,0,0.5\n2,1,0,0.5\n100,0,1,0.5\n101,0,1,0.5\n102,0,1,0.5\n");
  Dataset r = read_dataset_csv(ss, 2);
  const double expected = std::sqrt((8.0 / 3.0 + 2.0 / 3.0 + 2.0 / 3.0) / 6.0);
  for (double s : r.sigma) EXPECT_NEAR(s, expected, 1e-15);
}

TEST(Csv, SchemaErrors) {
  auto bad = [](const std::string& text) {
    std::stringstream ss(text);
    try {
      read_dataset_csv(ss);
    } catch (const InputError& e) {
      return std::string(e.what()).rfind("schema", 0) == 0;
    }
    return false;
  };
  EXPECT_TRUE(bad(""));
  EXPECT_TRUE(bad("x1,y,pi\n0,1,0.5\n"));
  EXPECT_TRUE(bad("x1,y,z,pi,sigma\n0,1,2,0.5,1\n"));
  EXPECT_TRUE(bad("x1,y,z,pi,sigma\n0,abc,1,0.5,1\n"));
  EXPECT_TRUE(bad("x1,y,z,pi,sigma\n0,1,1,0.5\n"));
  EXPECT_TRUE(bad("x2,y,z,pi,sigma\n0,1,1,0.5,1\n"));
  EXPECT_TRUE(bad("x1,y,z,pi,sigma,extra\n0,1,1,0.5,1,2\n"));
}

TEST(Dataset, ValidateRejectsBadValues) {
  auto d = line_data({0, 1}, {0, 1}, {0, 0}, {0.5, 0.5});
  d.pi[0] = 1.5;
  EXPECT_THROW(d.validate(), InputError);
  d.pi[0] = 0.5;
  d.sigma[1] = 0.0;
  EXPECT_THROW(d.validate(), InputError);
  d.sigma[1] = 1.0;
  d.z[1] = 2;
  EXPECT_THROW(d.validate(), InputError);
}
