#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "spectree/errors.hpp"
#include "spectree/quartet.hpp"
#include "spectree/tree_model.hpp"
#include "test_support.hpp"

using namespace spectree;

namespace {

QuartetSpectra scalar_quartet(std::array<double, 6> sv, double delta) {
  QuartetSpectra q;
  q.labels = {0, 1, 2, 3};
  q.k = 1;
  for (int s = 0; s < 6; ++s) {
    q.sv[s] = {sv[s]};
    q.delta[s] = delta;
  }
  return q;
}

// Straight re-implementation of the decision rule with plain products.
QuartetResult reference_test(const QuartetSpectra& q) {
  const std::array<std::array<int, 4>, 3> parts{{{0, 1, 2, 3}, {0, 2, 1, 3}, {0, 3, 1, 2}}};
  int hits = 0;
  QuartetResult out;
  for (const auto& p : parts) {
    const int a = pair_slot(p[0], p[1]);
    const int b = pair_slot(p[2], p[3]);
    const int c1 = pair_slot(p[0], p[2]);
    const int c2 = pair_slot(p[1], p[3]);
    const int c3 = pair_slot(p[0], p[3]);
    const int c4 = pair_slot(p[1], p[2]);
    long double lo = 1, up1 = 1, up2 = 1;
    for (std::size_t s = 0; s < q.k; ++s) {
      lo *= std::max(0.0, q.sv[a][s] - q.delta[a]) * std::max(0.0, q.sv[b][s] - q.delta[b]);
      up1 *= (q.sv[c1][s] + q.delta[c1]) * (q.sv[c2][s] + q.delta[c2]);
      up2 *= (q.sv[c3][s] + q.delta[c3]) * (q.sv[c4][s] + q.delta[c4]);
    }
    const long double up = std::max(up1, up2);
    if (lo > up * (1 + 1e-9L)) {
      ++hits;
      out = Pairing::of(LeafPair::of(q.labels[p[0]], q.labels[p[1]]),
                        LeafPair::of(q.labels[p[2]], q.labels[p[3]]));
    }
  }
  return hits == 1 ? out : std::nullopt;
}

QuartetSpectra population_spectra(const LinearTreeModel& model, std::array<NodeId, 4> labels) {
  const auto pm = population_moments(model);
  QuartetInput in;
  in.labels = labels;
  in.k = model.k;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      in.sigma_hat[pair_slot(i, j)] = pm.pair(labels[i], labels[j]);
      in.delta[pair_slot(i, j)] = 0.0;
    }
  }
  return QuartetSpectra::from_input(in);
}

}  // namespace

TEST(PairSlot, Layout) {
  EXPECT_EQ(pair_slot(0, 1), 0);
  EXPECT_EQ(pair_slot(0, 2), 1);
  EXPECT_EQ(pair_slot(0, 3), 2);
  EXPECT_EQ(pair_slot(1, 2), 3);
  EXPECT_EQ(pair_slot(1, 3), 4);
  EXPECT_EQ(pair_slot(2, 3), 5);
  EXPECT_EQ(pair_slot(3, 1), 4);
}

TEST(Pairing, CanonicalFormAndSplits) {
  const auto p = Pairing::of(LeafPair::of(9, 4), LeafPair::of(2, 7));
  EXPECT_EQ(p.first, LeafPair::of(2, 7));
  EXPECT_EQ(p.second, LeafPair::of(4, 9));
  EXPECT_TRUE(p.splits(2, 4));
  EXPECT_FALSE(p.splits(4, 9));
  EXPECT_EQ(p.to_string(), "{{2,7},{4,9}}");
}

TEST(QuartetTest, ClearCherryStructure) {
  const auto q = scalar_quartet({0.8, 0.3, 0.3, 0.3, 0.3, 0.7}, 0.05);
  const auto r = spectral_quartet_test(q);
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(*r, Pairing::of(LeafPair::of(0, 1), LeafPair::of(2, 3)));
}

TEST(QuartetTest, HugeWidthsAbstain) {
  const auto q = scalar_quartet({0.8, 0.3, 0.3, 0.3, 0.3, 0.7}, 8.0);
  EXPECT_FALSE(spectral_quartet_test(q).has_value());
  const auto inf = scalar_quartet({0.8, 0.3, 0.3, 0.3, 0.3, 0.7}, std::numeric_limits<double>::infinity());
  EXPECT_FALSE(spectral_quartet_test(inf).has_value());
}

TEST(QuartetTest, ComparesAgainstTheLargerCrossing) {
  // {0,2}|{1,3} beats the (03)(12) crossing but not (01)(23); only {0,1}|{2,3}
  // clears both crossings.
  const auto q = scalar_quartet({0.6, 0.5, 0.1, 0.1, 0.5, 0.6}, 0.0);
  const auto ev = evaluate_quartet(q);
  EXPECT_TRUE(ev.partitions[0].satisfied);
  EXPECT_FALSE(ev.partitions[1].satisfied);
  EXPECT_FALSE(ev.partitions[2].satisfied);
  ASSERT_TRUE(ev.result.has_value());
  EXPECT_EQ(*ev.result, Pairing::of(LeafPair::of(0, 1), LeafPair::of(2, 3)));
}

TEST(QuartetTest, ExactTiesAbstain) {
  const auto q = scalar_quartet({0.5, 0.5, 0.5, 0.5, 0.5, 0.5}, 0.0);
  EXPECT_FALSE(spectral_quartet_test(q).has_value());
}

TEST(QuartetTest, UnderflowingProductsStayOrdered) {
  QuartetSpectra q;
  q.labels = {0, 1, 2, 3};
  q.k = 40;
  const std::array<double, 6> base{1e-8, 1e-9, 1e-9, 1e-9, 1e-9, 1e-8};
  for (int s = 0; s < 6; ++s) {
    q.sv[s].assign(40, base[s]);
    q.delta[s] = 0.0;
  }
  const auto r = spectral_quartet_test(q);
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(*r, Pairing::of(LeafPair::of(0, 1), LeafPair::of(2, 3)));
}

TEST(QuartetTest, AgreesWithReferenceOnRandomSpectra) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::uniform_real_distribution<double> w(0.0, 0.2);
  for (int trial = 0; trial < 2000; ++trial) {
    QuartetSpectra q;
    q.labels = {3, 8, 1, 6};
    q.k = 1 + static_cast<std::size_t>(trial % 3);
    for (int s = 0; s < 6; ++s) {
      std::vector<double> v(q.k);
      for (auto& x : v) x = u(rng);
      std::sort(v.rbegin(), v.rend());
      q.sv[s] = v;
      q.delta[s] = w(rng);
    }
    EXPECT_EQ(spectral_quartet_test(q), reference_test(q)) << "trial " << trial;
  }
}

TEST(QuartetTest, InvariantUnderLabelPermutation) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    QuartetInput in;
    in.labels = {10, 20, 30, 40};
    in.k = 2;
    for (int s = 0; s < 6; ++s) {
      in.sigma_hat[s] = spectree::testing::random_matrix(rng, 3, 3);
      in.delta[s] = 0.1 * u(rng);
    }
    const auto base = spectral_quartet_test(in);
    std::array<int, 4> perm{0, 1, 2, 3};
    while (std::next_permutation(perm.begin(), perm.end())) {
      QuartetInput p;
      p.k = in.k;
      for (int i = 0; i < 4; ++i) p.labels[i] = in.labels[perm[i]];
      for (int i = 0; i < 4; ++i) {
        for (int j = i + 1; j < 4; ++j) {
          const int src = pair_slot(perm[i], perm[j]);
          const bool flip = perm[i] > perm[j];
          p.sigma_hat[pair_slot(i, j)] = flip ? Matrix(in.sigma_hat[src].transpose()) : in.sigma_hat[src];
          p.delta[pair_slot(i, j)] = in.delta[src];
        }
      }
      EXPECT_EQ(spectral_quartet_test(p), base);
    }
  }
}

TEST(QuartetTest, PopulationCherriesAndStar) {
  using spectree::testing::star;
  using spectree::testing::two_cherry_quartet;
  const auto cherry = attach_parameters(two_cherry_quartet(), Family::gaussian, 2, 3, {}, 17);
  const auto r = spectral_quartet_test(population_spectra(cherry, {0, 1, 2, 3}));
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(*r, Pairing::of(LeafPair::of(0, 1), LeafPair::of(2, 3)));
  const auto g = quartet_geometry(population_spectra(cherry, {0, 1, 2, 3}));
  EXPECT_LT(g.rho_squared, 1.0);

  // All three pairings tie on a star.
  const auto st = attach_parameters(star(4), Family::gaussian, 2, 3, {}, 5);
  const auto sq = population_spectra(st, {1, 2, 3, 4});
  EXPECT_FALSE(spectral_quartet_test(sq).has_value());
  const auto ev = evaluate_quartet(sq);
  const double l01 = FactorProduct::of(sq.sv[pair_slot(0, 1)]).log_value + FactorProduct::of(sq.sv[pair_slot(2, 3)]).log_value;
  const double l02 = FactorProduct::of(sq.sv[pair_slot(0, 2)]).log_value + FactorProduct::of(sq.sv[pair_slot(1, 3)]).log_value;
  const double l03 = FactorProduct::of(sq.sv[pair_slot(0, 3)]).log_value + FactorProduct::of(sq.sv[pair_slot(1, 2)]).log_value;
  EXPECT_NEAR(l01, l02, 1e-10);
  EXPECT_NEAR(l01, l03, 1e-10);
  for (const auto& p : ev.partitions) EXPECT_FALSE(p.satisfied);
}

TEST(QuartetInput, Validation) {
  QuartetInput in;
  in.labels = {0, 1, 1, 3};
  in.k = 1;
  for (auto& m : in.sigma_hat) m = Matrix::Identity(2, 2);
  EXPECT_THROW(in.validate(), DomainError);
  in.labels = {0, 1, 2, 3};
  in.delta[2] = -1.0;
  EXPECT_THROW(in.validate(), DomainError);
  in.delta[2] = 0.0;
  in.k = 3;
  EXPECT_THROW(in.validate(), DimensionError);
}

TEST(DeltaBernstein, FrozenValuesAndScaling) {
  ConfidenceParams p{1.0, 1.0, 1.0, 1.0, 10.0, 1000, std::nullopt};
  EXPECT_NEAR(delta_bernstein(p), 0.1447546, 1e-7);

  p = {2.0, 3.0, 1.5, 1.0, 10.0, 1000, std::nullopt};
  EXPECT_NEAR(delta_bernstein(p), 0.215, 1e-12);

  const double first = std::sqrt(2.0 * p.B * p.t / 1000.0);
  const double second = p.M_i * p.M_j * p.t / 3000.0;
  p.N = 4000;
  EXPECT_NEAR(delta_bernstein(p), first / 2 + second / 4, 1e-15);
}

TEST(DeltaBernstein, SecondImplementation) {
  const double t = 4.0 * std::log(4.0 * 50.0 * 10.0 / 0.1);
  const ConfidenceParams p{2.0, 3.0, 2.0, 50.0, t, 100000, std::nullopt};
  const double n = 1e5;
  const double expected = std::pow(2.0 * 2.0 * t / n, 0.5) + (3.0 * 2.0) * t / (3.0 * n);
  EXPECT_NEAR(delta_bernstein(p), expected, 1e-15);
}

TEST(DeltaBernstein, DomainErrors) {
  ConfidenceParams p{0.0, 1.0, 1.0, 1.0, 1.0, 10, std::nullopt};
  EXPECT_THROW(delta_bernstein(p), DomainError);
  p.B = 1.0;
  p.d_bar = 0.5;
  EXPECT_THROW(delta_bernstein(p), DomainError);
  p.d_bar = 1.0;
  p.delta_conf = 0.2;
  EXPECT_THROW(delta_bernstein(p), DomainError);
  p.delta_conf = 0.05;
  EXPECT_NO_THROW(delta_bernstein(p));
}

TEST(TFactor, Quartet) {
  EXPECT_NEAR(t_factor_quartet(10.0, 0.05), 13.138375355188773, 1e-12);
  // 24 d_bar / delta = e^5.
  EXPECT_NEAR(t_factor_quartet(1.0, 24.0 / std::exp(5.0)), 1.55 * 5.0, 1e-12);
  EXPECT_LT(t_factor_quartet(2.0, 0.05), t_factor_quartet(2.5, 0.05));
  EXPECT_THROW(t_factor_quartet(0.5, 0.05), DomainError);
  EXPECT_THROW(t_factor_quartet(1.0, 0.2), DomainError);
  EXPECT_THROW(t_factor_quartet(1.0, 0.0), DomainError);
}

TEST(TFactor, Tree) {
  EXPECT_NEAR(t_factor_tree(8.0, 10, 0.1), 32.283624355151275, 1e-12);
  // 4 d_bar n / eta = e^3.
  EXPECT_NEAR(t_factor_tree(1.0, 3, 12.0 / std::exp(3.0)), 12.0, 1e-12);
  EXPECT_NEAR(t_factor_tree(3.0, 7, 0.05) - t_factor_tree(3.0, 7, 0.1), 4.0 * std::log(2.0), 1e-12);
  EXPECT_THROW(t_factor_tree(1.0, 2, 0.1), DomainError);
  EXPECT_THROW(t_factor_tree(1.0, 5, 1.0), DomainError);
}

TEST(DeltaDiscrete, Values) {
  EXPECT_DOUBLE_EQ(delta_discrete(1, 1.0), 2.0);
  EXPECT_NEAR(delta_discrete(100, 4.0), 0.3, 1e-15);
  EXPECT_NEAR(delta_discrete(500, 4.0), 0.13416407864998736, 1e-15);
  EXPECT_THROW(delta_discrete(0, 1.0), DomainError);
  EXPECT_THROW(delta_discrete(10, 0.0), DomainError);
}

TEST(MaxDelta, FullRank) {
  EXPECT_NEAR(max_delta_full_rank(1, 0.5, 0.8), 0.1, 1e-15);
  EXPECT_NEAR(max_delta_full_rank(2, 0.9, 0.9), 0.00625, 1e-15);
  EXPECT_NEAR(max_delta_full_rank(2, 0.9, 0.8), 0.005555555555555558, 1e-15);
  EXPECT_NEAR(max_delta_full_rank(2, 0.3, 0.8), 0.05, 1e-15);
  EXPECT_THROW(max_delta_full_rank(2, 1.0, 0.5), DomainError);
}

TEST(MaxDelta, RankDeficient) {
  EXPECT_NEAR(max_delta_rank_r(2, 1, 0.5, 0.5), 0.03125, 1e-15);
  EXPECT_NEAR(max_delta_rank_r(3, 1, 8.0, 1.0), 1.0 / 24.0, 1e-15);
  EXPECT_NEAR(max_delta_rank_r(3, 1, 1e4, 0.6), 0.004242640687119285, 1e-15);
  EXPECT_THROW(max_delta_rank_r(3, 3, 1.0, 1.0), DomainError);
}

TEST(EstimatePlugins, MatchesExplicitLoops) {
  std::mt19937_64 rng(21);
  const Matrix xi = spectree::testing::random_matrix(rng, 200, 3);
  const Matrix xj = spectree::testing::random_matrix(rng, 200, 2);
  Matrix wi = Matrix::Zero(3, 3), wj = Matrix::Zero(2, 2), cross = Matrix::Zero(3, 2);
  double fourth = 0, mi = 0, mj = 0;
  for (Eigen::Index n = 0; n < 200; ++n) {
    const Vector a = xi.row(n).transpose();
    const Vector b = xj.row(n).transpose();
    wi += b.squaredNorm() * a * a.transpose() / 200.0;
    wj += a.squaredNorm() * b * b.transpose() / 200.0;
    cross += a * b.transpose() / 200.0;
    fourth += a.squaredNorm() * b.squaredNorm() / 200.0;
    mi = std::max(mi, a.norm());
    mj = std::max(mj, b.norm());
  }
  Eigen::SelfAdjointEigenSolver<Matrix> ei(wi), ej(wj);
  const double B = std::max(ei.eigenvalues().maxCoeff(), ej.eigenvalues().maxCoeff());
  const auto p = estimate_plugins(xi, xj);
  EXPECT_NEAR(p.B, B, 1e-10);
  EXPECT_NEAR(p.M_i, mi, 1e-12);
  EXPECT_NEAR(p.M_j, mj, 1e-12);
  EXPECT_NEAR(p.d_bar_raw, (fourth - cross.squaredNorm()) / B, 1e-9);
  EXPECT_GE(p.d_bar, 1.0);
}

TEST(StrictlyGreater, TieTolerance) {
  const std::vector<double> a{1.0};
  const std::vector<double> b{1.0 + 1e-12};
  const std::vector<double> c{1.01};
  EXPECT_FALSE(strictly_greater(FactorProduct::of(b), FactorProduct::of(a)));
  EXPECT_TRUE(strictly_greater(FactorProduct::of(c), FactorProduct::of(a)));
  EXPECT_FALSE(strictly_greater(FactorProduct::of(a), FactorProduct::of(c)));
}
