#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "opal/margin_engine.hpp"

using namespace opal;

namespace {

struct Fixture {
  LinearScorer scorer;
  Ladder ladder;
  PairSample sample;
};

// One prompt, five features per side, a ladder touching every operator kind.
Fixture random_fixture(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> pos(0.3, 2.0);
  Fixture f;
  f.scorer.theta.resize(5);
  for (auto& v : f.scorer.theta) v = 0.5 * n(rng);
  for (Side side : {Side::pos, Side::neg}) {
    std::vector<double> x(5);
    for (auto& v : x) v = n(rng);
    f.scorer.features[{"p", side}] = x;
  }
  f.scorer.offsets[{"p", Side::pos}] = 0.1 * n(rng);
  f.ladder.ops = {AdditivePenalty{0.3 * n(rng), "kl"}, MultiplicativeWeight{"len"},
                  AdditivePenalty{0.3 * n(rng), "rank"}, ReferenceAdjust{"ref"}, MultiplicativeWeight{"grp"},
                  AdditivePenalty{0.2 * n(rng), "kl"}};
  f.sample = PairSample{"p", 0.0, {{"kl", n(rng)}, {"rank", n(rng)}}, {{"len", pos(rng)}, {"grp", pos(rng)}},
                        {{"ref", 0.3 * n(rng)}}};
  return f;
}

const std::vector<ObjectiveSpec> kSpecs{{LossKind::logistic, LinkKind::identity, 1.0},
                                        {LossKind::logistic, LinkKind::tanh, 0.7},
                                        {LossKind::mse, LinkKind::logistic, 1.3},
                                        {LossKind::bce, LinkKind::logistic, 0.9}};

}  // namespace

TEST(Links, ValuesAndMonotonicity) {
  EXPECT_EQ(apply_link(LinkKind::identity, 0.4), 0.4);
  EXPECT_NEAR(apply_link(LinkKind::logistic, 0.0), 0.5, 1e-15);
  EXPECT_NEAR(apply_link(LinkKind::tanh, 0.5), std::tanh(0.5), 1e-15);
  EXPECT_EQ(apply_link(LinkKind::hinge, -1.0), 0.0);
  EXPECT_TRUE(is_strictly_increasing(LinkKind::logistic));
  EXPECT_FALSE(is_strictly_increasing(LinkKind::hinge));
  EXPECT_THROW(apply_link(LinkKind::custom, 0.0), DomainError);
  EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_EQ(sigmoid(800.0), 1.0);
}

TEST(Losses, LogisticAtWorkedMargin) {
  EXPECT_NEAR(objective(LossKind::logistic, LinkKind::identity, 1.0, 0.40), std::log(1.0 + std::exp(-0.4)), 1e-15);
  EXPECT_NEAR(objective(LossKind::logistic, LinkKind::identity, 1.0, 0.40), 0.513015, 1e-6);
  EXPECT_NEAR(apply_loss(LossKind::logistic, -1000.0), 1000.0, 1e-9);
  EXPECT_THROW(apply_loss(LossKind::bce, 1.5), DomainError);
  EXPECT_THROW(objective(LossKind::logistic, LinkKind::identity, 0.0, 1.0), DomainError);
}

TEST(Losses, SlopeMatchesCentralDifference) {
  for (const auto& spec : kSpecs)
    for (double m : {-1.5, -0.2, 0.3, 1.1}) {
      auto f = [&](double x) { return objective(spec.loss, spec.link, spec.beta, x); };
      const double fd = oracle::central_difference(f, m, 1e-5);
      EXPECT_NEAR(objective_slope(spec.loss, spec.link, spec.beta, m), fd, 1e-8 * std::max(1.0, std::abs(fd)));
    }
}

TEST(Decision, Sign) {
  EXPECT_EQ(decision(0.4), 1);
  EXPECT_EQ(decision(-0.1), -1);
  EXPECT_EQ(decision(0.0), 0);
}

TEST(Gradient, LadderEqualsNormalForm) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 100; ++t) {
    const auto f = random_fixture(rng);
    const auto nf = collect(f.ladder);
    const auto& spec = kSpecs[t % kSpecs.size()];
    const auto g_ladder = grad_objective(f.scorer, f.ladder, f.sample, spec);
    const auto g_nf = grad_objective(f.scorer, nf, f.sample, spec);
    ASSERT_EQ(g_ladder.size(), g_nf.size());
    for (std::size_t k = 0; k < g_nf.size(); ++k) EXPECT_NEAR(g_ladder[k], g_nf[k], 1e-12);
  }
}

TEST(Gradient, AnalyticMatchesFiniteDifferences) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 100; ++t) {
    const auto f = random_fixture(rng);
    const auto nf = collect(f.ladder);
    const auto& spec = kSpecs[t % kSpecs.size()];
    const auto g = grad_objective(f.scorer, nf, f.sample, spec);
    for (std::size_t k = 0; k < g.size(); ++k) {
      auto obj = [&](double x) {
        LinearScorer s = f.scorer;
        s.theta[k] = x;
        return objective(spec.loss, spec.link, spec.beta, margin(nf, s.realize(f.sample)));
      };
      const double fd = oracle::central_difference(obj, f.scorer.theta[k], 1e-5);
      EXPECT_LE(std::abs(g[k] - fd), 1e-6 * std::max({std::abs(g[k]), std::abs(fd), 1e-3})) << t << "/" << k;
    }
  }
}

TEST(Gradient, ObjectOverloadRefusesScoreDependent) {
  std::mt19937_64 rng(23);
  const auto f = random_fixture(rng);
  GkpoObject obj;
  obj.weight = {WeightForm::score_dependent, std::nullopt, {}, "psi"};
  EXPECT_THROW(grad_objective(f.scorer, obj, f.sample), DomainError);
}

TEST(Scorer, RealizeUsesOffsetsAndFeatures) {
  LinearScorer s;
  s.theta = {1.0, -1.0};
  s.features[{"p", Side::pos}] = {0.5, 0.25};
  s.features[{"p", Side::neg}] = {0.0, 0.0};
  s.offsets[{"p", Side::pos}] = 0.1;
  EXPECT_NEAR(s.realize(PairSample{"p", 9.0, {}, {}, {}}).delta_u, 0.35, 1e-15);
  EXPECT_THROW(s.score("q", Side::pos), DomainError);
}

TEST(KendallTau, SingleSwap) {
  const std::vector<double> a{1, 2, 3, 4}, b{1, 3, 2, 4};
  EXPECT_NEAR(kendall_tau(a, b), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(oracle::kendall_tau_b(a, b), 2.0 / 3.0, 1e-12);
}

TEST(KendallTau, MatchesBruteForceWithTies) {
  std::mt19937_64 rng(24);
  std::uniform_int_distribution<int> small(0, 6);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + t % 40;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = small(rng);
      y[i] = small(rng);
    }
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
        std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) {
      EXPECT_THROW(kendall_tau(x, y), DomainError);
      continue;
    }
    EXPECT_NEAR(kendall_tau(x, y), oracle::kendall_tau_b(x, y), 1e-12) << t;
  }
}

TEST(McNemar, WorkedValueAndEnumeration) {
  EXPECT_NEAR(mcnemar_exact(9, 1), 0.021484375, 1e-12);
  EXPECT_NEAR(oracle::mcnemar_enumerated(9, 1), 0.021484375, 1e-15);
  EXPECT_EQ(mcnemar_exact(0, 0), 1.0);
  for (unsigned a = 0; a <= 10; ++a)
    for (unsigned b = 0; b <= 10; ++b) EXPECT_NEAR(mcnemar_exact(a, b), oracle::mcnemar_enumerated(a, b), 1e-12);
}

TEST(Bootstrap, DeterministicAndCoversMean) {
  std::vector<double> v;
  for (int i = 0; i < 200; ++i) v.push_back((i * 37 % 11) / 10.0);
  const auto a = bootstrap_mean_ci(v, 500, 3);
  const auto b = bootstrap_mean_ci(v, 500, 3);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  EXPECT_LT(a.lo, mean);
  EXPECT_GT(a.hi, mean);
  EXPECT_THROW(bootstrap_mean_ci(v, 10, 3), DomainError);
  const std::vector<int> same(50, 1);
  const auto c = bootstrap_ci(same, 100, 1);
  EXPECT_EQ(c.lo, 1.0);
  EXPECT_EQ(c.hi, 1.0);
}
