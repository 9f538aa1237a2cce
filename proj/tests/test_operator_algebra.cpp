#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "opal/margin_engine.hpp"
#include "opal/operator_algebra.hpp"

using namespace opal;

namespace {

const std::vector<std::string> kPhi{"a", "b", "c"};
const std::vector<std::string> kOmega{"w1", "w2"};
const std::vector<std::string> kRho{"r1", "r2"};

Ladder random_ladder(std::mt19937_64& rng, std::size_t len) {
  std::uniform_int_distribution<int> kind(0, 2), pick(0, 10);
  std::uniform_real_distribution<double> lam(-1.0, 1.0);
  Ladder l;
  for (std::size_t i = 0; i < len; ++i) {
    switch (kind(rng)) {
      case 0: l.ops.push_back(AdditivePenalty{lam(rng), kPhi[pick(rng) % kPhi.size()]}); break;
      case 1: l.ops.push_back(MultiplicativeWeight{kOmega[pick(rng) % kOmega.size()]}); break;
      default: l.ops.push_back(ReferenceAdjust{kRho[pick(rng) % kRho.size()]}); break;
    }
  }
  return l;
}

PairSample random_sample(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0), pos(0.2, 3.0);
  PairSample s{"p", u(rng), {}, {}, {}};
  for (const auto& n : kPhi) s.delta_phi[n] = u(rng);
  for (const auto& n : kOmega) s.omega[n] = pos(rng);
  for (const auto& n : kRho) s.delta_ref[n] = u(rng);
  return s;
}

}  // namespace

TEST(Collect, MatchesStepwiseApplication) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 500; ++t) {
    const auto ladder = random_ladder(rng, 1 + t % 12);
    const auto s = random_sample(rng);
    const auto nf = collect(ladder);
    const auto st = apply_ladder(ladder, s);
    EXPECT_NEAR(margin(nf, s), st.margin(), 1e-12);
    EXPECT_NEAR(score_gap(nf, s), st.delta_f, 1e-12);
    EXPECT_NEAR(pair_weight(nf, s), st.weight, 1e-12);
  }
}

TEST(Collect, SinglePassAndOrderIndependent) {
  std::mt19937_64 rng(12);
  const auto ladder = random_ladder(rng, 40);
  std::size_t visits = 0;
  const auto nf = collect(ladder, &visits);
  EXPECT_EQ(visits, ladder.ops.size());

  auto shuffled = ladder;
  std::shuffle(shuffled.ops.begin(), shuffled.ops.end(), rng);
  const auto nf2 = collect(shuffled);
  EXPECT_EQ(nf.weight_factors, nf2.weight_factors);
  EXPECT_EQ(nf.ref_terms, nf2.ref_terms);
  for (const auto& [k, v] : nf.penalty_coeffs) EXPECT_NEAR(nf2.penalty_coeffs.at(k), v, 1e-12);
}

TEST(Collect, ClosedUnderComposition) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 100; ++t) {
    const auto a = random_ladder(rng, 5), b = random_ladder(rng, 7);
    const auto s = random_sample(rng);
    EXPECT_NEAR(margin(collect(a + b), s), apply_ladder(b + a, s).margin(), 1e-12);
  }
}

TEST(Collect, PenaltiesSumByName) {
  Ladder l{{AdditivePenalty{0.5, "a"}, AdditivePenalty{0.25, "a"}, AdditivePenalty{0.1, "b"}}};
  const auto nf = collect(l);
  EXPECT_DOUBLE_EQ(nf.penalty_coeffs.at("a"), 0.75);
  EXPECT_DOUBLE_EQ(nf.penalty_coeffs.at("b"), 0.1);
}

TEST(Margin, WorkedToyValues) {
  NormalForm dpo;
  dpo.ref_offset = 0.10;
  EXPECT_NEAR(margin(dpo, PairSample{"x", -1.20 - -1.70, {}, {}, {}}), 0.40, 1e-12);

  NormalForm rrhf;
  rrhf.penalty_coeffs = {{"rank_margin_1", 0.50}, {"rank_margin_2", 0.10}};
  const PairSample s{"x", 0.50, {{"rank_margin_1", 0.20}, {"rank_margin_2", -0.10}}, {}, {}};
  EXPECT_NEAR(score_gap(rrhf, s), 0.41, 1e-12);
  EXPECT_NEAR(margin(rrhf, s), 0.41, 1e-12);
}

TEST(Margin, MissingNameThrows) {
  NormalForm nf;
  nf.penalty_coeffs["zeta"] = 1.0;
  try {
    margin(nf, PairSample{"x", 0.1, {}, {}, {}});
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_EQ(e.code(), "missing_name");
  }
}

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_THROW(median({}), DomainError);
}

TEST(ScaleFix, ExampleF) {
  NormalForm nf;
  nf.weight_constant = 0.5;
  const std::vector<PairSample> probe{{"1", 1.0, {}, {}, {}}, {"2", -2.0, {}, {}, {}}, {"3", 3.0, {}, {}, {}},
                                      {"4", 2.5, {}, {}, {}}, {"5", -1.5, {}, {}, {}}};
  const auto fix = scale_fix(nf, probe);
  EXPECT_DOUBLE_EQ(fix.c, 0.5);
  EXPECT_DOUBLE_EQ(fix.nf.weight_constant, 1.0);
  EXPECT_DOUBLE_EQ(fix.beta_multiplier, 0.5);
  EXPECT_FALSE(fix.scale_undefined);
  for (const auto& s : probe) {
    EXPECT_EQ(decision(margin(fix.nf, s)), decision(margin(nf, s)));
    EXPECT_NEAR(margin(fix.nf, s), margin(nf, s), 1e-12);
  }
  std::vector<double> scaled;
  for (const auto& s : probe) scaled.push_back(std::abs(fix.nf.scale * score_gap(fix.nf, s)));
  EXPECT_DOUBLE_EQ(median(scaled), 1.0);
}

TEST(ScaleFix, AllZeroProbeIsUndefined) {
  const std::vector<PairSample> probe{{"1", 0.0, {}, {}, {}}, {"2", 0.0, {}, {}, {}}};
  const auto fix = scale_fix(NormalForm{}, probe);
  EXPECT_TRUE(fix.scale_undefined);
  EXPECT_EQ(fix.c, 1.0);
  EXPECT_THROW(scale_fix(NormalForm{}, std::span<const PairSample>{}), DomainError);
}

TEST(RecoverScale, FindsAndRejects) {
  std::mt19937_64 rng(14);
  NormalForm a;
  a.penalty_coeffs["a"] = 0.3;
  a.weight_factors = {"w1"};
  std::vector<PairSample> samples;
  for (int i = 0; i < 50; ++i) samples.push_back(random_sample(rng));
  NormalForm b = a;
  b.scale = 2.5;
  b.weight_constant = 1.0 / 2.5;
  const auto c = recover_scale(a, b, samples);
  ASSERT_TRUE(c.has_value());
  EXPECT_NEAR(*c, 2.5, 1e-9);

  NormalForm other = a;
  other.penalty_coeffs["a"] = 0.31;
  EXPECT_FALSE(recover_scale(a, other, samples).has_value());
}

TEST(NormalFormOfObject, ReferenceForms) {
  GkpoObject obj;
  obj.penalties = {{"a", 0.2, std::nullopt}, {"a", 0.1, std::nullopt}};
  obj.reference = {ReferenceForm::fixed_scalar, 0.25};
  auto nf = to_normal_form(obj);
  EXPECT_NEAR(nf.penalty_coeffs.at("a"), 0.3, 1e-15);
  EXPECT_EQ(nf.ref_offset, 0.25);
  obj.reference = {ReferenceForm::per_prompt, std::nullopt};
  nf = to_normal_form(obj);
  EXPECT_EQ(nf.ref_terms, std::vector<std::string>{kPromptReference});
  obj.weight = {WeightForm::score_dependent, std::nullopt, {}, "psi"};
  EXPECT_THROW(to_normal_form(obj), DomainError);
}

TEST(ScaleEquivalence, RescaledSampleKeepsMargins) {
  std::mt19937_64 rng(15);
  NormalForm nf;
  nf.penalty_coeffs = {{"a", 0.4}, {"b", -0.2}};
  nf.ref_terms = {"r1"};
  for (int i = 0; i < 100; ++i) {
    const auto s = random_sample(rng);
    const double c = 0.1 + i * 0.05;
    NormalForm scaled = nf;
    scaled.weight_constant /= c;
    EXPECT_NEAR(margin(scaled, rescaled(s, c)), margin(nf, s), 1e-12);
  }
}
