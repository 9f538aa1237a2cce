#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "opal/gkpo.hpp"
#include "opal/gkpo_json.hpp"

using namespace opal;
using testutil::fixture;

namespace {

const char* kMinimal = R"({"version":"gkpo-1.0","score":{"type":"logpi"},
  "weight":{"form":"constant","constant":1.0},"reference":{"form":"fixed_scalar","value":0.1},
  "link":"identity","loss":"logistic","beta":1.0})";

template <typename F>
SchemaError schema_error(F&& f) {
  try {
    f();
  } catch (const SchemaError& e) {
    return e;
  }
  ADD_FAILURE() << "expected SchemaError";
  return SchemaError("none", "", "");
}

std::string with(const std::string& tail) {
  std::string s = kMinimal;
  s.pop_back();
  return s + "," + tail + "}";
}

}  // namespace

TEST(Schema, DpoListingParsesAndValidates) {
  const auto obj = fixture("dpo.json");
  EXPECT_EQ(obj.version, "gkpo-1.0");
  EXPECT_EQ(obj.score.type, ScoreType::logpi);
  EXPECT_EQ(obj.weight.form, WeightForm::constant);
  EXPECT_EQ(*obj.weight.constant, 1.0);
  EXPECT_EQ(obj.reference.form, ReferenceForm::fixed_scalar);
  EXPECT_DOUBLE_EQ(*obj.reference.value, 0.10);
  EXPECT_EQ(obj.beta, 1.0);
  EXPECT_EQ(obj.provenance.method, "DPO");
  EXPECT_TRUE(obj.reducibility.inside_R);
  EXPECT_TRUE(validate(obj).empty());
}

TEST(Schema, EveryShippedFixtureValidates) {
  namespace fs = std::filesystem;
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(testutil::source_path("fixtures"))) {
    if (entry.path().extension() != ".json") continue;
    ++seen;
    const auto obj = parse(testutil::slurp(entry.path().string()));
    EXPECT_TRUE(validate(obj).empty()) << entry.path();
  }
  EXPECT_GE(seen, 10);
}

TEST(Schema, OptionalBlocksDefault) {
  const auto obj = parse(kMinimal);
  EXPECT_TRUE(obj.penalties.empty());
  EXPECT_EQ(obj.dataset_ops.composition, Composition::dataset_then_policy);
  EXPECT_TRUE(obj.reducibility.inside_R);
  EXPECT_FALSE(obj.provenance.opal_hash.has_value());
}

TEST(Schema, SyntaxErrorReportsPosition) {
  try {
    parse(R"({"version":"gkpo-1.0",,})");
    FAIL();
  } catch (const SyntaxError& e) {
    EXPECT_EQ(e.code(), "syntax_error");
    EXPECT_EQ(e.position(), 23u);
  }
}

TEST(Schema, UnknownKeyIsRejectedWithPath) {
  auto e = schema_error([] { parse(with(R"("temperature":2)")); });
  EXPECT_EQ(e.code(), "unknown_key");
  EXPECT_EQ(e.path(), "temperature");
  e = schema_error([] { parse(with(R"("dataset_ops":{"composition":"dataset_then_policy","extra":[]})")); });
  EXPECT_EQ(e.path(), "dataset_ops.extra");
}

TEST(Schema, WrongTypeIsRejected) {
  auto e = schema_error([] { parse(R"({"version":"gkpo-1.0","score":{"type":"logpi"},
    "weight":{"form":"constant","constant":"1"},"reference":{"form":"fixed_zero","value":0},
    "link":"identity","loss":"logistic","beta":1})"); });
  EXPECT_EQ(e.code(), "type_error");
  EXPECT_EQ(e.path(), "weight.constant");
  e = schema_error([] { parse(with(R"("penalties":{"a":1})")); });
  EXPECT_EQ(e.path(), "penalties");
}

TEST(Schema, OutOfEnumIsRejected) {
  auto e = schema_error([] { parse(with(R"("reducibility":{"inside_R":false,"reasons":["vibes"]})")); });
  EXPECT_EQ(e.code(), "enum_error");
  std::string text = kMinimal;
  text.replace(text.find("identity"), 8, "softplus");
  e = schema_error([&] { parse(text); });
  EXPECT_EQ(e.code(), "enum_error");
  EXPECT_EQ(e.path(), "link");
}

TEST(Schema, MissingKeyAndNullAndVersion) {
  auto e = schema_error([] { parse(R"({"version":"gkpo-1.0"})"); });
  EXPECT_EQ(e.code(), "missing_key");
  EXPECT_EQ(e.path(), "score");
  e = schema_error([] { parse(with(R"("provenance":{"notes":null})")); });
  EXPECT_EQ(e.code(), "type_error");
  EXPECT_EQ(e.path(), "provenance.notes");
  std::string text = kMinimal;
  text.replace(text.find("1.0\""), 3, "2.0");
  e = schema_error([&] { parse(text); });
  EXPECT_EQ(e.code(), "version_error");
}

TEST(Schema, WitnessPayloadShapes) {
  const auto obj = fixture("gate.json");
  const auto& w = obj.reducibility.witness;
  ASSERT_TRUE(w.contains("phi_pairs"));
  const auto& rows = std::get<std::vector<std::vector<double>>>(w.at("phi_pairs"));
  EXPECT_EQ(rows, (std::vector<std::vector<double>>{{1, 10}, {0, 1}}));
  EXPECT_EQ(std::get<double>(w.at("phi_value_equal")), 1.0);
  auto e = schema_error([] { parse(with(R"("reducibility":{"inside_R":false,"witness":{"k":"text"}})")); });
  EXPECT_EQ(e.code(), "type_error");
}

TEST(Validate, BetaZeroIsOneViolation) {
  const auto obj = fixture("invalid/beta0.json");
  const auto report = validate(obj);
  ASSERT_EQ(report.size(), 1u);
  EXPECT_EQ(report[0].path, "beta");
}

TEST(Validate, StructuralInvariants) {
  GkpoObject obj = parse(kMinimal);
  obj.reference = {ReferenceForm::fixed_zero, 0.3};
  ASSERT_EQ(validate(obj).size(), 1u);
  EXPECT_EQ(validate(obj)[0].path, "reference.value");

  obj = parse(kMinimal);
  obj.reference = {ReferenceForm::per_prompt, 0.1};
  EXPECT_EQ(validate(obj).at(0).path, "reference.value");

  obj = parse(kMinimal);
  obj.weight = {WeightForm::product, std::nullopt, {}, std::nullopt};
  EXPECT_EQ(validate(obj).at(0).path, "weight.factors");

  obj = parse(kMinimal);
  obj.weight.constant = -1.0;
  EXPECT_EQ(validate(obj).at(0).path, "weight.constant");

  obj = parse(kMinimal);
  obj.score.type = ScoreType::custom;
  EXPECT_EQ(validate(obj).at(0).path, "score.custom_name");

  obj = parse(kMinimal);
  obj.penalties = {{"a", 0.1, std::nullopt}, {"a", 0.2, std::nullopt}};
  EXPECT_EQ(validate(obj).at(0).path, "penalties[1].name");

  obj = parse(kMinimal);
  obj.provenance.opal_hash = "ABC";
  EXPECT_EQ(validate(obj).at(0).path, "provenance.opal_hash");

  obj = parse(kMinimal);
  obj.reducibility.reasons = {Reason::reference_shift};
  EXPECT_EQ(validate(obj).at(0).path, "reducibility");
}

TEST(Validate, InvalidFixturesFailToLoadOrValidate) {
  namespace fs = std::filesystem;
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(testutil::source_path("fixtures/invalid"))) {
    ++seen;
    bool rejected = false;
    try {
      rejected = !validate(parse(testutil::slurp(entry.path().string()))).empty();
    } catch (const Error&) {
      rejected = true;
    }
    EXPECT_TRUE(rejected) << entry.path();
  }
  EXPECT_GE(seen, 8);
}

TEST(Serialize, RoundTripPreservesObject) {
  for (const char* name : {"dpo.json", "rrhf.json", "gate.json", "orpo_shift.json", "score_dependent.json",
                           "kto_product.json"}) {
    const auto obj = fixture(name);
    EXPECT_EQ(parse(serialize(obj)), obj) << name;
    EXPECT_EQ(parse(serialize(obj, 2)), obj) << name;
  }
}

TEST(Enums, NamesRoundTrip) {
  for (const auto& [value, name] : EnumNames<LossKind>::table) EXPECT_EQ(enum_from_string<LossKind>(name), value);
  EXPECT_FALSE(enum_from_string<ReferenceForm>("fixed").has_value());
  EXPECT_EQ(to_string(Reason::non_additive_gate), "non_additive_gate");
}
