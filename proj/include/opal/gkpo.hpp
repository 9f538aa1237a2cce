#pragma once

// In-memory GKPO (generalized kernel preference object) record and its
// structural validation. Parsing and serialization live in gkpo_json.hpp.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace opal {

inline constexpr std::string_view kGkpoVersion = "gkpo-1.0";

enum class ScoreType { logpi, logit, custom };
enum class WeightForm { constant, product, score_dependent, custom };
enum class ReferenceForm { fixed_zero, fixed_scalar, per_dataset, per_prompt, custom };
enum class LinkKind { identity, logistic, tanh, hinge, custom };
enum class LossKind { logistic, bce, hinge, mse, custom };
enum class Composition { dataset_then_policy, policy_then_dataset };
// Declared in lexicographic order of their names so that sorting by value
// and sorting by text agree.
enum class Reason { non_additive_gate, reference_shift, score_dependent_weight };

template <typename E>
struct EnumNames;

#define OPAL_ENUM_NAMES(E, ...)                                                          \
  template <>                                                                            \
  struct EnumNames<E> {                                                                  \
    static constexpr auto table = std::to_array<std::pair<E, std::string_view>>({__VA_ARGS__}); \
  }

OPAL_ENUM_NAMES(ScoreType, {ScoreType::logpi, "logpi"}, {ScoreType::logit, "logit"},
                {ScoreType::custom, "custom"});
OPAL_ENUM_NAMES(WeightForm, {WeightForm::constant, "constant"}, {WeightForm::product, "product"},
                {WeightForm::score_dependent, "score_dependent"}, {WeightForm::custom, "custom"});
OPAL_ENUM_NAMES(ReferenceForm, {ReferenceForm::fixed_zero, "fixed_zero"},
                {ReferenceForm::fixed_scalar, "fixed_scalar"},
                {ReferenceForm::per_dataset, "per_dataset"},
                {ReferenceForm::per_prompt, "per_prompt"}, {ReferenceForm::custom, "custom"});
OPAL_ENUM_NAMES(LinkKind, {LinkKind::identity, "identity"}, {LinkKind::logistic, "logistic"},
                {LinkKind::tanh, "tanh"}, {LinkKind::hinge, "hinge"}, {LinkKind::custom, "custom"});
OPAL_ENUM_NAMES(LossKind, {LossKind::logistic, "logistic"}, {LossKind::bce, "bce"},
                {LossKind::hinge, "hinge"}, {LossKind::mse, "mse"}, {LossKind::custom, "custom"});
OPAL_ENUM_NAMES(Composition, {Composition::dataset_then_policy, "dataset_then_policy"},
                {Composition::policy_then_dataset, "policy_then_dataset"});
OPAL_ENUM_NAMES(Reason, {Reason::non_additive_gate, "non_additive_gate"},
                {Reason::reference_shift, "reference_shift"},
                {Reason::score_dependent_weight, "score_dependent_weight"});

#undef OPAL_ENUM_NAMES

template <typename E>
constexpr std::string_view to_string(E value) {
  for (const auto& [v, name] : EnumNames<E>::table)
    if (v == value) return name;
  return {};
}

template <typename E>
constexpr std::optional<E> enum_from_string(std::string_view text) {
  for (const auto& [v, name] : EnumNames<E>::table)
    if (name == text) return v;
  return std::nullopt;
}

struct ScoreSpec {
  ScoreType type = ScoreType::logpi;
  std::optional<std::string> custom_name;
  bool operator==(const ScoreSpec&) const = default;
};

struct WeightSpec {
  WeightForm form = WeightForm::constant;
  std::optional<double> constant;
  std::vector<std::string> factors;
  std::optional<std::string> score_fn;
  bool operator==(const WeightSpec&) const = default;
};

struct ReferenceSpec {
  ReferenceForm form = ReferenceForm::fixed_zero;
  std::optional<double> value;
  bool operator==(const ReferenceSpec&) const = default;
};

struct PenaltyEntry {
  std::string name;
  double lambda = 0.0;
  // Serialized as "meta": {"gate": bool}.
  std::optional<bool> meta_gate;
  bool operator==(const PenaltyEntry&) const = default;
};

struct DatasetOps {
  std::vector<std::string> group_weights;
  std::vector<std::string> group_penalties;
  Composition composition = Composition::dataset_then_policy;
  bool operator==(const DatasetOps&) const = default;
};

struct Provenance {
  std::optional<std::string> opal_hash;
  std::string method;
  std::vector<std::string> citations;
  std::string notes;
  bool operator==(const Provenance&) const = default;
};

// Witness values: a scalar, a flat array, or an array of flat arrays (the
// gate witness stores its (phi1, phi2) points as pairs).
using WitnessValue = std::variant<double, std::vector<double>, std::vector<std::vector<double>>>;
using Witness = std::map<std::string, WitnessValue>;

struct ReducibilityBlock {
  bool inside_R = true;
  std::vector<Reason> reasons;
  Witness witness;
  bool operator==(const ReducibilityBlock&) const = default;
};

struct GkpoObject {
  std::string version{kGkpoVersion};
  ScoreSpec score;
  WeightSpec weight;
  ReferenceSpec reference;
  LinkKind link = LinkKind::identity;
  LossKind loss = LossKind::logistic;
  double beta = 1.0;
  std::vector<PenaltyEntry> penalties;
  DatasetOps dataset_ops;
  Provenance provenance;
  ReducibilityBlock reducibility;
  bool operator==(const GkpoObject&) const = default;
};

struct Violation {
  std::string path;
  std::string message;
  bool operator==(const Violation&) const = default;
};

using ValidationReport = std::vector<Violation>;

namespace detail {

inline bool is_lower_hex64(std::string_view s) {
  return s.size() == 64 &&
         std::all_of(s.begin(), s.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

inline bool witness_finite(const WitnessValue& v) {
  auto finite = [](double x) { return std::isfinite(x); };
  if (const auto* d = std::get_if<double>(&v)) return finite(*d);
  if (const auto* a = std::get_if<std::vector<double>>(&v)) return std::all_of(a->begin(), a->end(), finite);
  const auto& rows = std::get<std::vector<std::vector<double>>>(v);
  return std::all_of(rows.begin(), rows.end(),
                     [&](const auto& row) { return std::all_of(row.begin(), row.end(), finite); });
}

}  // namespace detail

// Checks every structural invariant of the record. Returns one entry per
// violated invariant; an empty report means the object is valid.
inline ValidationReport validate(const GkpoObject& obj) {
  ValidationReport out;
  auto fail = [&](std::string path, std::string msg) { out.push_back({std::move(path), std::move(msg)}); };

  if (obj.version != kGkpoVersion) fail("version", "expected \"gkpo-1.0\"");

  const bool custom_score = obj.score.type == ScoreType::custom;
  if (custom_score != obj.score.custom_name.has_value())
    fail("score.custom_name", "custom_name must be present iff type is custom");
  else if (custom_score && obj.score.custom_name->empty())
    fail("score.custom_name", "custom_name must be a nonempty identifier");

  const auto& w = obj.weight;
  if ((w.form == WeightForm::constant) != w.constant.has_value())
    fail("weight.constant", "constant must be present iff form is constant");
  else if (w.constant && !(std::isfinite(*w.constant) && *w.constant > 0.0))
    fail("weight.constant", "constant must be a finite positive number");
  if ((w.form == WeightForm::product) != !w.factors.empty())
    fail("weight.factors", "factors must be nonempty iff form is product");
  if (std::any_of(w.factors.begin(), w.factors.end(), [](const auto& f) { return f.empty(); }))
    fail("weight.factors", "factor names must be nonempty");
  if ((w.form == WeightForm::score_dependent) != w.score_fn.has_value())
    fail("weight.score_fn", "score_fn must be present iff form is score_dependent");

  const auto& r = obj.reference;
  const bool fixed = r.form == ReferenceForm::fixed_zero || r.form == ReferenceForm::fixed_scalar;
  if (fixed != r.value.has_value())
    fail("reference.value", "value must be present iff form is fixed_zero or fixed_scalar");
  else if (r.value && !std::isfinite(*r.value))
    fail("reference.value", "value must be finite");
  else if (r.form == ReferenceForm::fixed_zero && r.value && *r.value != 0.0)
    fail("reference.value", "fixed_zero requires value 0");

  if (!(std::isfinite(obj.beta) && obj.beta > 0.0)) fail("beta", "beta must be a finite positive number");

  std::set<std::string> seen;
  for (std::size_t i = 0; i < obj.penalties.size(); ++i) {
    const auto& p = obj.penalties[i];
    const std::string path = "penalties[" + std::to_string(i) + "]";
    if (p.name.empty()) fail(path + ".name", "penalty name must be nonempty");
    if (!seen.insert(p.name).second) fail(path + ".name", "duplicate penalty name '" + p.name + "'");
    if (!std::isfinite(p.lambda)) fail(path + ".lambda", "lambda must be finite");
  }

  const auto& prov = obj.provenance;
  if (prov.opal_hash && !detail::is_lower_hex64(*prov.opal_hash))
    fail("provenance.opal_hash", "opal_hash must be 64 lowercase hex characters");

  const auto& red = obj.reducibility;
  if (red.inside_R && !red.reasons.empty()) fail("reducibility", "inside_R is true but reasons are listed");
  if (std::set<Reason>(red.reasons.begin(), red.reasons.end()).size() != red.reasons.size())
    fail("reducibility.reasons", "duplicate reason codes");
  for (const auto& [key, value] : red.witness) {
    if (key.empty()) fail("reducibility.witness", "witness keys must be nonempty");
    if (!detail::witness_finite(value)) fail("reducibility.witness." + key, "witness values must be finite");
  }
  return out;
}

}  // namespace opal
