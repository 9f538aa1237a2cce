#pragma once

// Method adapters: flat per-method configuration maps to and from GKPO, and a
// conversion router that only converts when the source collects to a normal
// form the target can express.
//
// Adapter config keys (besides "method"):
//
//   DPO       beta, reference                     [penalties]
//   PPO_RM    beta, reference, kl_coef            [penalties]
//   RRHF      beta, penalties                     [reference]
//   ORPO      beta, offset_mode = "fixed"         offset [penalties]
//             beta, offset_mode = "per_prompt"    [offsets, raw_gap, penalties]
//   KTO_GRPO  beta, weight_mode = "product"       [factors, penalties, reference]
//             beta, weight_mode = "score_dependent", score_fn [penalties, reference]
//
// `penalties` is an object {name: lambda}. On DPO it lists the penalties
// already folded into the collected score f*.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "opal/canonical.hpp"
#include "opal/error.hpp"
#include "opal/gkpo.hpp"
#include "opal/gkpo_json.hpp"
#include "opal/operator_algebra.hpp"
#include "opal/reducibility.hpp"

namespace opal {

enum class Method { DPO, PPO_RM, RRHF, ORPO, KTO_GRPO };
enum class OffsetMode { fixed, per_prompt };
enum class WeightMode { product, score_dependent };

template <>
struct EnumNames<Method> {
  static constexpr auto table = std::to_array<std::pair<Method, std::string_view>>(
      {{Method::DPO, "DPO"}, {Method::PPO_RM, "PPO_RM"}, {Method::RRHF, "RRHF"}, {Method::ORPO, "ORPO"},
       {Method::KTO_GRPO, "KTO_GRPO"}});
};
template <>
struct EnumNames<OffsetMode> {
  static constexpr auto table = std::to_array<std::pair<OffsetMode, std::string_view>>(
      {{OffsetMode::fixed, "fixed"}, {OffsetMode::per_prompt, "per_prompt"}});
};
template <>
struct EnumNames<WeightMode> {
  static constexpr auto table = std::to_array<std::pair<WeightMode, std::string_view>>(
      {{WeightMode::product, "product"}, {WeightMode::score_dependent, "score_dependent"}});
};

inline constexpr const char* kKlAnchor = "kl_anchor";

struct MethodConfig {
  Method method = Method::DPO;
  double beta = 1.0;
  double reference = 0.0;  // ORPO: the fixed offset
  std::map<std::string, double> penalties;
  std::optional<double> kl_coef;
  std::optional<OffsetMode> offset_mode;
  std::vector<double> offsets;  // ORPO per-prompt offsets (evidence)
  std::optional<double> raw_gap;
  std::optional<WeightMode> weight_mode;
  std::vector<std::string> factors;
  std::optional<std::string> score_fn;
  bool operator==(const MethodConfig&) const = default;
};

// Reasons a conversion can be blocked: the schema's reducibility codes plus
// two conversion-level ones.
enum class BlockReason {
  non_additive_gate,
  reference_shift,
  score_dependent_weight,
  weight_not_absorbable,
  reference_unavailable,
};

template <>
struct EnumNames<BlockReason> {
  static constexpr auto table = std::to_array<std::pair<BlockReason, std::string_view>>(
      {{BlockReason::non_additive_gate, "non_additive_gate"},
       {BlockReason::reference_shift, "reference_shift"},
       {BlockReason::score_dependent_weight, "score_dependent_weight"},
       {BlockReason::weight_not_absorbable, "weight_not_absorbable"},
       {BlockReason::reference_unavailable, "reference_unavailable"}});
};

inline BlockReason to_block_reason(Reason r) {
  switch (r) {
    case Reason::non_additive_gate: return BlockReason::non_additive_gate;
    case Reason::reference_shift: return BlockReason::reference_shift;
    case Reason::score_dependent_weight: return BlockReason::score_dependent_weight;
  }
  return BlockReason::score_dependent_weight;
}

enum class Outcome { converted, blocked };

struct ConversionResult {
  Outcome outcome = Outcome::blocked;
  std::optional<MethodConfig> target;
  // c with M_src = c * M_tgt when the source weight was absorbed into the
  // target's beta; unset when c = 1.
  std::optional<double> scale_applied;
  std::vector<BlockReason> reasons;
  std::vector<std::string> notes;
};

// ---------------------------------------------------------------------------
// Flat JSON configs

namespace detail {

struct KeySpec {
  std::vector<std::string_view> required;
  std::vector<std::string_view> optional;
};

inline KeySpec config_keys(const MethodConfig& cfg) {
  switch (cfg.method) {
    case Method::DPO: return {{"beta", "reference"}, {"penalties"}};
    case Method::PPO_RM: return {{"beta", "reference", "kl_coef"}, {"penalties"}};
    case Method::RRHF: return {{"beta", "penalties"}, {"reference"}};
    case Method::ORPO:
      if (cfg.offset_mode == OffsetMode::per_prompt)
        return {{"beta", "offset_mode"}, {"offsets", "raw_gap", "penalties"}};
      return {{"beta", "offset_mode", "offset"}, {"penalties"}};
    case Method::KTO_GRPO:
      if (cfg.weight_mode == WeightMode::score_dependent)
        return {{"beta", "weight_mode", "score_fn"}, {"penalties", "reference"}};
      return {{"beta", "weight_mode"}, {"factors", "penalties", "reference"}};
  }
  return {};
}

}  // namespace detail

inline MethodConfig config_from_json(const json& root) {
  detail::ObjectReader r(root, "");
  MethodConfig cfg;
  cfg.method = r.enumeration<Method>("method");
  if (cfg.method == Method::ORPO && r.has("offset_mode")) cfg.offset_mode = r.enumeration<OffsetMode>("offset_mode");
  if (cfg.method == Method::KTO_GRPO && r.has("weight_mode"))
    cfg.weight_mode = r.enumeration<WeightMode>("weight_mode");

  const auto keys = detail::config_keys(cfg);
  std::set<std::string_view> allowed(keys.optional.begin(), keys.optional.end());
  allowed.insert(keys.required.begin(), keys.required.end());
  allowed.insert("method");
  for (const auto& [key, value] : root.items())
    if (!allowed.contains(key)) throw SchemaError("unknown_key", key, "key '" + key + "' not allowed for this method");
  for (auto key : keys.required)
    if (!r.has(key)) throw SchemaError("missing_key", std::string(key), "missing required key '" + std::string(key) + "'");

  cfg.beta = r.number("beta");
  if (!(cfg.beta > 0.0)) throw SchemaError("domain_error", "beta", "beta must be positive");
  if (r.has("reference")) cfg.reference = r.number("reference");
  if (r.has("offset")) cfg.reference = r.number("offset");
  if (r.has("kl_coef")) cfg.kl_coef = r.number("kl_coef");
  if (r.has("raw_gap")) cfg.raw_gap = r.number("raw_gap");
  if (r.has("score_fn")) cfg.score_fn = r.string("score_fn");
  cfg.factors = r.string_list("factors");
  if (const json* offs = r.optional("offsets")) {
    if (!offs->is_array()) detail::type_error("offsets", "array of numbers");
    for (std::size_t i = 0; i < offs->size(); ++i)
      cfg.offsets.push_back(detail::ObjectReader::as_number((*offs)[i], "offsets[" + std::to_string(i) + "]"));
  }
  if (const json* pen = r.optional("penalties")) {
    if (!pen->is_object()) detail::type_error("penalties", "object of name -> lambda");
    for (const auto& [name, value] : pen->items())
      cfg.penalties[name] = detail::ObjectReader::as_number(value, "penalties." + name);
  }
  r.optional("method");
  if (r.has("offset_mode")) r.optional("offset_mode");
  if (r.has("weight_mode")) r.optional("weight_mode");
  r.finish();
  return cfg;
}

inline json config_to_json(const MethodConfig& cfg) {
  json out = {{"method", to_string(cfg.method)}, {"beta", cfg.beta}};
  json pen = json::object();
  for (const auto& [name, lambda] : cfg.penalties) pen[name] = lambda;
  switch (cfg.method) {
    case Method::DPO:
      out["reference"] = cfg.reference;
      if (!cfg.penalties.empty()) out["penalties"] = pen;
      break;
    case Method::PPO_RM:
      out["reference"] = cfg.reference;
      out["kl_coef"] = cfg.kl_coef.value_or(0.0);
      if (!cfg.penalties.empty()) out["penalties"] = pen;
      break;
    case Method::RRHF:
      out["penalties"] = pen;
      out["reference"] = cfg.reference;
      break;
    case Method::ORPO:
      out["offset_mode"] = to_string(cfg.offset_mode.value_or(OffsetMode::fixed));
      if (cfg.offset_mode == OffsetMode::per_prompt) {
        if (!cfg.offsets.empty()) out["offsets"] = cfg.offsets;
        if (cfg.raw_gap) out["raw_gap"] = *cfg.raw_gap;
      } else {
        out["offset"] = cfg.reference;
      }
      if (!cfg.penalties.empty()) out["penalties"] = pen;
      break;
    case Method::KTO_GRPO:
      out["weight_mode"] = to_string(cfg.weight_mode.value_or(WeightMode::product));
      if (!cfg.factors.empty()) out["factors"] = cfg.factors;
      if (cfg.score_fn) out["score_fn"] = *cfg.score_fn;
      if (!cfg.penalties.empty()) out["penalties"] = pen;
      out["reference"] = cfg.reference;
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Method -> GKPO

namespace detail {

inline std::vector<std::string> citations_for(Method m) {
  switch (m) {
    case Method::DPO: return {"rafailov2023direct"};
    case Method::PPO_RM: return {"christiano2017deep"};
    case Method::RRHF: return {"yuan2023rrhf"};
    case Method::ORPO: return {"orpo2024"};
    case Method::KTO_GRPO: return {"Ethayarajh2024kto", "shao2024deepseekmath"};
  }
  return {};
}

inline void require(bool ok, const char* key, const char* what) {
  if (!ok) throw SchemaError("missing_key", key, what);
}

inline ReferenceSpec fixed_reference(double value, bool zero_form) {
  if (zero_form && value == 0.0) return {ReferenceForm::fixed_zero, 0.0};
  return {ReferenceForm::fixed_scalar, value};
}

}  // namespace detail

inline GkpoObject to_gkpo(const MethodConfig& cfg) {
  if (!(std::isfinite(cfg.beta) && cfg.beta > 0.0)) throw SchemaError("domain_error", "beta", "beta must be positive");
  GkpoObject obj;
  obj.beta = cfg.beta;
  obj.weight = {WeightForm::constant, 1.0, {}, std::nullopt};
  obj.provenance.method = std::string(to_string(cfg.method));
  obj.provenance.citations = detail::citations_for(cfg.method);
  for (const auto& [name, lambda] : cfg.penalties) obj.penalties.push_back({name, lambda, std::nullopt});

  ReducibilityEvidence evidence;
  switch (cfg.method) {
    case Method::DPO:
      obj.reference = detail::fixed_reference(cfg.reference, false);
      break;
    case Method::PPO_RM:
      detail::require(cfg.kl_coef.has_value(), "kl_coef", "PPO_RM needs kl_coef");
      obj.penalties.push_back({kKlAnchor, *cfg.kl_coef, std::nullopt});
      obj.reference = detail::fixed_reference(cfg.reference, false);
      break;
    case Method::RRHF:
      obj.reference = detail::fixed_reference(cfg.reference, true);
      break;
    case Method::ORPO:
      detail::require(cfg.offset_mode.has_value(), "offset_mode", "ORPO needs an explicit offset_mode");
      if (*cfg.offset_mode == OffsetMode::fixed) {
        obj.reference = detail::fixed_reference(cfg.reference, false);
      } else {
        obj.reference = {ReferenceForm::per_prompt, std::nullopt};
        if (cfg.raw_gap)
          for (double off : cfg.offsets) evidence.reference_pairs.push_back({*cfg.raw_gap, off});
      }
      break;
    case Method::KTO_GRPO:
      detail::require(cfg.weight_mode.has_value(), "weight_mode", "KTO_GRPO needs an explicit weight_mode");
      obj.reference = detail::fixed_reference(cfg.reference, true);
      if (*cfg.weight_mode == WeightMode::product) {
        if (!cfg.factors.empty()) obj.weight = {WeightForm::product, std::nullopt, cfg.factors, std::nullopt};
      } else {
        detail::require(cfg.score_fn.has_value(), "score_fn", "score_dependent weight needs score_fn");
        obj.weight = {WeightForm::score_dependent, std::nullopt, {}, cfg.score_fn};
      }
      break;
  }
  obj = collect_object(std::move(obj));
  obj.reducibility = classify(obj, evidence);
  return obj;
}

// ---------------------------------------------------------------------------
// GKPO -> method

inline ConversionResult from_gkpo(const GkpoObject& source, Method target,
                                  std::optional<std::span<const PairSample>> probe = std::nullopt) {
  const GkpoObject obj = collect_object(source);
  if (const auto report = validate(obj); !report.empty())
    throw DomainError("validation_error", "invalid object at '" + report.front().path + "': " + report.front().message);

  ConversionResult res;
  std::set<Reason> flags(obj.reducibility.reasons.begin(), obj.reducibility.reasons.end());
  for (Reason r : classify(obj).reasons) flags.insert(r);
  if (!flags.empty()) {
    for (Reason r : flags) res.reasons.push_back(to_block_reason(r));
    res.notes.push_back("source is outside the reducible class");
    return res;
  }

  const NormalForm nf = to_normal_form(obj);
  double absorbed = nf.weight_constant;
  std::vector<std::string> kept_factors;
  if (target == Method::KTO_GRPO) {
    kept_factors = nf.weight_factors;
  } else if (!nf.weight_factors.empty()) {
    if (!probe || probe->empty()) {
      res.reasons.push_back(BlockReason::weight_not_absorbable);
      res.notes.push_back("product weight needs a probe set to show the factors are globally constant");
      return res;
    }
    NormalForm factors_only;
    factors_only.weight_factors = nf.weight_factors;
    const double first = pair_weight(factors_only, probe->front());
    for (const auto& s : *probe) {
      const double w = pair_weight(factors_only, s);
      if (std::abs(w - first) > 1e-12 * std::max(1.0, std::abs(first))) {
        res.reasons.push_back(BlockReason::weight_not_absorbable);
        res.notes.push_back("weight factors vary across the probe set; no single scale absorbs them");
        return res;
      }
    }
    absorbed *= first;
  }

  double reference = nf.ref_offset;
  if (obj.reference.form == ReferenceForm::per_dataset) {
    bool found = false;
    if (probe && !probe->empty()) {
      const auto& first = probe->front().delta_ref;
      const auto it = first.find(kDatasetReference);
      found = it != first.end() &&
              std::all_of(probe->begin(), probe->end(), [&](const PairSample& s) {
                const auto jt = s.delta_ref.find(kDatasetReference);
                return jt != s.delta_ref.end() && jt->second == it->second;
              });
      if (found) reference = it->second;
    }
    if (!found) {
      res.reasons.push_back(BlockReason::reference_unavailable);
      res.notes.push_back("per_dataset reference needs a probe carrying one constant 'dataset' value");
      return res;
    }
  }

  // With c the absorbed weight, the target keeps the source score and
  // reference, runs at unit weight and temperature beta * c, so that
  // M_src = c * M_tgt and beta_src * M_src = beta_tgt * M_tgt.
  const double c = absorbed;
  MethodConfig cfg;
  cfg.method = target;
  cfg.beta = obj.beta * c;
  cfg.reference = reference;
  cfg.penalties = nf.penalty_coeffs;
  switch (target) {
    case Method::DPO:
    case Method::RRHF:
      break;
    case Method::PPO_RM: {
      const auto it = cfg.penalties.find(kKlAnchor);
      cfg.kl_coef = it == cfg.penalties.end() ? 0.0 : it->second;
      if (it != cfg.penalties.end()) cfg.penalties.erase(it);
      break;
    }
    case Method::ORPO:
      cfg.offset_mode = OffsetMode::fixed;
      break;
    case Method::KTO_GRPO:
      cfg.weight_mode = WeightMode::product;
      cfg.factors = kept_factors;
      break;
  }
  if (obj.link != LinkKind::identity || obj.loss != LossKind::logistic || obj.score.type != ScoreType::logpi)
    res.notes.push_back("source score/link/loss differ from the target's defaults; margins are preserved");
  if (c != 1.0) {
    res.scale_applied = c;
    res.notes.push_back("target margins are source margins divided by c; beta absorbs c");
  }
  res.outcome = Outcome::converted;
  res.target = std::move(cfg);
  return res;
}

// to_gkpo -> canonical bytes -> parse -> from_gkpo, back to the same method.
inline MethodConfig roundtrip(const MethodConfig& cfg) {
  const GkpoObject obj = parse(canonical_document(to_gkpo(cfg)));
  auto res = from_gkpo(obj, cfg.method);
  if (res.outcome != Outcome::converted) {
    std::string why;
    for (auto r : res.reasons) why += (why.empty() ? "" : ",") + std::string(to_string(r));
    throw DomainError("blocked", "round-trip blocked: " + why);
  }
  return *res.target;
}

// Accepts either a GKPO document or a flat adapter config (told apart by a
// top-level "method" key).
inline GkpoObject spec_from_json(const json& j) {
  if (j.is_object() && j.contains("method")) return to_gkpo(config_from_json(j));
  return from_json(j);
}

inline json conversion_to_json(const ConversionResult& r) {
  json out = {{"outcome", r.outcome == Outcome::converted ? "converted" : "blocked"}};
  json reasons = json::array();
  for (auto x : r.reasons) reasons.push_back(to_string(x));
  out["reasons"] = reasons;
  out["notes"] = r.notes;
  if (r.target) out["target"] = config_to_json(*r.target);
  if (r.scale_applied) out["scale_applied"] = *r.scale_applied;
  return out;
}

}  // namespace opal
