#pragma once

// Operator ladders, one-pass collection to normal form, margin semantics and
// scale fixing.
//
// A ladder acts on a base pair (u, 1). Additive penalties subtract lambda*phi
// from the score, multiplicative weights multiply the pairwise weight, and
// reference adjusts add to the reference offset subtracted from the margin:
//
//   M = (df - dref) * W
//
// Penalties and factors are named handles; their numeric values for a given
// candidate pair come from a PairSample.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "opal/error.hpp"
#include "opal/gkpo.hpp"

namespace opal {

struct AdditivePenalty {
  double lambda = 0.0;
  std::string phi;
  bool operator==(const AdditivePenalty&) const = default;
};

struct MultiplicativeWeight {
  std::string omega;
  bool operator==(const MultiplicativeWeight&) const = default;
};

struct ReferenceAdjust {
  std::string rho;
  bool operator==(const ReferenceAdjust&) const = default;
};

using Operator = std::variant<AdditivePenalty, MultiplicativeWeight, ReferenceAdjust>;

struct Ladder {
  std::vector<Operator> ops;
  bool operator==(const Ladder&) const = default;
};

inline Ladder operator+(Ladder a, const Ladder& b) {
  a.ops.insert(a.ops.end(), b.ops.begin(), b.ops.end());
  return a;
}

// Numeric realization of one candidate pair (x; y+, y-).
struct PairSample {
  std::string prompt_id;
  double delta_u = 0.0;
  std::map<std::string, double> delta_phi;
  std::map<std::string, double> omega;
  std::map<std::string, double> delta_ref;
  bool operator==(const PairSample&) const = default;
};

// Reference term names used when a GKPO reference is realized per sample.
inline constexpr const char* kPromptReference = "prompt";
inline constexpr const char* kDatasetReference = "dataset";
inline constexpr const char* kCustomReference = "custom";

// Collected representative (f*, w*, dref) of a ladder.
//
// `scale` is the positive c of the equivalence (c*df, w/c, c*beta): the
// score-side gap (df - dref) is measured in units multiplied by `scale`, and
// `weight_constant` already carries the matching 1/c.
struct NormalForm {
  std::map<std::string, double> penalty_coeffs;
  std::vector<std::string> weight_factors;  // sorted multiset
  std::vector<std::string> ref_terms;       // sorted multiset
  double weight_constant = 1.0;
  double ref_offset = 0.0;
  double scale = 1.0;
  bool operator==(const NormalForm&) const = default;
};

// One pass over the ladder. If `visits` is given it is incremented once per
// operator touched.
inline NormalForm collect(const Ladder& ladder, std::size_t* visits = nullptr) {
  NormalForm nf;
  for (const auto& op : ladder.ops) {
    if (visits) ++*visits;
    std::visit(
        [&](const auto& o) {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, AdditivePenalty>) {
            nf.penalty_coeffs[o.phi] += o.lambda;
          } else if constexpr (std::is_same_v<T, MultiplicativeWeight>) {
            nf.weight_factors.push_back(o.omega);
          } else {
            nf.ref_terms.push_back(o.rho);
          }
        },
        op);
  }
  std::sort(nf.weight_factors.begin(), nf.weight_factors.end());
  std::sort(nf.ref_terms.begin(), nf.ref_terms.end());
  return nf;
}

namespace detail {

inline double lookup(const std::map<std::string, double>& m, const std::string& name, const char* what,
                     const PairSample& s) {
  const auto it = m.find(name);
  if (it == m.end())
    throw DomainError("missing_name", std::string("sample '") + s.prompt_id + "' has no " + what + " '" + name + "'");
  return it->second;
}

}  // namespace detail

// Collected score gap df* = du - sum_i lambda_i dphi_i (unscaled units).
inline double score_gap(const NormalForm& nf, const PairSample& s) {
  double df = s.delta_u;
  for (const auto& [name, lambda] : nf.penalty_coeffs) df -= lambda * detail::lookup(s.delta_phi, name, "delta_phi", s);
  return df;
}

inline double reference_gap(const NormalForm& nf, const PairSample& s) {
  double ref = nf.ref_offset;
  for (const auto& name : nf.ref_terms) ref += detail::lookup(s.delta_ref, name, "delta_ref", s);
  return ref;
}

inline double pair_weight(const NormalForm& nf, const PairSample& s) {
  double w = nf.weight_constant;
  for (const auto& name : nf.weight_factors) {
    const double omega = detail::lookup(s.omega, name, "omega", s);
    if (!(omega > 0.0)) throw DomainError("nonpositive_weight", "weight factor '" + name + "' must be positive");
    w *= omega;
  }
  return w;
}

inline double margin(const NormalForm& nf, const PairSample& s) {
  return nf.scale * (score_gap(nf, s) - reference_gap(nf, s)) * pair_weight(nf, s);
}

// State after applying a ladder step by step to the base pair of a sample.
struct LadderState {
  double delta_f = 0.0;
  double weight = 1.0;
  double delta_ref = 0.0;
  double margin() const { return (delta_f - delta_ref) * weight; }
};

// Direct (uncollected) evaluation of a ladder, operator by operator.
inline LadderState apply_ladder(const Ladder& ladder, const PairSample& s) {
  LadderState st{s.delta_u, 1.0, 0.0};
  for (const auto& op : ladder.ops) {
    if (const auto* a = std::get_if<AdditivePenalty>(&op)) {
      st.delta_f -= a->lambda * detail::lookup(s.delta_phi, a->phi, "delta_phi", s);
    } else if (const auto* m = std::get_if<MultiplicativeWeight>(&op)) {
      st.weight *= detail::lookup(s.omega, m->omega, "omega", s);
    } else {
      st.delta_ref += detail::lookup(s.delta_ref, std::get<ReferenceAdjust>(op).rho, "delta_ref", s);
    }
  }
  return st;
}

// Median with the even-length convention of averaging the two middle values.
inline double median(std::vector<double> values) {
  if (values.empty()) throw DomainError("empty_input", "median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

struct ScaleFix {
  NormalForm nf;
  double c = 1.0;
  double beta_multiplier = 1.0;
  bool scale_undefined = false;
};

// Chooses c so that the median of |c * df*| over the probe (zeros excluded)
// is 1, and applies (c*df, w/c, c*beta). If every probe gap is zero, c stays
// 1 and `scale_undefined` is set.
inline ScaleFix scale_fix(const NormalForm& nf, std::span<const PairSample> probe) {
  if (probe.empty()) throw DomainError("empty_probe", "scale fixing needs a nonempty probe set");
  std::vector<double> gaps;
  for (const auto& s : probe) {
    const double g = std::abs(nf.scale * score_gap(nf, s));
    if (g != 0.0) gaps.push_back(g);
  }
  ScaleFix out{nf, 1.0, 1.0, gaps.empty()};
  if (gaps.empty()) return out;
  out.c = 1.0 / median(std::move(gaps));
  out.beta_multiplier = out.c;
  out.nf.scale *= out.c;
  out.nf.weight_constant /= out.c;
  return out;
}

inline bool margins_equal(const NormalForm& a, const NormalForm& b, std::span<const PairSample> samples, double tol) {
  return std::all_of(samples.begin(), samples.end(),
                     [&](const PairSample& s) { return std::abs(margin(a, s) - margin(b, s)) <= tol; });
}

// Finds c > 0 with gap_b = c * gap_a and w_b = w_a / c on every sample, where
// gap = scale * (df* - dref). Agreement is checked to 1e-9 relative.
inline std::optional<double> recover_scale(const NormalForm& a, const NormalForm& b,
                                           std::span<const PairSample> samples) {
  constexpr double kRel = 1e-9;
  auto close = [](double x, double y) { return std::abs(x - y) <= kRel * std::max(std::abs(x), std::abs(y)); };
  std::optional<double> c;
  for (const auto& s : samples) {
    const double ga = a.scale * (score_gap(a, s) - reference_gap(a, s));
    const double gb = b.scale * (score_gap(b, s) - reference_gap(b, s));
    if (ga == 0.0) {
      if (gb != 0.0) return std::nullopt;
      continue;
    }
    const double ratio = gb / ga;
    if (!(ratio > 0.0)) return std::nullopt;
    if (!c) {
      c = ratio;
    } else if (!close(*c, ratio)) {
      return std::nullopt;
    }
  }
  if (!c) throw DomainError("degenerate_probe", "recover_scale needs a sample with nonzero gap");
  for (const auto& s : samples)
    if (!close(pair_weight(b, s) * *c, pair_weight(a, s))) return std::nullopt;
  return c;
}

// Normal form realized by a GKPO object. Penalties become collected
// coefficients (duplicates summed), product factors become named weights, a
// fixed reference becomes `ref_offset`, and per-dataset / per-prompt / custom
// references are read from the sample's `delta_ref` under a fixed term name.
inline NormalForm to_normal_form(const GkpoObject& obj) {
  NormalForm nf;
  for (const auto& p : obj.penalties) nf.penalty_coeffs[p.name] += p.lambda;
  switch (obj.weight.form) {
    case WeightForm::constant:
      nf.weight_constant = obj.weight.constant.value_or(1.0);
      break;
    case WeightForm::product:
      nf.weight_factors = obj.weight.factors;
      std::sort(nf.weight_factors.begin(), nf.weight_factors.end());
      break;
    default:
      throw DomainError("not_collectable", "weight form '" + std::string(to_string(obj.weight.form)) +
                                               "' has no score-independent normal form");
  }
  switch (obj.reference.form) {
    case ReferenceForm::fixed_zero:
    case ReferenceForm::fixed_scalar:
      nf.ref_offset = obj.reference.value.value_or(0.0);
      break;
    case ReferenceForm::per_dataset:
      nf.ref_terms = {kDatasetReference};
      break;
    case ReferenceForm::per_prompt:
      nf.ref_terms = {kPromptReference};
      break;
    case ReferenceForm::custom:
      nf.ref_terms = {kCustomReference};
      break;
  }
  return nf;
}

// Sample with every score-side quantity expressed in units multiplied by c.
inline PairSample rescaled(PairSample s, double c) {
  s.delta_u *= c;
  for (auto& [k, v] : s.delta_phi) v *= c;
  for (auto& [k, v] : s.delta_ref) v *= c;
  return s;
}

}  // namespace opal
