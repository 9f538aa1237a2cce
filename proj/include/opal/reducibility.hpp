#pragma once

// Detection of objectives outside the reducible class and construction of the
// finite witnesses for its three failure modes:
//
//   reference shift         two pairs whose (d - dref) signs no fixed reference reproduces
//   non-additive gate       items no nonnegative additive surrogate matches
//   score-dependent weight  two operator orders whose decisions differ

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "opal/error.hpp"
#include "opal/gkpo.hpp"
#include "opal/margin_engine.hpp"

namespace opal {

// ---------------------------------------------------------------------------
// Reference shift

struct ShiftPair {
  double raw_gap = 0.0;
  double delta_ref = 0.0;
  double margin() const { return raw_gap - delta_ref; }
};

// prompt1 carries the negative margin, prompt2 the positive one.
struct ShiftWitness {
  double raw_gap_1 = 0.0;
  double raw_gap_2 = 0.0;
  double delta_ref_1 = 0.0;
  double delta_ref_2 = 0.0;

  double margin_1() const { return raw_gap_1 - delta_ref_1; }
  double margin_2() const { return raw_gap_2 - delta_ref_2; }

  Witness to_witness() const {
    Witness w{{"delta_ref_prompt1", delta_ref_1}, {"delta_ref_prompt2", delta_ref_2}};
    if (raw_gap_1 == raw_gap_2) {
      w["raw_gap"] = raw_gap_1;
    } else {
      w["raw_gap_prompt1"] = raw_gap_1;
      w["raw_gap_prompt2"] = raw_gap_2;
    }
    return w;
  }
};

struct ShiftResult {
  std::optional<double> fixed_reference;  // set iff feasible
  std::optional<ShiftWitness> witness;    // set iff infeasible
  bool feasible() const { return fixed_reference.has_value(); }
};

// Intersects the open intervals {D : sign(d_i - D) = sign(d_i - dref_i)}.
// A feasible fixed reference is the mean of the given references when it lies
// inside the intersection, else the interval midpoint (or a unit step inside a
// half-line).
inline ShiftResult probe_shift(std::span<const ShiftPair> pairs) {
  if (pairs.empty()) throw DomainError("empty_input", "probe_shift needs at least one pair");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  double lo = -kInf, hi = kInf;
  std::size_t lo_idx = 0, hi_idx = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (!std::isfinite(p.raw_gap) || !std::isfinite(p.delta_ref))
      throw DomainError("non_finite", "probe_shift inputs must be finite");
    if (p.raw_gap == p.delta_ref) throw DomainError("degenerate_pair", "pair with d = delta_ref has zero margin");
    if (p.margin() > 0.0) {
      if (p.raw_gap < hi) hi = p.raw_gap, hi_idx = i;
    } else if (p.raw_gap > lo) {
      lo = p.raw_gap, lo_idx = i;
    }
  }
  if (lo < hi) {
    double mean = 0.0;
    for (const auto& p : pairs) mean += p.delta_ref;
    mean /= static_cast<double>(pairs.size());
    double pick;
    if (lo < mean && mean < hi) pick = mean;
    else if (std::isfinite(lo) && std::isfinite(hi)) pick = 0.5 * (lo + hi);
    else if (std::isfinite(hi)) pick = hi - 1.0;
    else pick = lo + 1.0;
    return {pick, std::nullopt};
  }
  const auto& neg = pairs[lo_idx];
  const auto& pos = pairs[hi_idx];
  return {std::nullopt, ShiftWitness{neg.raw_gap, pos.raw_gap, neg.delta_ref, pos.delta_ref}};
}

// ---------------------------------------------------------------------------
// Non-additive gate

struct GateItem {
  double phi1 = 0.0;
  double phi2 = 0.0;
  double value = 0.0;  // gated penalty Phi on this item
};

struct GateWitness {
  std::vector<GateItem> items;
  // The unique unconstrained solution when the system pins it down (it has a
  // negative entry, otherwise there would be no witness).
  std::optional<std::array<double, 2>> forced;

  Witness to_witness() const {
    std::vector<std::vector<double>> points;
    std::vector<double> values;
    for (const auto& it : items) {
      points.push_back({it.phi1, it.phi2});
      values.push_back(it.value);
    }
    Witness w{{"phi_pairs", points}};
    if (std::adjacent_find(values.begin(), values.end(), std::not_equal_to<>()) == values.end())
      w["phi_value_equal"] = values.front();
    else
      w["phi_values"] = values;
    return w;
  }
};

struct GateResult {
  std::optional<std::array<double, 2>> surrogate;  // nonnegative (lambda1', lambda2') iff feasible
  std::optional<GateWitness> witness;
  bool feasible() const { return surrogate.has_value(); }
};

namespace detail {

enum class SolveStatus { ok, rank_deficient, inconsistent };

struct SolveOutcome {
  SolveStatus status = SolveStatus::ok;
  std::vector<double> x;
};

// Gaussian elimination with partial pivoting on an m x k system; succeeds only
// when the columns are independent and the system is consistent.
inline SolveOutcome solve_exact(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t m = a.size();
  const std::size_t k = m ? a.front().size() : 0;
  double scale = 1.0;
  for (std::size_t i = 0; i < m; ++i) {
    scale = std::max(scale, std::abs(b[i]));
    for (double v : a[i]) scale = std::max(scale, std::abs(v));
  }
  const double tol = 1e-12 * scale;

  std::size_t row = 0;
  bool deficient = false;
  std::vector<std::size_t> pivot_col;
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t best = row;
    for (std::size_t r = row; r < m; ++r)
      if (std::abs(a[r][col]) > std::abs(a[best][col])) best = r;
    if (row >= m || std::abs(a[best][col]) <= tol) {
      deficient = true;
      continue;
    }
    std::swap(a[row], a[best]);
    std::swap(b[row], b[best]);
    for (std::size_t r = 0; r < m; ++r) {
      if (r == row) continue;
      const double f = a[r][col] / a[row][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < k; ++c) a[r][c] -= f * a[row][c];
      b[r] -= f * b[row];
    }
    pivot_col.push_back(col);
    ++row;
  }
  for (std::size_t r = row; r < m; ++r)
    if (std::abs(b[r]) > tol) return {SolveStatus::inconsistent, {}};
  if (deficient) return {SolveStatus::rank_deficient, {}};
  std::vector<double> x(k);
  for (std::size_t r = 0; r < pivot_col.size(); ++r) x[pivot_col[r]] = b[r] / a[r][pivot_col[r]];
  return {SolveStatus::ok, x};
}

}  // namespace detail

struct NonnegativeSolve {
  std::optional<std::vector<double>> feasible_point;
  std::optional<std::vector<double>> unique_solution;  // when A has full column rank and Ax = b is consistent
};

// Decides {x >= 0 : A x = b} for at most four unknowns by enumerating basic
// solutions: the set is nonempty iff some column subset with independent
// columns solves the system with nonnegative entries.
inline NonnegativeSolve solve_nonnegative(const std::vector<std::vector<double>>& a, const std::vector<double>& b) {
  const std::size_t m = a.size();
  const std::size_t n = m ? a.front().size() : 0;
  if (n > 4) throw DomainError("too_many_unknowns", "vertex enumeration is limited to four unknowns");
  NonnegativeSolve out;

  auto full = detail::solve_exact(a, b);
  if (full.status == detail::SolveStatus::ok) out.unique_solution = full.x;

  for (unsigned mask = 0; mask < (1u << n) && !out.feasible_point; ++mask) {
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < n; ++j)
      if (mask & (1u << j)) cols.push_back(j);
    std::vector<std::vector<double>> sub(m, std::vector<double>(cols.size()));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < cols.size(); ++c) sub[i][c] = a[i][cols[c]];
    const auto res = detail::solve_exact(sub, b);
    if (res.status != detail::SolveStatus::ok) continue;
    if (std::any_of(res.x.begin(), res.x.end(), [](double v) { return v < -1e-12; })) continue;
    std::vector<double> x(n, 0.0);
    for (std::size_t c = 0; c < cols.size(); ++c) x[cols[c]] = std::max(0.0, res.x[c]);
    out.feasible_point = x;
  }
  return out;
}

// Feasibility of lambda1'*phi1 + lambda2'*phi2 = Phi on every item with
// lambda' >= 0.
inline GateResult probe_gate(std::span<const GateItem> items) {
  if (items.empty()) throw DomainError("empty_input", "probe_gate needs at least one item");
  std::vector<std::vector<double>> a;
  std::vector<double> b;
  for (const auto& it : items) {
    if (!std::isfinite(it.phi1) || !std::isfinite(it.phi2) || !std::isfinite(it.value))
      throw DomainError("non_finite", "probe_gate inputs must be finite");
    a.push_back({it.phi1, it.phi2});
    b.push_back(it.value);
  }
  const auto sol = solve_nonnegative(a, b);
  GateResult out;
  if (sol.feasible_point) {
    out.surrogate = std::array<double, 2>{(*sol.feasible_point)[0], (*sol.feasible_point)[1]};
    return out;
  }
  GateWitness w{{items.begin(), items.end()}, std::nullopt};
  if (sol.unique_solution) w.forced = std::array<double, 2>{(*sol.unique_solution)[0], (*sol.unique_solution)[1]};
  out.witness = std::move(w);
  return out;
}

// ---------------------------------------------------------------------------
// Score-dependent weight

// psi(x) = value_below if x < threshold, else value_at_or_above.
struct PiecewisePsi {
  double threshold = 0.0;
  double value_below = 2.0;
  double value_at_or_above = 0.5;

  double operator()(double x) const { return x < threshold ? value_below : value_at_or_above; }
  bool constant() const { return value_below == value_at_or_above; }
};

struct ScoreOrders {
  double order1_margin = 0.0;  // weight locked on the pre-penalty gap
  double order2_margin = 0.0;  // penalty applied first, weight on the post-penalty gap
  bool flipped = false;
};

struct ScoreWitness {
  double delta_u = 0.0;
  double penalty_shift = 0.0;
  double psi_neg = 0.0;  // psi below the threshold
  double psi_pos = 0.0;  // psi at or above the threshold

  Witness to_witness() const {
    return {{"delta_u", delta_u}, {"penalty_shift", penalty_shift}, {"psi_neg", psi_neg}, {"psi_pos", psi_pos}};
  }
};

// Evaluates both interleavings without checking that psi is nonconstant.
inline ScoreOrders score_orders(double delta_u, double penalty_shift, const PiecewisePsi& psi) {
  const double post = delta_u + penalty_shift;
  ScoreOrders o{delta_u * psi(delta_u), post * psi(post), false};
  o.flipped = decision(o.order1_margin) != decision(o.order2_margin);
  return o;
}

inline ScoreOrders probe_score(double delta_u, double penalty_shift, const PiecewisePsi& psi) {
  if (!(psi.value_below > 0.0 && psi.value_at_or_above > 0.0))
    throw DomainError("nonpositive_weight", "psi values must be positive");
  if (psi.constant()) throw DomainError("constant_psi", "probe_score needs a nonconstant psi");
  if (!std::isfinite(delta_u) || !std::isfinite(penalty_shift))
    throw DomainError("non_finite", "probe_score inputs must be finite");
  return score_orders(delta_u, penalty_shift, psi);
}

// ---------------------------------------------------------------------------
// Classification

struct ScoreEvidence {
  double delta_u = 0.0;
  double penalty_shift = 0.0;
  PiecewisePsi psi;
};

struct ReducibilityEvidence {
  std::vector<ShiftPair> reference_pairs;
  std::vector<GateItem> gate_items;
  std::optional<ScoreEvidence> score;
};

// inside_R iff the reference is fixed (fixed_zero, fixed_scalar or a
// dataset-constant per_dataset), no penalty is gated and the weight is
// constant or a product of score-independent factors. Witnesses are attached
// for each reason whose evidence actually certifies one.
inline ReducibilityBlock classify(const GkpoObject& obj, const ReducibilityEvidence& evidence = {}) {
  std::set<Reason> reasons;
  if (obj.reference.form == ReferenceForm::per_prompt || obj.reference.form == ReferenceForm::custom)
    reasons.insert(Reason::reference_shift);
  if (std::any_of(obj.penalties.begin(), obj.penalties.end(), [](const auto& p) { return p.meta_gate.value_or(false); }))
    reasons.insert(Reason::non_additive_gate);
  if (obj.weight.form == WeightForm::score_dependent || obj.weight.form == WeightForm::custom)
    reasons.insert(Reason::score_dependent_weight);

  ReducibilityBlock block;
  block.inside_R = reasons.empty();
  block.reasons.assign(reasons.begin(), reasons.end());
  auto merge = [&](const Witness& w) { block.witness.insert(w.begin(), w.end()); };

  if (reasons.contains(Reason::reference_shift) && !evidence.reference_pairs.empty()) {
    const auto r = probe_shift(evidence.reference_pairs);
    if (r.witness) merge(r.witness->to_witness());
  }
  if (reasons.contains(Reason::non_additive_gate) && !evidence.gate_items.empty()) {
    const auto r = probe_gate(evidence.gate_items);
    if (r.witness) merge(r.witness->to_witness());
  }
  if (reasons.contains(Reason::score_dependent_weight) && evidence.score) {
    const auto& s = *evidence.score;
    if (probe_score(s.delta_u, s.penalty_shift, s.psi).flipped)
      merge(ScoreWitness{s.delta_u, s.penalty_shift, s.psi.value_below, s.psi.value_at_or_above}.to_witness());
  }
  return block;
}

// ---------------------------------------------------------------------------
// Re-checking stored witnesses

namespace detail {

inline std::optional<double> witness_number(const Witness& w, const std::string& key) {
  const auto it = w.find(key);
  if (it == w.end()) return std::nullopt;
  if (const auto* d = std::get_if<double>(&it->second)) return *d;
  return std::nullopt;
}

}  // namespace detail

inline std::optional<std::vector<ShiftPair>> shift_pairs_from_witness(const Witness& w) {
  using detail::witness_number;
  const auto r1 = witness_number(w, "delta_ref_prompt1");
  const auto r2 = witness_number(w, "delta_ref_prompt2");
  auto g1 = witness_number(w, "raw_gap_prompt1");
  auto g2 = witness_number(w, "raw_gap_prompt2");
  if (const auto g = witness_number(w, "raw_gap")) g1 = g2 = g;
  if (!r1 || !r2 || !g1 || !g2) return std::nullopt;
  return std::vector<ShiftPair>{{*g1, *r1}, {*g2, *r2}};
}

inline std::optional<std::vector<GateItem>> gate_items_from_witness(const Witness& w) {
  const auto it = w.find("phi_pairs");
  if (it == w.end()) return std::nullopt;
  const auto* rows = std::get_if<std::vector<std::vector<double>>>(&it->second);
  if (!rows) return std::nullopt;
  std::vector<double> values;
  if (const auto v = detail::witness_number(w, "phi_value_equal")) {
    values.assign(rows->size(), *v);
  } else if (const auto jt = w.find("phi_values"); jt != w.end()) {
    if (const auto* arr = std::get_if<std::vector<double>>(&jt->second)) values = *arr;
  }
  if (values.size() != rows->size()) return std::nullopt;
  std::vector<GateItem> items;
  for (std::size_t i = 0; i < rows->size(); ++i) {
    if ((*rows)[i].size() != 2) return std::nullopt;
    items.push_back({(*rows)[i][0], (*rows)[i][1], values[i]});
  }
  return items;
}

inline std::optional<ScoreEvidence> score_evidence_from_witness(const Witness& w) {
  using detail::witness_number;
  const auto du = witness_number(w, "delta_u");
  const auto shift = witness_number(w, "penalty_shift");
  const auto neg = witness_number(w, "psi_neg");
  const auto pos = witness_number(w, "psi_pos");
  if (!du || !shift || !neg || !pos) return std::nullopt;
  return ScoreEvidence{*du, *shift, PiecewisePsi{0.0, *neg, *pos}};
}

// True iff the stored witness payload for `reason` is a genuine witness when
// its probe is re-run.
inline bool certify(Reason reason, const Witness& w) {
  try {
    switch (reason) {
      case Reason::reference_shift: {
        const auto pairs = shift_pairs_from_witness(w);
        return pairs && !probe_shift(*pairs).feasible();
      }
      case Reason::non_additive_gate: {
        const auto items = gate_items_from_witness(w);
        return items && !probe_gate(*items).feasible();
      }
      case Reason::score_dependent_weight: {
        const auto ev = score_evidence_from_witness(w);
        return ev && probe_score(ev->delta_u, ev->penalty_shift, ev->psi).flipped;
      }
    }
  } catch (const DomainError&) {
    return false;
  }
  return false;
}

}  // namespace opal
