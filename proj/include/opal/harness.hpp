#pragma once

// Desk-scale validation harness: synthetic pair datasets, full-batch gradient
// descent on linear scorers, and the two experiments
//
//   H1  two specs with the same opal hash train to indistinguishable scorers
//   H2  a per-prompt reference shift flips exactly the pairs its witness
//       predicts on a targeted slice
//
// A win is a positive margin on a pair (the labeled preference is always the
// `pos` side).
//
// Pair line format (JSONL, one pair per line, fields in this order):
//   prompt_id, slice, x_pos, x_neg, base_gap, delta_phi, delta_ref
// `base_gap` is the frozen part of u(pos) - u(neg); the trainable part is
// theta . (x_pos - x_neg).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "opal/adapters.hpp"
#include "opal/canonical.hpp"
#include "opal/error.hpp"
#include "opal/gkpo.hpp"
#include "opal/margin_engine.hpp"
#include "opal/operator_algebra.hpp"

namespace opal {

enum class ShiftProfile { none, constant, two_prompt, targeted };

template <>
struct EnumNames<ShiftProfile> {
  static constexpr auto table = std::to_array<std::pair<ShiftProfile, std::string_view>>(
      {{ShiftProfile::none, "none"},
       {ShiftProfile::constant, "constant"},
       {ShiftProfile::two_prompt, "paper-shift"},
       {ShiftProfile::targeted, "targeted"}});
};

inline constexpr const char* kTargetSlice = "target_slice";
inline constexpr const char* kRestSlice = "rest";
inline constexpr double kConstantShift = 0.25;
inline constexpr double kTargetedShift = -0.5;

struct SyntheticPair {
  PairSample sample;  // delta_u is realized by the scorer
  std::vector<double> x_pos;
  std::vector<double> x_neg;
  double base_gap = 0.0;
  bool operator==(const SyntheticPair&) const = default;
};

struct SyntheticDataset {
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  ShiftProfile profile = ShiftProfile::none;
  std::vector<SyntheticPair> pairs;
  std::map<std::string, std::vector<std::size_t>> slices;
  bool operator==(const SyntheticDataset&) const = default;

  std::string slice_of(std::size_t i) const {
    for (const auto& [name, idx] : slices)
      if (std::binary_search(idx.begin(), idx.end(), i)) return name;
    return kRestSlice;
  }
};

struct DatasetSpec {
  std::size_t size = 2000;
  std::size_t dim = 8;
  ShiftProfile profile = ShiftProfile::targeted;
  std::uint64_t seed = 1;
  double slice_fraction = 0.3;
  double label_noise = 0.1;
  std::vector<std::string> penalty_names{"kl_anchor"};
};

// Slice pairs have identical features on both sides, so their score gap is
// the frozen base gap and training cannot move them. Their base gaps
// alternate in sign, so exactly half of a targeted slice changes sign under
// the -0.5 shift. The two-prompt profile puts the two-prompt pattern
// (d = 0.2, dref = +0.5 / -0.5) first.
inline SyntheticDataset gen_dataset(const DatasetSpec& spec) {
  if (spec.size < 2) throw DomainError("degenerate_size", "dataset size must be at least 2");
  if (spec.dim < 1) throw DomainError("degenerate_size", "feature dimension must be at least 1");
  if (!(spec.slice_fraction >= 0.0 && spec.slice_fraction <= 1.0))
    throw DomainError("degenerate_size", "slice_fraction must lie in [0, 1]");

  SyntheticDataset ds{spec.seed, spec.dim, spec.profile, {}, {}};
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<double> truth(spec.dim);
  for (auto& v : truth) v = normal(rng);

  auto draw = [&] {
    std::vector<double> x(spec.dim);
    for (auto& v : x) v = normal(rng);
    return x;
  };
  const double rest_ref = spec.profile == ShiftProfile::constant ? kConstantShift : 0.0;
  const double slice_ref = spec.profile == ShiftProfile::constant   ? kConstantShift
                           : spec.profile == ShiftProfile::targeted ? kTargetedShift
                                                                    : 0.0;

  std::size_t n_slice = static_cast<std::size_t>(std::floor(spec.slice_fraction * static_cast<double>(spec.size)));
  if (spec.profile == ShiftProfile::two_prompt) n_slice = 2;
  if (spec.profile == ShiftProfile::targeted) n_slice = std::max<std::size_t>(n_slice, 1);

  for (std::size_t i = 0; i < spec.size; ++i) {
    SyntheticPair p;
    std::ostringstream id;
    id << "p" << std::setw(6) << std::setfill('0') << i;
    p.sample.prompt_id = id.str();
    if (i < n_slice) {
      p.x_neg = draw();
      p.x_pos = p.x_neg;
      for (const auto& name : spec.penalty_names) p.sample.delta_phi[name] = 0.0;
      if (spec.profile == ShiftProfile::two_prompt) {
        p.base_gap = 0.2;
        p.sample.delta_ref[kPromptReference] = i == 0 ? 0.5 : -0.5;
      } else {
        const double mag = 0.05 + 0.4 * unit(rng);
        p.base_gap = i % 2 == 0 ? mag : -mag;
        p.sample.delta_ref[kPromptReference] = slice_ref;
      }
      ds.slices[kTargetSlice].push_back(i);
    } else {
      p.x_neg = draw();
      auto step = draw();
      double along = 0.0;
      for (std::size_t k = 0; k < spec.dim; ++k) along += truth[k] * step[k];
      const bool flip = (along < 0.0) != (unit(rng) < spec.label_noise);
      p.x_pos.resize(spec.dim);
      for (std::size_t k = 0; k < spec.dim; ++k) p.x_pos[k] = p.x_neg[k] + (flip ? -step[k] : step[k]);
      for (const auto& name : spec.penalty_names) p.sample.delta_phi[name] = 0.2 * normal(rng);
      p.sample.delta_ref[kPromptReference] = rest_ref;
      ds.slices[kRestSlice].push_back(i);
    }
    ds.pairs.push_back(std::move(p));
  }
  ds.slices.try_emplace(kTargetSlice);
  ds.slices.try_emplace(kRestSlice);
  return ds;
}

inline LinearScorer make_scorer(const SyntheticDataset& ds, std::vector<double> theta) {
  LinearScorer s;
  s.theta = std::move(theta);
  for (const auto& p : ds.pairs) {
    s.features[{p.sample.prompt_id, Side::pos}] = p.x_pos;
    s.features[{p.sample.prompt_id, Side::neg}] = p.x_neg;
    s.offsets[{p.sample.prompt_id, Side::pos}] = p.base_gap;
  }
  return s;
}

// ---------------------------------------------------------------------------
// JSONL pairs

inline std::string pair_to_line(const SyntheticDataset& ds, std::size_t i) {
  const auto& p = ds.pairs[i];
  nlohmann::ordered_json j;
  j["prompt_id"] = p.sample.prompt_id;
  j["slice"] = ds.slice_of(i);
  j["x_pos"] = p.x_pos;
  j["x_neg"] = p.x_neg;
  j["base_gap"] = p.base_gap;
  j["delta_phi"] = p.sample.delta_phi;
  j["delta_ref"] = p.sample.delta_ref;
  return j.dump();
}

inline std::string dataset_to_jsonl(const SyntheticDataset& ds) {
  std::string out;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) out += pair_to_line(ds, i) + "\n";
  return out;
}

inline SyntheticDataset dataset_from_jsonl(std::string_view text) {
  SyntheticDataset ds;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      SyntheticPair p;
      p.sample.prompt_id = j.at("prompt_id").get<std::string>();
      p.x_pos = j.at("x_pos").get<std::vector<double>>();
      p.x_neg = j.at("x_neg").get<std::vector<double>>();
      p.base_gap = j.at("base_gap").get<double>();
      p.sample.delta_phi = j.value("delta_phi", std::map<std::string, double>{});
      p.sample.delta_ref = j.value("delta_ref", std::map<std::string, double>{});
      if (p.x_pos.size() != p.x_neg.size() || (ds.dim && p.x_pos.size() != ds.dim))
        throw DomainError("dimension_mismatch", "feature sizes disagree");
      ds.dim = p.x_pos.size();
      ds.slices[j.value("slice", std::string(kRestSlice))].push_back(ds.pairs.size());
      ds.pairs.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DomainError("bad_pair_line", "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Training

struct TrainParams {
  std::size_t steps = 200;
  double learning_rate = 0.5;
  double init_scale = 0.01;
  std::uint64_t seed = 1;
};

struct TrainRun {
  LinearScorer scorer;
  NormalForm nf;
  ObjectiveSpec objective;
  TrainParams params;
  std::vector<double> margins;  // final margin per pair, dataset order
};

namespace detail {

inline std::vector<double> init_theta(std::size_t dim, const TrainParams& hp) {
  std::mt19937_64 rng(hp.seed);
  std::normal_distribution<double> normal(0.0, hp.init_scale);
  std::vector<double> theta(dim);
  for (auto& v : theta) v = normal(rng);
  return theta;
}

}  // namespace detail

// Full-batch gradient descent on the mean objective. Every per-pair quantity
// that does not depend on theta is folded once into (offset, weight):
//   M_i = scale * (theta . dx_i + offset_i) * w_i
inline TrainRun train(const GkpoObject& spec, const SyntheticDataset& ds, const TrainParams& hp) {
  if (!(hp.learning_rate > 0.0)) throw DomainError("bad_hyperparameter", "learning_rate must be positive");
  if (ds.pairs.empty()) throw DomainError("empty_input", "cannot train on an empty dataset");
  TrainRun run{make_scorer(ds, detail::init_theta(ds.dim, hp)), to_normal_form(spec),
               ObjectiveSpec{spec.loss, spec.link, spec.beta}, hp, {}};
  const NormalForm& nf = run.nf;

  const std::size_t n = ds.pairs.size();
  std::vector<std::vector<double>> dx(n);
  std::vector<double> offset(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    PairSample s = ds.pairs[i].sample;
    s.delta_u = 0.0;
    dx[i] = run.scorer.feature_gap(s.prompt_id);
    offset[i] = ds.pairs[i].base_gap + score_gap(nf, s) - reference_gap(nf, s);
    w[i] = nf.scale * pair_weight(nf, s);
  }

  auto& theta = run.scorer.theta;
  std::vector<double> grad(ds.dim);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t step = 0; step < hp.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double gap = offset[i];
      for (std::size_t k = 0; k < ds.dim; ++k) gap += theta[k] * dx[i][k];
      const double g = objective_slope(run.objective.loss, run.objective.link, run.objective.beta, gap * w[i]) * w[i];
      for (std::size_t k = 0; k < ds.dim; ++k) grad[k] += g * dx[i][k];
    }
    for (std::size_t k = 0; k < ds.dim; ++k) theta[k] -= hp.learning_rate * inv_n * grad[k];
  }

  run.margins.reserve(n);
  for (const auto& p : ds.pairs) run.margins.push_back(margin(nf, run.scorer.realize(p.sample)));
  return run;
}

inline std::vector<int> wins(std::span<const double> margins) {
  std::vector<int> out;
  out.reserve(margins.size());
  for (double m : margins) out.push_back(decision(m) > 0 ? 1 : 0);
  return out;
}

inline double win_rate(std::span<const double> margins, std::span<const std::size_t> idx) {
  if (idx.empty()) return 0.0;
  std::size_t k = 0;
  for (auto i : idx) k += decision(margins[i]) > 0;
  return static_cast<double>(k) / static_cast<double>(idx.size());
}

// ---------------------------------------------------------------------------
// H1

struct H1Params {
  TrainParams train;
  std::size_t resamples = 1000;
  std::uint64_t bootstrap_seed = 7;
};

struct H1Report {
  std::string hash_a;
  std::string hash_b;
  std::uint64_t seed = 0;
  std::size_t n_eval = 0;
  double tau = 0.0;
  double decision_match = 0.0;
  double win_rate_a = 0.0;
  double win_rate_b = 0.0;
  Interval win_diff_ci;
  std::uint64_t n01 = 0;
  std::uint64_t n10 = 0;
  double mcnemar_p = 1.0;
  double max_margin_diff = 0.0;
  // tau >= 0.99 and decision match >= 99.5%
  bool pass() const { return tau >= 0.99 && decision_match >= 0.995; }
};

inline H1Report run_h1(const GkpoObject& spec_a, const GkpoObject& spec_b, const SyntheticDataset& ds,
                       const H1Params& hp) {
  H1Report r;
  r.hash_a = opal_hash(spec_a).hex;
  r.hash_b = opal_hash(spec_b).hex;
  if (r.hash_a != r.hash_b)
    throw DomainError("hash_mismatch", "H1 needs specs with identical opal_hash (" + r.hash_a.substr(0, 12) + " vs " +
                                           r.hash_b.substr(0, 12) + ")");
  const TrainRun a = train(spec_a, ds, hp.train);
  const TrainRun b = train(spec_b, ds, hp.train);
  r.seed = hp.train.seed;
  r.n_eval = a.margins.size();
  r.tau = kendall_tau(a.margins, b.margins);

  std::size_t match = 0;
  std::vector<double> diff(r.n_eval);
  for (std::size_t i = 0; i < r.n_eval; ++i) {
    const int da = decision(a.margins[i]);
    const int db = decision(b.margins[i]);
    match += da == db;
    const int wa = da > 0, wb = db > 0;
    r.n01 += (!wa && wb);
    r.n10 += (wa && !wb);
    diff[i] = wa - wb;
    r.max_margin_diff = std::max(r.max_margin_diff, std::abs(a.margins[i] - b.margins[i]));
  }
  r.decision_match = static_cast<double>(match) / static_cast<double>(r.n_eval);
  std::vector<std::size_t> all(r.n_eval);
  std::iota(all.begin(), all.end(), std::size_t{0});
  r.win_rate_a = win_rate(a.margins, all);
  r.win_rate_b = win_rate(b.margins, all);
  r.win_diff_ci = bootstrap_mean_ci(diff, hp.resamples, hp.bootstrap_seed);
  r.mcnemar_p = mcnemar_exact(r.n01, r.n10);
  return r;
}

// ---------------------------------------------------------------------------
// H2

struct H2Report {
  std::string hash_base;
  std::string hash_shifted;
  std::uint64_t seed = 0;
  std::size_t n_eval = 0;
  std::size_t slice_size = 0;
  double global_win_base = 0.0;
  double global_win_shifted = 0.0;
  double slice_win_base = 0.0;
  double slice_win_shifted = 0.0;
  std::uint64_t slice_n01 = 0;  // base loses, shifted wins
  std::uint64_t slice_n10 = 0;  // base wins, shifted loses
  double slice_mcnemar_p = 1.0;
  // Slice pairs whose sign the shift is predicted to change, evaluated with
  // the base run's scores, and how many of them flipped that way.
  std::size_t predicted_flips = 0;
  std::size_t observed_flips = 0;
  // Slice pairs whose shifted-run sign matches the predicted sign.
  std::size_t predicted_signs = 0;
  std::size_t observed_signs = 0;
  int predicted_direction = 0;  // sign of the predicted slice win-rate change
  bool direction_ok = false;

  std::uint64_t slice_discordant() const { return slice_n01 + slice_n10; }
  double flip_agreement() const {
    return predicted_flips == 0 ? 1.0 : static_cast<double>(observed_flips) / static_cast<double>(predicted_flips);
  }
};

inline H2Report run_h2(const GkpoObject& base, const GkpoObject& shifted, const SyntheticDataset& ds,
                       const TrainParams& hp) {
  if (!base.reducibility.inside_R || !classify(base).reasons.empty())
    throw DomainError("base_not_reducible", "H2 base spec must lie inside the reducible class");
  const auto& rs = shifted.reducibility.reasons;
  if (std::find(rs.begin(), rs.end(), Reason::reference_shift) == rs.end())
    throw DomainError("missing_flag", "H2 shifted spec must carry the reference_shift flag");
  if (shifted.reducibility.witness.empty())
    throw DomainError("missing_witness", "H2 shifted spec must carry a reference_shift witness");
  const auto slice_it = ds.slices.find(kTargetSlice);
  if (slice_it == ds.slices.end() || slice_it->second.empty())
    throw DomainError("empty_slice", "H2 needs a nonempty target slice");
  const auto& slice = slice_it->second;

  H2Report r;
  r.hash_base = opal_hash(base).hex;
  r.hash_shifted = opal_hash(shifted).hex;
  r.seed = hp.seed;
  const TrainRun b = train(base, ds, hp);
  const TrainRun s = train(shifted, ds, hp);
  r.n_eval = b.margins.size();
  r.slice_size = slice.size();

  std::vector<std::size_t> all(r.n_eval);
  std::iota(all.begin(), all.end(), std::size_t{0});
  r.global_win_base = win_rate(b.margins, all);
  r.global_win_shifted = win_rate(s.margins, all);
  r.slice_win_base = win_rate(b.margins, slice);
  r.slice_win_shifted = win_rate(s.margins, slice);

  long predicted_change = 0;
  for (auto i : slice) {
    const int wb = decision(b.margins[i]) > 0;
    const int ws = decision(s.margins[i]) > 0;
    r.slice_n01 += (!wb && ws);
    r.slice_n10 += (wb && !ws);

    const PairSample at_base = b.scorer.realize(ds.pairs[i].sample);
    const int predicted = decision(margin(s.nf, at_base));
    ++r.predicted_signs;
    r.observed_signs += decision(s.margins[i]) == predicted;
    if (predicted != decision(b.margins[i])) {
      ++r.predicted_flips;
      r.observed_flips += decision(s.margins[i]) == predicted;
      predicted_change += (predicted > 0) - wb;
    }
  }
  r.slice_mcnemar_p = mcnemar_exact(r.slice_n01, r.slice_n10);
  r.predicted_direction = (predicted_change > 0) - (predicted_change < 0);
  const double moved = r.slice_win_shifted - r.slice_win_base;
  r.direction_ok = r.predicted_direction == (moved > 0) - (moved < 0);
  return r;
}

// ---------------------------------------------------------------------------
// Reports

inline json h1_to_json(const H1Report& r) {
  return {{"experiment", "h1"},
          {"seed", r.seed},
          {"opal_hash_a", r.hash_a},
          {"opal_hash_b", r.hash_b},
          {"n_eval", r.n_eval},
          {"kendall_tau", r.tau},
          {"decision_match", r.decision_match},
          {"win_rate_a", r.win_rate_a},
          {"win_rate_b", r.win_rate_b},
          {"win_diff_ci", {r.win_diff_ci.lo, r.win_diff_ci.hi}},
          {"mcnemar_n01", r.n01},
          {"mcnemar_n10", r.n10},
          {"mcnemar_p", r.mcnemar_p},
          {"max_margin_diff", r.max_margin_diff},
          {"pass", r.pass()}};
}

inline json h2_to_json(const H2Report& r) {
  return {{"experiment", "h2"},
          {"seed", r.seed},
          {"opal_hash_base", r.hash_base},
          {"opal_hash_shifted", r.hash_shifted},
          {"n_eval", r.n_eval},
          {"slice_size", r.slice_size},
          {"global_win_rate", {r.global_win_base, r.global_win_shifted}},
          {"slice_win_rate", {r.slice_win_base, r.slice_win_shifted}},
          {"slice_mcnemar_n01", r.slice_n01},
          {"slice_mcnemar_n10", r.slice_n10},
          {"slice_mcnemar_p", r.slice_mcnemar_p},
          {"slice_discordant", r.slice_discordant()},
          {"predicted_flips", r.predicted_flips},
          {"observed_flips", r.observed_flips},
          {"predicted_flip_agreement", r.flip_agreement()},
          {"predicted_signs", r.predicted_signs},
          {"observed_signs", r.observed_signs},
          {"predicted_direction", r.predicted_direction},
          {"direction_ok", r.direction_ok}};
}

namespace detail {

inline std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace detail

inline std::string h1_table(std::span<const H1Report> runs) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "seed" << std::right << std::setw(10) << "tau" << std::setw(10) << "match"
     << std::setw(10) << "win_a" << std::setw(10) << "win_b" << std::setw(24) << "win_diff_ci" << std::setw(10)
     << "p" << std::setw(6) << "pass" << "\n";
  for (const auto& r : runs) {
    os << std::left << std::setw(6) << r.seed << std::right << std::setw(10) << detail::fixed(r.tau, 4)
       << std::setw(10) << detail::fixed(r.decision_match, 4) << std::setw(10) << detail::fixed(r.win_rate_a, 4)
       << std::setw(10) << detail::fixed(r.win_rate_b, 4) << std::setw(24)
       << ("[" + detail::fixed(r.win_diff_ci.lo, 4) + ", " + detail::fixed(r.win_diff_ci.hi, 4) + "]")
       << std::setw(10) << detail::fixed(r.mcnemar_p, 4) << std::setw(6) << (r.pass() ? "yes" : "no") << "\n";
  }
  return os.str();
}

inline std::string h2_table(std::span<const H2Report> runs) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "seed" << std::right << std::setw(12) << "glob_base" << std::setw(12)
     << "glob_shift" << std::setw(12) << "slice_base" << std::setw(12) << "slice_shift" << std::setw(8) << "disc"
     << std::setw(12) << "p" << std::setw(10) << "flips" << std::setw(5) << "dir" << "\n";
  for (const auto& r : runs) {
    std::ostringstream p;
    p << std::scientific << std::setprecision(2) << r.slice_mcnemar_p;
    os << std::left << std::setw(6) << r.seed << std::right << std::setw(12) << detail::fixed(r.global_win_base, 4)
       << std::setw(12) << detail::fixed(r.global_win_shifted, 4) << std::setw(12)
       << detail::fixed(r.slice_win_base, 4) << std::setw(12) << detail::fixed(r.slice_win_shifted, 4)
       << std::setw(8) << r.slice_discordant() << std::setw(12) << p.str() << std::setw(10)
       << (std::to_string(r.observed_flips) + "/" + std::to_string(r.predicted_flips)) << std::setw(5)
       << (r.direction_ok ? "ok" : "bad") << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Experiment configs
//
//   {"experiment": "h1" | "h2",
//    "spec_a", "spec_b"            (h1)   GKPO documents or adapter configs
//    "spec_base", "spec_shifted"   (h2)
//    "dataset": {"size", "dim", "profile", "slice_fraction", "label_noise"},
//    "train":   {"steps", "learning_rate", "init_scale"},
//    "seeds":   [..],               each seed drives both data and init
//    "bootstrap": {"resamples", "seed"}}                               (h1)
//
// Malformed configs raise SchemaError.

enum class Experiment { h1, h2 };

template <>
struct EnumNames<Experiment> {
  static constexpr auto table =
      std::to_array<std::pair<Experiment, std::string_view>>({{Experiment::h1, "h1"}, {Experiment::h2, "h2"}});
};

struct HarnessConfig {
  Experiment experiment = Experiment::h1;
  GkpoObject spec_a;  // h2: base
  GkpoObject spec_b;  // h2: shifted
  DatasetSpec dataset;
  TrainParams train;
  std::vector<std::uint64_t> seeds;
  std::size_t resamples = 1000;
  std::uint64_t bootstrap_seed = 7;
};

namespace detail {

inline std::uint64_t as_count(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) type_error(path, "nonnegative integer");
  return v.get<std::uint64_t>();
}

inline GkpoObject spec_at(const json& v, const std::string& path) {
  try {
    return spec_from_json(v);
  } catch (const SchemaError& e) {
    throw SchemaError(e.code(), path + "." + e.path(), e.what());
  }
}

}  // namespace detail

inline HarnessConfig harness_config_from_json(const json& root) {
  detail::ObjectReader r(root, "");
  HarnessConfig cfg;
  cfg.experiment = r.enumeration<Experiment>("experiment");
  const bool h1 = cfg.experiment == Experiment::h1;
  cfg.spec_a = detail::spec_at(r.required(h1 ? "spec_a" : "spec_base"), h1 ? "spec_a" : "spec_base");
  cfg.spec_b = detail::spec_at(r.required(h1 ? "spec_b" : "spec_shifted"), h1 ? "spec_b" : "spec_shifted");
  cfg.dataset.profile = h1 ? ShiftProfile::none : ShiftProfile::targeted;

  if (const json* d = r.optional("dataset")) {
    detail::ObjectReader dr(*d, "dataset");
    if (dr.has("size")) cfg.dataset.size = detail::as_count(dr.required("size"), "dataset.size");
    if (dr.has("dim")) cfg.dataset.dim = detail::as_count(dr.required("dim"), "dataset.dim");
    if (dr.has("profile")) cfg.dataset.profile = dr.enumeration<ShiftProfile>("profile");
    if (dr.has("slice_fraction")) cfg.dataset.slice_fraction = dr.number("slice_fraction");
    if (dr.has("label_noise")) cfg.dataset.label_noise = dr.number("label_noise");
    dr.finish();
  }
  if (const json* t = r.optional("train")) {
    detail::ObjectReader tr(*t, "train");
    if (tr.has("steps")) cfg.train.steps = detail::as_count(tr.required("steps"), "train.steps");
    if (tr.has("learning_rate")) cfg.train.learning_rate = tr.number("learning_rate");
    if (tr.has("init_scale")) cfg.train.init_scale = tr.number("init_scale");
    tr.finish();
  }
  if (const json* s = r.optional("seeds")) {
    if (!s->is_array() || s->empty()) detail::type_error("seeds", "nonempty array of integers");
    for (std::size_t i = 0; i < s->size(); ++i)
      cfg.seeds.push_back(detail::as_count((*s)[i], "seeds[" + std::to_string(i) + "]"));
  } else {
    cfg.seeds = {1};
  }
  if (const json* b = r.optional("bootstrap")) {
    if (!h1) throw SchemaError("unknown_key", "bootstrap", "bootstrap settings only apply to h1");
    detail::ObjectReader br(*b, "bootstrap");
    if (br.has("resamples")) cfg.resamples = detail::as_count(br.required("resamples"), "bootstrap.resamples");
    if (br.has("seed")) cfg.bootstrap_seed = detail::as_count(br.required("seed"), "bootstrap.seed");
    br.finish();
  }
  r.finish();
  if (!(cfg.train.learning_rate > 0.0))
    throw SchemaError("domain_error", "train.learning_rate", "learning_rate must be positive");
  return cfg;
}

struct HarnessResult {
  json report;
  std::string table;
  bool pass = false;
};

// Runs every seed and summarizes. H1 passes when every seed meets the
// tau/decision-match bar; H2 when every seed has slice p < 0.01, at least 200
// discordant slice pairs, all predicted flips observed and the slice win rate
// moving the predicted way.
inline HarnessResult run_harness(const HarnessConfig& cfg) {
  HarnessResult out;
  json runs = json::array();
  if (cfg.experiment == Experiment::h1) {
    std::vector<H1Report> reports;
    for (auto seed : cfg.seeds) {
      DatasetSpec ds = cfg.dataset;
      ds.seed = seed;
      TrainParams tp = cfg.train;
      tp.seed = seed;
      reports.push_back(run_h1(cfg.spec_a, cfg.spec_b, gen_dataset(ds), H1Params{tp, cfg.resamples, cfg.bootstrap_seed}));
      runs.push_back(h1_to_json(reports.back()));
    }
    double min_tau = 1.0, min_match = 1.0;
    for (const auto& r : reports) {
      min_tau = std::min(min_tau, r.tau);
      min_match = std::min(min_match, r.decision_match);
    }
    out.pass = std::all_of(reports.begin(), reports.end(), [](const H1Report& r) { return r.pass(); });
    out.report = {{"experiment", "h1"},
                  {"runs", runs},
                  {"summary", {{"seeds", reports.size()}, {"min_tau", min_tau}, {"min_decision_match", min_match},
                               {"pass", out.pass}}}};
    out.table = h1_table(reports);
  } else {
    std::vector<H2Report> reports;
    for (auto seed : cfg.seeds) {
      DatasetSpec ds = cfg.dataset;
      ds.seed = seed;
      TrainParams tp = cfg.train;
      tp.seed = seed;
      reports.push_back(run_h2(cfg.spec_a, cfg.spec_b, gen_dataset(ds), tp));
      runs.push_back(h2_to_json(reports.back()));
    }
    double max_p = 0.0, min_agree = 1.0;
    std::uint64_t min_disc = std::numeric_limits<std::uint64_t>::max();
    bool directions = true;
    for (const auto& r : reports) {
      max_p = std::max(max_p, r.slice_mcnemar_p);
      min_agree = std::min(min_agree, r.flip_agreement());
      min_disc = std::min(min_disc, r.slice_discordant());
      directions = directions && r.direction_ok;
    }
    out.pass = max_p < 0.01 && min_disc >= 200 && min_agree == 1.0 && directions;
    out.report = {{"experiment", "h2"},
                  {"runs", runs},
                  {"summary", {{"seeds", reports.size()}, {"max_slice_mcnemar_p", max_p},
                               {"min_slice_discordant", min_disc}, {"min_predicted_flip_agreement", min_agree},
                               {"all_directions_ok", directions}, {"pass", out.pass}}}};
    out.table = h2_table(reports);
  }
  out.report["specs"] = {{"a", {{"opal_hash", opal_hash(cfg.spec_a).hex}, {"canonical", json::parse(canonicalize(cfg.spec_a).bytes)}}},
                         {"b", {{"opal_hash", opal_hash(cfg.spec_b).hex}, {"canonical", json::parse(canonicalize(cfg.spec_b).bytes)}}}};
  return out;
}

}  // namespace opal
