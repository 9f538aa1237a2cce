#pragma once

// Links, losses, the full pairwise objective l(g(beta*M)), closed-form
// gradients for linear scorers, and the rank/paired statistics used by the
// validation harness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "opal/error.hpp"
#include "opal/gkpo.hpp"
#include "opal/operator_algebra.hpp"

namespace opal {

// identity/logistic/tanh are strictly increasing; hinge (max(0, z)) is only
// weakly increasing and is excluded from loss-link invariance claims.
inline bool is_strictly_increasing(LinkKind link) {
  return link == LinkKind::identity || link == LinkKind::logistic || link == LinkKind::tanh;
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double apply_link(LinkKind link, double z) {
  switch (link) {
    case LinkKind::identity: return z;
    case LinkKind::logistic: return sigmoid(z);
    case LinkKind::tanh: return std::tanh(z);
    case LinkKind::hinge: return std::max(0.0, z);
    case LinkKind::custom: break;
  }
  throw DomainError("custom_link", "custom links cannot be evaluated");
}

inline double link_derivative(LinkKind link, double z) {
  switch (link) {
    case LinkKind::identity: return 1.0;
    case LinkKind::logistic: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
    case LinkKind::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case LinkKind::hinge: return z > 0.0 ? 1.0 : 0.0;
    case LinkKind::custom: break;
  }
  throw DomainError("custom_link", "custom links cannot be evaluated");
}

inline double apply_loss(LossKind loss, double v) {
  switch (loss) {
    case LossKind::logistic:
      // log(1 + exp(-v)) without overflow
      return std::max(0.0, -v) + std::log1p(std::exp(-std::abs(v)));
    case LossKind::bce:
      if (!(v > 0.0 && v < 1.0)) throw DomainError("bce_domain", "bce loss needs a link output in (0, 1)");
      return -std::log(v);
    case LossKind::hinge: return std::max(0.0, 1.0 - v);
    case LossKind::mse: return (v - 1.0) * (v - 1.0);
    case LossKind::custom: break;
  }
  throw DomainError("custom_loss", "custom losses cannot be evaluated");
}

inline double loss_derivative(LossKind loss, double v) {
  switch (loss) {
    case LossKind::logistic: return -sigmoid(-v);
    case LossKind::bce:
      if (!(v > 0.0 && v < 1.0)) throw DomainError("bce_domain", "bce loss needs a link output in (0, 1)");
      return -1.0 / v;
    case LossKind::hinge: return v < 1.0 ? -1.0 : 0.0;
    case LossKind::mse: return 2.0 * (v - 1.0);
    case LossKind::custom: break;
  }
  throw DomainError("custom_loss", "custom losses cannot be evaluated");
}

inline double objective(LossKind loss, LinkKind link, double beta, double m) {
  if (!(beta > 0.0)) throw DomainError("beta_domain", "beta must be positive");
  return apply_loss(loss, apply_link(link, beta * m));
}

// d/dM of l(g(beta*M)).
inline double objective_slope(LossKind loss, LinkKind link, double beta, double m) {
  const double z = beta * m;
  return loss_derivative(loss, apply_link(link, z)) * link_derivative(link, z) * beta;
}

inline int decision(double m) { return (m > 0.0) - (m < 0.0); }

enum class Side { pos, neg };

// Linear score u(x, y) = offset(x, y) + theta . features(x, y). The offset is
// a frozen, parameter-free part of the score (zero when absent).
struct LinearScorer {
  std::vector<double> theta;
  std::map<std::pair<std::string, Side>, std::vector<double>> features;
  std::map<std::pair<std::string, Side>, double> offsets;

  const std::vector<double>& feature(const std::string& prompt, Side side) const {
    const auto it = features.find({prompt, side});
    if (it == features.end()) throw DomainError("missing_features", "no features for prompt '" + prompt + "'");
    if (it->second.size() != theta.size())
      throw DomainError("dimension_mismatch", "feature dimension differs from theta for prompt '" + prompt + "'");
    return it->second;
  }

  double score(const std::string& prompt, Side side) const {
    const auto& x = feature(prompt, side);
    const auto off = offsets.find({prompt, side});
    return (off == offsets.end() ? 0.0 : off->second) + std::inner_product(x.begin(), x.end(), theta.begin(), 0.0);
  }

  std::vector<double> feature_gap(const std::string& prompt) const {
    const auto& xp = feature(prompt, Side::pos);
    const auto& xn = feature(prompt, Side::neg);
    std::vector<double> d(xp.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = xp[i] - xn[i];
    return d;
  }

  // Copy of `s` with delta_u replaced by this scorer's score difference.
  PairSample realize(PairSample s) const {
    s.delta_u = score(s.prompt_id, Side::pos) - score(s.prompt_id, Side::neg);
    return s;
  }
};

struct ObjectiveSpec {
  LossKind loss = LossKind::logistic;
  LinkKind link = LinkKind::identity;
  double beta = 1.0;
};

// Analytic gradient of l(g(beta*M_theta)) with M = c*(df - dref)*W; the
// gradient of M is c*W*dx since penalties, references and weights do not
// depend on theta.
inline std::vector<double> grad_objective(const LinearScorer& scorer, const NormalForm& nf, const PairSample& sample,
                                          const ObjectiveSpec& spec) {
  const PairSample s = scorer.realize(sample);
  const double slope = objective_slope(spec.loss, spec.link, spec.beta, margin(nf, s));
  const double dm = nf.scale * pair_weight(nf, s);
  auto g = scorer.feature_gap(s.prompt_id);
  for (auto& v : g) v *= slope * dm;
  return g;
}

// Same gradient computed through the uncollected ladder.
inline std::vector<double> grad_objective(const LinearScorer& scorer, const Ladder& ladder, const PairSample& sample,
                                          const ObjectiveSpec& spec) {
  const PairSample s = scorer.realize(sample);
  const LadderState st = apply_ladder(ladder, s);
  const double slope = objective_slope(spec.loss, spec.link, spec.beta, st.margin());
  auto g = scorer.feature_gap(s.prompt_id);
  for (auto& v : g) v *= slope * st.weight;
  return g;
}

// GKPO entry point; refuses objects whose weight depends on the score.
inline std::vector<double> grad_objective(const LinearScorer& scorer, const GkpoObject& obj, const PairSample& sample) {
  if (obj.weight.form == WeightForm::score_dependent || obj.weight.form == WeightForm::custom)
    throw DomainError("score_dependent_weight", "gradient equivalence does not cover score-dependent weights");
  return grad_objective(scorer, to_normal_form(obj), sample, ObjectiveSpec{obj.loss, obj.link, obj.beta});
}

// Kendall tau-b via Knight's O(n log n) merge-sort algorithm.
inline double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("length_mismatch", "kendall_tau needs equal-length inputs");
  const std::size_t n = a.size();
  if (n < 2) throw DomainError("too_short", "kendall_tau needs at least two observations");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
  });

  auto tie_pairs = [](std::uint64_t run) { return run * (run - 1) / 2; };
  std::uint64_t x_ties = 0, joint_ties = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && a[idx[j]] == a[idx[i]]) ++j;
    x_ties += tie_pairs(j - i);
    for (std::size_t k = i; k < j;) {
      std::size_t m = k + 1;
      while (m < j && b[idx[m]] == b[idx[k]]) ++m;
      joint_ties += tie_pairs(m - k);
      k = m;
    }
    i = j;
  }

  // Count strict inversions of b in the (a, b)-sorted order.
  std::vector<double> vals(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = b[idx[i]];
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (vals[j] < vals[i]) {
          swaps += mid - i;
          buf[k++] = vals[j++];
        } else {
          buf[k++] = vals[i++];
        }
      }
      while (i < mid) buf[k++] = vals[i++];
      while (j < hi) buf[k++] = vals[j++];
    }
    vals.swap(buf);
  }

  std::uint64_t y_ties = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && vals[j] == vals[i]) ++j;
    y_ties += tie_pairs(j - i);
    i = j;
  }

  const double n0 = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double denom = std::sqrt((n0 - static_cast<double>(x_ties)) * (n0 - static_cast<double>(y_ties)));
  if (denom == 0.0) throw DomainError("undefined_tau", "kendall_tau is undefined when one input is constant");
  const double s = n0 - static_cast<double>(x_ties) - static_cast<double>(y_ties) + static_cast<double>(joint_ties) -
                   2.0 * static_cast<double>(swaps);
  return std::clamp(s / denom, -1.0, 1.0);
}

// Exact two-sided McNemar test: binomial(n01 + n10, 1/2) on the discordant pairs.
inline double mcnemar_exact(std::uint64_t n01, std::uint64_t n10) {
  const std::uint64_t n = n01 + n10;
  if (n == 0) return 1.0;
  const std::uint64_t k = std::min(n01, n10);
  const double nd = static_cast<double>(n);
  const double log_half_n = nd * std::log(0.5);
  double tail = 0.0;
  for (std::uint64_t i = 0; i <= k; ++i) {
    const double id = static_cast<double>(i);
    tail += std::exp(std::lgamma(nd + 1.0) - std::lgamma(id + 1.0) - std::lgamma(nd - id + 1.0) + log_half_n);
  }
  return std::min(1.0, 2.0 * tail);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Linear-interpolation quantile of sorted data (q in [0, 1]).
inline double sorted_quantile(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Percentile bootstrap CI (2.5%, 97.5%) of the mean of `values`.
inline Interval bootstrap_mean_ci(std::span<const double> values, std::size_t resamples, std::uint64_t seed) {
  if (values.empty()) throw DomainError("empty_input", "bootstrap needs at least one value");
  if (resamples < 100) throw DomainError("too_few_resamples", "bootstrap needs at least 100 resamples");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) sum += values[pick(rng)];
    m = sum / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  return {sorted_quantile(means, 0.025), sorted_quantile(means, 0.975)};
}

inline Interval bootstrap_ci(std::span<const int> wins, std::size_t resamples, std::uint64_t seed) {
  std::vector<double> v(wins.begin(), wins.end());
  for (double x : v)
    if (x != 0.0 && x != 1.0) throw DomainError("not_binary", "wins must be 0 or 1");
  return bootstrap_mean_ci(v, resamples, seed);
}

}  // namespace opal
