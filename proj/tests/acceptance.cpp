// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

#include "oracles.hpp"
#include "opal/opal.hpp"

using namespace opal;
using testutil::fixture;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void near(double got, double want, double tol, const std::string& what) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: got %.15g want %.15g", what.c_str(), got, want);
    expect(std::abs(got - want) <= tol, buf);
  }
};

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<PairSample> probe_file(const std::string& name) {
  return samples_from_jsonl(testutil::slurp(testutil::source_path("fixtures/probes/" + name)));
}

MethodConfig adapter(const std::string& name) {
  return config_from_json(json::parse(testutil::slurp(testutil::source_path("configs/adapters/" + name))));
}

void worked_margins(Check& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dpo = to_normal_form(fixture("dpo.json"));
  c.near(margin(dpo, PairSample{"x", -1.20 - -1.70, {}, {}, {}}), 0.40, 1e-12, "DPO margin");

  NormalForm rrhf;
  rrhf.penalty_coeffs = {{"rank_margin_1", 0.50}, {"rank_margin_2", 0.10}};
  const PairSample rs{"x", 0.50, {{"rank_margin_1", 0.20}, {"rank_margin_2", -0.10}}, {}, {}};
  c.near(margin(rrhf, rs), 0.41, 1e-12, "RRHF margin");

  const auto a = to_normal_form(fixture("example_a_dpo.json"));
  c.near(margin(a, PairSample{"x", -1.10 - -1.60, {}, {}, {}}), 0.35, 1e-12, "Example A margin");

  const auto b = to_normal_form(fixture("example_b_rrhf.json"));
  const PairSample bs{"x", 0.50, {{"rank_margin_1", 0.10}, {"rank_margin_2", -0.05}}, {}, {}};
  c.near(score_gap(b, bs), 0.47, 1e-12, "Example B df");
  c.near(margin(b, bs), 0.47, 1e-12, "Example B margin");
  c.expect(elapsed(t0) < 1.0, "runtime over 1 s");
}

void shift_reproduction(Check& c) {
  const std::vector<ShiftPair> pairs{{0.20, 0.50}, {0.20, -0.50}};
  c.near(pairs[0].margin(), -0.30, 1e-12, "margin 1");
  c.near(pairs[1].margin(), 0.70, 1e-12, "margin 2");
  const auto r = probe_shift(pairs);
  c.expect(!r.feasible() && r.witness, "expected infeasible");
  if (r.witness) {
    json got = json::object();
    for (const auto& [key, value] : r.witness->to_witness()) got[key] = detail::witness_to_json(value);
    const json want = json::parse(R"({"raw_gap":0.20,"delta_ref_prompt1":0.50,"delta_ref_prompt2":-0.50})");
    c.expect(got == want, "witness keys/values differ: " + got.dump());
  }
  const auto ec = shift_pairs_from_witness(fixture("example_c_orpo.json").reducibility.witness);
  c.expect(ec.has_value(), "Example C witness unreadable");
  if (ec) {
    c.near((*ec)[0].margin(), -0.10, 1e-12, "Example C margin 1");
    c.near((*ec)[1].margin(), 0.40, 1e-12, "Example C margin 2");
    c.expect(!probe_shift(*ec).feasible(), "Example C should be infeasible");
  }
}

void gate_reproduction(Check& c) {
  const std::vector<GateItem> items{{1, 10, 1}, {0, 1, 1}};
  const auto r = probe_gate(items);
  c.expect(!r.feasible(), "two-item gate should be infeasible");
  c.expect(r.witness && r.witness->forced, "no forced solution reported");
  if (r.witness && r.witness->forced) {
    c.near((*r.witness->forced)[0], -9.0, 1e-12, "lambda1'");
    c.near((*r.witness->forced)[1], 1.0, 1e-12, "lambda2'");
  }
  const auto doc = json::parse(testutil::slurp(testutil::source_path("fixtures/probes/gate_instances.json")));
  int n = 0;
  for (const auto& inst : doc["instances"]) {
    const auto rows = inst["items"].get<std::vector<std::vector<double>>>();
    std::vector<GateItem> its;
    for (const auto& row : rows) its.push_back({row[0], row[1], row[2]});
    c.expect(probe_gate(its).feasible() == oracle::gate_grid(rows).feasible,
             "grid disagreement on " + inst["name"].get<std::string>());
    ++n;
  }
  c.detail += (c.detail.empty() ? "" : "; ") + std::to_string(n) + " instances";
}

void score_reproduction(Check& c) {
  const auto o = probe_score(0.40, -0.80, PiecewisePsi{0.0, 2.0, 0.5});
  c.near(o.order1_margin, 0.20, 1e-12, "order 1 margin");
  c.near(o.order2_margin, -0.80, 1e-12, "order 2 margin");
  c.expect(o.flipped, "no decision flip");
}

void scale_fixing(Check& c) {
  const auto probe = probe_file("example_f_probe.jsonl");
  const auto src = fixture("example_f.json");
  const auto fix = scale_fix(src, probe);
  c.near(fix.c, 0.5, 1e-15, "c");
  c.near(*fix.object.weight.constant, 1.0, 1e-15, "scaled weight");
  c.near(fix.object.beta / src.beta, 0.5, 1e-15, "beta multiplier");
  const auto before = to_normal_form(src), after = to_normal_form(fix.object);
  for (std::size_t i = 0; i < probe.size(); ++i)
    c.expect(decision(margin(before, probe[i])) == decision(margin(after, fix.probe[i])),
             "decision changed on probe " + std::to_string(i));
  c.expect(opal_hash(src, probe) == opal_hash(fixture("example_f_scaled.json")), "hash differs from pre-scaled fixture");
}

void hash_properties(Check& c) {
  const auto t0 = std::chrono::steady_clock::now();
  for (const char* name : {"dpo.json", "rrhf.json", "gate.json", "kto_product.json", "score_dependent.json"}) {
    const auto once = canonical_document(fixture(name));
    c.expect(canonical_document(parse(once)) == once, std::string("not idempotent: ") + name);
  }
  c.expect(opal_hash(fixture("rrhf.json")) == opal_hash(fixture("rrhf_reordered.json")), "penalty order changes hash");

  auto flagged = fixture("orpo_shift.json");
  flagged.weight = {WeightForm::score_dependent, std::nullopt, {}, "psi"};
  flagged.reducibility.reasons = {Reason::score_dependent_weight, Reason::reference_shift};
  auto flipped = flagged;
  std::reverse(flipped.reducibility.reasons.begin(), flipped.reducibility.reasons.end());
  c.expect(opal_hash(flagged) == opal_hash(flipped), "reason order changes hash");

  const auto base = fixture("dpo.json");
  const auto h0 = opal_hash(base);
  auto bumped = base;
  *bumped.reference.value += 1e-5;
  c.expect(opal_hash(bumped) != h0, "insensitive to 1e-5");
  bumped = base;
  *bumped.reference.value += 4e-7;
  c.expect(opal_hash(bumped) == h0, "sensitive below 4e-7");
  bumped = base;
  bumped.provenance.opal_hash = std::string(64, 'f');
  bumped.provenance.notes = "x";
  c.expect(opal_hash(bumped) == h0, "hash field or provenance leaks into hash");

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-2.0, 2.0), pos(0.1, 3.0);
  int fuzzed = 0;
  for (int i = 0; i < 1000; ++i) {
    GkpoObject obj;
    obj.beta = pos(rng);
    obj.weight = {WeightForm::product, std::nullopt, {"f" + std::to_string(i % 7), "g", "a"}, std::nullopt};
    obj.reference = {ReferenceForm::fixed_scalar, u(rng)};
    for (int k = 0; k < 4; ++k) obj.penalties.push_back({"p" + std::to_string((i + k) % 9), u(rng), std::nullopt});
    obj.provenance.citations = {"z", "b", "m"};
    const auto h = opal_hash(obj);
    auto perm = obj;
    std::shuffle(perm.penalties.begin(), perm.penalties.end(), rng);
    std::shuffle(perm.weight.factors.begin(), perm.weight.factors.end(), rng);
    std::shuffle(perm.provenance.citations.begin(), perm.provenance.citations.end(), rng);
    c.expect(opal_hash(perm) == h, "permutation changed hash at " + std::to_string(i));
    if (opal_hash(parse(canonical_document(obj))) != h) c.expect(false, "fuzz round-trip at " + std::to_string(i));
    ++fuzzed;
  }
  const double secs = elapsed(t0);
  c.expect(secs < 10.0, "fuzz over 10 s");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%d fuzzed in %.2f s", fuzzed, secs);
  if (c.ok) c.detail = buf;
}

void round_trips(Check& c) {
  for (const char* name : {"dpo.json", "rrhf.json"}) {
    const auto cfg = adapter(name);
    c.expect(roundtrip(cfg) == cfg, std::string("round-trip changed ") + name);
  }
  const auto ppo = to_gkpo(adapter("ppo_rm.json"));
  MethodConfig folded;
  folded.method = Method::DPO;
  folded.reference = 0.1;
  folded.penalties = {{kKlAnchor, 0.05}};
  const auto dpo = to_gkpo(folded);
  c.expect(opal_hash(ppo) == opal_hash(dpo), "PPO_RM and folded DPO hashes differ");
  std::mt19937_64 rng(98);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const PairSample s{"p", u(rng), {{kKlAnchor, u(rng)}}, {}, {}};
    worst = std::max(worst, std::abs(ppo.beta * margin(to_normal_form(ppo), s) -
                                     dpo.beta * margin(to_normal_form(dpo), s)));
  }
  c.expect(worst <= 1e-9, "margin gap " + std::to_string(worst));
}

void gradient_equivalence(Check& c) {
  std::mt19937_64 rng(97);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> pos(0.3, 2.0);
  double worst_eq = 0.0, worst_fd = 0.0;
  for (int t = 0; t < 100; ++t) {
    LinearScorer sc;
    sc.theta.resize(6);
    for (auto& v : sc.theta) v = 0.5 * n(rng);
    for (Side side : {Side::pos, Side::neg}) {
      std::vector<double> x(6);
      for (auto& v : x) v = n(rng);
      sc.features[{"p", side}] = x;
    }
    Ladder ladder{{AdditivePenalty{0.3 * n(rng), "a"}, MultiplicativeWeight{"w"}, ReferenceAdjust{"r"},
                   AdditivePenalty{0.3 * n(rng), "b"}, AdditivePenalty{0.1 * n(rng), "a"}}};
    const PairSample s{"p", 0.0, {{"a", n(rng)}, {"b", n(rng)}}, {{"w", pos(rng)}}, {{"r", 0.2 * n(rng)}}};
    const ObjectiveSpec spec{t % 2 ? LossKind::mse : LossKind::logistic, t % 2 ? LinkKind::tanh : LinkKind::identity,
                             0.8};
    const auto nf = collect(ladder);
    const auto g1 = grad_objective(sc, ladder, s, spec);
    const auto g2 = grad_objective(sc, nf, s, spec);
    for (std::size_t k = 0; k < g1.size(); ++k) {
      worst_eq = std::max(worst_eq, std::abs(g1[k] - g2[k]));
      auto f = [&](double x) {
        LinearScorer s2 = sc;
        s2.theta[k] = x;
        return objective(spec.loss, spec.link, spec.beta, margin(nf, s2.realize(s)));
      };
      const double fd = oracle::central_difference(f, sc.theta[k], 1e-5);
      worst_fd = std::max(worst_fd, std::abs(g2[k] - fd) / std::max({std::abs(g2[k]), std::abs(fd), 1e-3}));
    }
  }
  c.expect(worst_eq <= 1e-12, "ladder vs normal form " + std::to_string(worst_eq));
  c.expect(worst_fd <= 1e-6, "finite difference relative error " + std::to_string(worst_fd));
  char buf[96];
  std::snprintf(buf, sizeof buf, "max |dg| %.1e, max fd rel %.1e", worst_eq, worst_fd);
  if (c.ok) c.detail = buf;
}

void harness(Check& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto load = [](const char* name) {
    return harness_config_from_json(json::parse(testutil::slurp(testutil::source_path(name))));
  };
  const auto h1 = load("configs/h1_default.json");
  const auto h2 = load("configs/h2_default.json");
  c.expect(h1.seeds.size() == 10 && h2.seeds.size() == 10, "default configs must cover 10 seeds");

  const auto r1 = run_harness(h1);
  for (const auto& run : r1.report["runs"]) {
    c.expect(run["kendall_tau"].get<double>() >= 1.0 - 1e-12, "tau below 1 at seed " + run["seed"].dump());
    c.expect(run["decision_match"].get<double>() == 1.0, "decision match below 100% at seed " + run["seed"].dump());
  }
  const auto r2 = run_harness(h2);
  for (const auto& run : r2.report["runs"]) {
    const std::string seed = run["seed"].dump();
    c.expect(run["slice_mcnemar_p"].get<double>() < 0.01, "slice p >= 0.01 at seed " + seed);
    c.expect(run["slice_discordant"].get<std::uint64_t>() >= 200,
             "fewer than 200 discordant slice pairs at seed " + seed);
    c.expect(run["observed_flips"] == run["predicted_flips"], "predicted flips not all observed at seed " + seed);
    c.expect(run["direction_ok"] == true, "slice moved against prediction at seed " + seed);
  }
  const double secs = elapsed(t0);
  c.expect(secs < 60.0, "harness over 60 s");
  char buf[96];
  std::snprintf(buf, sizeof buf, "h1+h2, 10 seeds each, %.2f s", secs);
  if (c.ok) c.detail = buf;
}

void statistics(Check& c) {
  c.near(mcnemar_exact(9, 1), 0.021484, 1e-6, "McNemar(9,1)");
  c.near(oracle::mcnemar_enumerated(9, 1), mcnemar_exact(9, 1), 1e-12, "McNemar vs enumeration");
  const std::vector<double> a{1, 2, 3, 4}, b{1, 3, 2, 4};
  c.near(kendall_tau(a, b), 2.0 / 3.0, 1e-6, "Kendall tau");
  c.near(oracle::kendall_tau_b(a, b), kendall_tau(a, b), 1e-12, "Kendall vs brute force");
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void(Check&)>>> criteria{
      {"worked-margin golden suite", worked_margins},
      {"SHIFT reproduction", shift_reproduction},
      {"GATE reproduction", gate_reproduction},
      {"SCORE reproduction", score_reproduction},
      {"scale fixing", scale_fixing},
      {"hash properties", hash_properties},
      {"round-trips", round_trips},
      {"gradient equivalence", gradient_equivalence},
      {"harness", harness},
      {"statistics oracles", statistics},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("exception: ") + e.what();
    }
    failed += !c.ok;
    std::printf("%s [%zu] %s (%.3f s)%s%s\n", c.ok ? "PASS" : "FAIL", i + 1, criteria[i].first, elapsed(t0),
                c.detail.empty() ? "" : " ", c.detail.c_str());
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
