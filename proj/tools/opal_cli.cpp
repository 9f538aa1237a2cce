// opal: command-line front end.
//
// Exit codes: 0 success, 1 validation or domain failure, 2 usage error.
// Every nonzero exit writes exactly one JSON line {"error", "message", ...}
// to stderr. Machine output is JSON on stdout; --pretty prints a human
// summary instead.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "opal/opal.hpp"

namespace fs = std::filesystem;
using opal::json;

namespace {

enum Exit { kOk = 0, kFail = 1, kUsage = 2 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Failure {
  int code;
  json line;
};

[[noreturn]] void fail(int code, const std::string& error, const std::string& message, json extra = json::object()) {
  json line = {{"error", error}, {"message", message}};
  for (auto& [k, v] : extra.items()) line[k] = v;
  throw Failure{code, line};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(kUsage, "unreadable_file", "cannot read '" + path + "'", {{"path", path}});
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::string& path, int code_on_error) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(code_on_error, "syntax_error", e.what(), {{"path", path}, {"position", e.byte}});
  }
}

// Maps library errors on a loaded document to the failure line.
[[noreturn]] void fail_from(const opal::Error& e, int code, const std::string& file) {
  json extra = {{"path", file}};
  if (const auto* s = dynamic_cast<const opal::SchemaError*>(&e)) extra["field"] = s->path();
  if (const auto* s = dynamic_cast<const opal::SyntaxError*>(&e)) extra["position"] = s->position();
  fail(code, e.code(), e.what(), extra);
}

opal::GkpoObject load_object(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return opal::parse(text);
  } catch (const opal::Error& e) {
    fail_from(e, kFail, path);
  }
}

std::vector<opal::PairSample> load_probe(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return opal::samples_from_jsonl(text);
  } catch (const opal::Error& e) {
    fail_from(e, kUsage, path);
  }
}

double parse_number(const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v)) throw UsageError("not a number: '" + text + "'");
  return v;
}

std::vector<std::string> split(const std::string& s, const std::string& seps) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto j = s.find_first_of(seps, i);
    const auto end = j == std::string::npos ? s.size() : j;
    if (end > i) out.push_back(s.substr(i, end - i));
    i = end + 1;
  }
  return out;
}

std::string fixed2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

json canonical(const json& j) { return json::parse(opal::canonical_json(j)); }

void emit(const json& j) { std::cout << opal::canonical_json(j) << "\n"; }

json witness_json(const opal::Witness& w) {
  json out = json::object();
  for (const auto& [k, v] : w) out[k] = opal::detail::witness_to_json(v);
  return out;
}

// ---------------------------------------------------------------------------

int cmd_validate(const std::string& path, bool pretty) {
  const std::string text = read_file(path);
  json violations = json::array();
  try {
    const auto obj = opal::parse(text);
    for (const auto& v : opal::validate(obj)) violations.push_back({{"path", v.path}, {"message", v.message}});
  } catch (const opal::SchemaError& e) {
    violations.push_back({{"path", e.path()}, {"message", e.what()}, {"kind", e.code()}});
  } catch (const opal::SyntaxError& e) {
    violations.push_back({{"path", ""}, {"message", e.what()}, {"kind", e.code()}, {"position", e.position()}});
  }
  const bool ok = violations.empty();
  if (pretty) {
    std::cout << path << ": " << (ok ? "valid" : "invalid") << "\n";
    for (const auto& v : violations)
      std::cout << "  " << v["path"].get<std::string>() << ": " << v["message"].get<std::string>() << "\n";
  } else {
    std::cout << json{{"valid", ok}, {"violations", violations}}.dump() << "\n";
  }
  if (!ok)
    fail(kFail, "validation_failed", std::to_string(violations.size()) + " violation(s)",
         {{"path", path}, {"first", violations.front()["path"]}});
  return kOk;
}

std::optional<std::vector<opal::PairSample>> probe_for(const std::string& probe_path, bool scale_fix) {
  if (scale_fix && probe_path.empty()) throw UsageError("--scale-fix needs --probe");
  if (!scale_fix) return std::nullopt;
  return load_probe(probe_path);
}

int cmd_canonicalize(const std::string& path, const std::string& probe_path, bool scale_fix, bool pretty) {
  const auto obj = load_object(path);
  const auto probe = probe_for(probe_path, scale_fix);
  try {
    std::optional<std::span<const opal::PairSample>> span;
    if (probe) span = *probe;
    const std::string doc = opal::canonical_document(obj, span);
    std::cout << (pretty ? json::parse(doc).dump(2) : doc) << "\n";
  } catch (const opal::Error& e) {
    fail_from(e, kFail, path);
  }
  return kOk;
}

int cmd_hash(const std::string& path, const std::string& probe_path, bool scale_fix, bool emit_canonical,
             bool pretty) {
  const auto obj = load_object(path);
  const auto probe = probe_for(probe_path, scale_fix);
  try {
    std::optional<std::span<const opal::PairSample>> span;
    if (probe) span = *probe;
    const auto c = opal::canonicalize(obj, span);
    const auto hash = opal::opal_hash(obj, span);
    if (pretty) {
      std::cout << "opal_hash " << hash.hex << "\n";
      if (scale_fix) std::cout << "scale c   " << c.scale_applied << (c.scale_undefined ? " (undefined)" : "") << "\n";
      if (emit_canonical) std::cout << c.bytes << "\n";
      return kOk;
    }
    json out = {{"opal_hash", hash.hex}};
    if (scale_fix) {
      out["scale_applied"] = c.scale_applied;
      out["scale_undefined"] = c.scale_undefined;
    }
    if (emit_canonical) out["canonical"] = c.bytes;
    std::cout << out.dump() << "\n";
  } catch (const opal::Error& e) {
    fail_from(e, kFail, path);
  }
  return kOk;
}

int cmd_convert(const std::string& path, const std::string& to, const std::string& probe_path, bool pretty) {
  const json doc = read_json(path, kFail);
  std::vector<opal::PairSample> probe;
  if (!probe_path.empty()) probe = load_probe(probe_path);

  opal::GkpoObject obj;
  try {
    obj = opal::spec_from_json(doc);
  } catch (const opal::Error& e) {
    fail_from(e, kFail, path);
  }
  if (to == "gkpo" || to == "GKPO") {
    try {
      const std::string out = opal::canonical_document(obj);
      std::cout << (pretty ? json::parse(out).dump(2) : out) << "\n";
    } catch (const opal::Error& e) {
      fail_from(e, kFail, path);
    }
    return kOk;
  }
  const auto target = opal::enum_from_string<opal::Method>(to);
  if (!target) throw UsageError("unknown target method '" + to + "'");

  opal::ConversionResult res;
  try {
    std::optional<std::span<const opal::PairSample>> span;
    if (!probe.empty()) span = probe;
    res = opal::from_gkpo(obj, *target, span);
  } catch (const opal::Error& e) {
    fail_from(e, kFail, path);
  }
  const json out = opal::conversion_to_json(res);
  if (pretty) {
    std::cout << out["outcome"].get<std::string>() << " -> " << to << "\n";
    for (const auto& r : out["reasons"]) std::cout << "  reason: " << r.get<std::string>() << "\n";
    for (const auto& n : out["notes"]) std::cout << "  note:   " << n.get<std::string>() << "\n";
    if (res.target) std::cout << "  config: " << out["target"].dump() << "\n";
  } else {
    emit(out);
  }
  if (res.outcome == opal::Outcome::blocked) fail(kFail, "blocked", "conversion blocked", {{"reasons", out["reasons"]}});
  return kOk;
}

// probe shift <raw_gap> <ref1> <ref2> ...   or   probe shift --pairs "d,ref d,ref ..."
// probe gate "phi1,phi2,value ..." ...
// probe score <delta_u> <shift> <psi_neg> <psi_pos> [--threshold t]
int cmd_probe(const std::string& kind, const std::vector<std::string>& args, const std::string& file,
              double threshold, bool pretty) {
  std::vector<std::string> tokens;
  if (!file.empty()) {
    const json j = read_json(file, kUsage);
    if (!j.is_object() || !j.contains("args") || !j["args"].is_array())
      throw UsageError("probe file must be {\"args\": [...]}");
    for (const auto& a : j["args"]) tokens.push_back(a.is_string() ? a.get<std::string>() : a.dump());
  }
  for (const auto& a : args)
    for (auto& t : split(a, " \t\n")) tokens.push_back(t);

  if (kind == "shift") {
    std::vector<opal::ShiftPair> pairs;
    if (!tokens.empty() && tokens.front().find(',') != std::string::npos) {
      for (const auto& t : tokens) {
        const auto f = split(t, ",");
        if (f.size() != 2) throw UsageError("shift pair must be 'raw_gap,delta_ref': '" + t + "'");
        pairs.push_back({parse_number(f[0]), parse_number(f[1])});
      }
    } else {
      if (tokens.size() < 2) throw UsageError("shift needs a raw gap and at least one delta_ref");
      const double d = parse_number(tokens[0]);
      for (std::size_t i = 1; i < tokens.size(); ++i) pairs.push_back({d, parse_number(tokens[i])});
    }
    const auto r = opal::probe_shift(pairs);
    json margins = json::array();
    for (const auto& p : pairs) margins.push_back(p.margin());
    json out = {{"kind", "shift"}, {"feasible", r.feasible()}, {"margins", margins}};
    if (r.feasible()) {
      out["fixed_reference"] = *r.fixed_reference;
    } else {
      out["reasons"] = {"reference_shift"};
      out["witness"] = witness_json(r.witness->to_witness());
    }
    if (pretty) {
      std::cout << "shift: " << (r.feasible() ? "feasible" : "infeasible") << "\n";
      for (std::size_t i = 0; i < pairs.size(); ++i) std::cout << "  M" << i + 1 << " = " << fixed2(pairs[i].margin()) << "\n";
      if (r.feasible()) std::cout << "  fixed reference " << *r.fixed_reference << " reproduces every sign\n";
      else std::cout << "  witness " << canonical(out["witness"]).dump() << "\n";
    } else {
      emit(out);
    }
    return kOk;
  }

  if (kind == "gate") {
    std::vector<opal::GateItem> items;
    for (const auto& t : tokens) {
      const auto f = split(t, ",");
      if (f.size() != 3) throw UsageError("gate item must be 'phi1,phi2,value': '" + t + "'");
      items.push_back({parse_number(f[0]), parse_number(f[1]), parse_number(f[2])});
    }
    if (items.empty()) throw UsageError("gate needs at least one item");
    const auto r = opal::probe_gate(items);
    json out = {{"kind", "gate"}, {"feasible", r.feasible()}};
    if (r.feasible()) {
      out["surrogate"] = {{"lambda1", (*r.surrogate)[0]}, {"lambda2", (*r.surrogate)[1]}};
    } else {
      out["reasons"] = {"non_additive_gate"};
      out["witness"] = witness_json(r.witness->to_witness());
      if (r.witness->forced) out["forced"] = {{"lambda1", (*r.witness->forced)[0]}, {"lambda2", (*r.witness->forced)[1]}};
    }
    if (pretty) {
      std::cout << "gate: " << (r.feasible() ? "feasible" : "infeasible under nonnegativity") << "\n";
      if (r.feasible())
        std::cout << "  lambda1' = " << (*r.surrogate)[0] << ", lambda2' = " << (*r.surrogate)[1] << "\n";
      else if (r.witness->forced)
        std::cout << "  forced lambda1' = " << (*r.witness->forced)[0] << ", lambda2' = " << (*r.witness->forced)[1]
                  << "\n";
    } else {
      emit(out);
    }
    return kOk;
  }

  if (kind == "score") {
    if (tokens.size() != 4) throw UsageError("score needs delta_u, penalty_shift, psi_neg, psi_pos");
    const double du = parse_number(tokens[0]), shift = parse_number(tokens[1]);
    const opal::PiecewisePsi psi{threshold, parse_number(tokens[2]), parse_number(tokens[3])};
    opal::ScoreOrders o;
    try {
      o = opal::probe_score(du, shift, psi);
    } catch (const opal::DomainError& e) {
      fail(kFail, e.code(), e.what());
    }
    json out = {{"kind", "score"},
                {"order1_margin", o.order1_margin},
                {"order2_margin", o.order2_margin},
                {"flipped", o.flipped}};
    if (o.flipped) {
      out["reasons"] = {"score_dependent_weight"};
      out["witness"] = witness_json(opal::ScoreWitness{du, shift, psi.value_below, psi.value_at_or_above}.to_witness());
    }
    if (pretty) {
      std::cout << "score: weight then penalty M = " << fixed2(o.order1_margin) << ", penalty then weight M = "
                << fixed2(o.order2_margin) << (o.flipped ? " (flipped)" : " (same sign)") << "\n";
    } else {
      emit(out);
    }
    return kOk;
  }
  throw UsageError("unknown probe kind '" + kind + "' (shift, gate, score)");
}

// ---------------------------------------------------------------------------
// demo

struct DemoLine {
  std::string name;
  json fields;
  std::string human;
};

opal::GkpoObject demo_object(const char* text) { return opal::parse(text); }

constexpr const char* kDemoDpo = R"({"version":"gkpo-1.0","score":{"type":"logpi"},
  "weight":{"form":"constant","constant":1.0},"reference":{"form":"fixed_scalar","value":0.10},
  "link":"identity","loss":"logistic","beta":1.0,"provenance":{"method":"DPO","citations":["rafailov2023direct"]}})";
constexpr const char* kDemoRrhf = R"({"version":"gkpo-1.0","score":{"type":"logpi"},
  "weight":{"form":"constant","constant":1.0},"reference":{"form":"fixed_zero","value":0},
  "link":"identity","loss":"logistic","beta":1.0,
  "penalties":[{"name":"rank_margin_1","lambda":0.50},{"name":"rank_margin_2","lambda":0.10}],
  "provenance":{"method":"RRHF","citations":["yuan2023rrhf"]}})";
constexpr const char* kDemoExampleA = R"({"version":"gkpo-1.0","score":{"type":"logpi"},
  "weight":{"form":"constant","constant":1.0},"reference":{"form":"fixed_scalar","value":0.15},
  "link":"identity","loss":"logistic","beta":1.0,"provenance":{"method":"DPO","citations":["rafailov2023direct"]}})";
constexpr const char* kDemoExampleB = R"({"version":"gkpo-1.0","score":{"type":"logpi"},
  "weight":{"form":"constant","constant":1.0},"reference":{"form":"fixed_zero","value":0},
  "link":"identity","loss":"logistic","beta":1.0,
  "penalties":[{"name":"rank_margin_1","lambda":0.4},{"name":"rank_margin_2","lambda":0.2}],
  "provenance":{"method":"RRHF","citations":["yuan2023rrhf"]}})";
constexpr const char* kDemoExampleF = R"({"version":"gkpo-1.0","score":{"type":"logpi"},
  "weight":{"form":"constant","constant":0.5},"reference":{"form":"fixed_zero","value":0},
  "link":"identity","loss":"logistic","beta":1.0,"provenance":{"method":"DPO"}})";

DemoLine demo_margin(const std::string& name, const opal::GkpoObject& obj, const opal::PairSample& s) {
  const auto nf = opal::to_normal_form(obj);
  const double df = opal::score_gap(nf, s);
  const double m = opal::margin(nf, s);
  const auto hash = opal::opal_hash(obj).hex;
  DemoLine line{name,
                {{"delta_f", df},
                 {"margin", m},
                 {"decision", opal::decision(m)},
                 {"loss", opal::objective(obj.loss, obj.link, obj.beta, m)},
                 {"opal_hash", hash},
                 {"inside_R", opal::classify(obj).inside_R}},
                {}};
  line.human = "df " + fixed2(df) + "  margin " + fixed2(m) + "  " + (m > 0 ? "y+ preferred" : "y- preferred") +
               "  hash " + hash.substr(0, 16);
  return line;
}

int cmd_demo(bool pretty) {
  using opal::PairSample;
  std::vector<DemoLine> lines;

  const auto dpo = demo_object(kDemoDpo);
  const auto rrhf = demo_object(kDemoRrhf);
  lines.push_back(demo_margin("dpo_toy", dpo, PairSample{"x", -1.20 - -1.70, {}, {}, {}}));
  lines.push_back(demo_margin("rrhf_toy", rrhf,
                              PairSample{"x", 0.50, {{"rank_margin_1", 0.20}, {"rank_margin_2", -0.10}}, {}, {}}));
  lines.push_back(demo_margin("example_a", demo_object(kDemoExampleA), PairSample{"x", -1.10 - -1.60, {}, {}, {}}));
  lines.push_back(demo_margin("example_b", demo_object(kDemoExampleB),
                              PairSample{"x", 0.50, {{"rank_margin_1", 0.10}, {"rank_margin_2", -0.05}}, {}, {}}));

  auto shift_line = [&](const std::string& name, double d, double r1, double r2) {
    const std::vector<opal::ShiftPair> pairs{{d, r1}, {d, r2}};
    const auto r = opal::probe_shift(pairs);
    DemoLine l{name,
               {{"margins", {pairs[0].margin(), pairs[1].margin()}},
                {"inside_R", r.feasible()},
                {"reasons", r.feasible() ? json::array() : json{"reference_shift"}},
                {"witness", r.witness ? witness_json(r.witness->to_witness()) : json::object()}},
               {}};
    l.human = "margins " + fixed2(pairs[0].margin()) + " / " + fixed2(pairs[1].margin()) + "  " +
              (r.feasible() ? "reducible" : "reference_shift");
    lines.push_back(l);
  };
  shift_line("shift", 0.20, 0.50, -0.50);
  shift_line("example_c", 0.30, 0.40, -0.10);

  {
    const std::vector<opal::GateItem> items{{1, 10, 1}, {0, 1, 1}};
    const auto r = opal::probe_gate(items);
    const auto forced = r.witness && r.witness->forced ? *r.witness->forced : std::array<double, 2>{0, 0};
    DemoLine l{"gate",
               {{"feasible", r.feasible()},
                {"forced", {{"lambda1", forced[0]}, {"lambda2", forced[1]}}},
                {"reasons", {"non_additive_gate"}},
                {"witness", r.witness ? witness_json(r.witness->to_witness()) : json::object()}},
               {}};
    l.human = "forced lambda1' " + fixed2(forced[0]) + ", lambda2' " + fixed2(forced[1]) + "  non_additive_gate";
    lines.push_back(l);
  }
  {
    const auto o = opal::probe_score(0.40, -0.80, opal::PiecewisePsi{});
    DemoLine l{"score",
               {{"order1_margin", o.order1_margin}, {"order2_margin", o.order2_margin}, {"flipped", o.flipped}},
               {}};
    l.human = "margins " + fixed2(o.order1_margin) + " / " + fixed2(o.order2_margin) + "  " +
              (o.flipped ? "score_dependent_weight" : "no flip");
    lines.push_back(l);
  }
  {
    const auto f = demo_object(kDemoExampleF);
    const std::vector<PairSample> probe{{"f1", 1.0, {}, {}, {}}, {"f2", -2.0, {}, {}, {}}, {"f3", 3.0, {}, {}, {}},
                                        {"f4", 2.5, {}, {}, {}}, {"f5", -1.5, {}, {}, {}}};
    const auto fix = opal::scale_fix(f, probe);
    DemoLine l{"example_f",
               {{"c", fix.c},
                {"weight", *fix.object.weight.constant},
                {"beta", fix.object.beta},
                {"opal_hash", opal::opal_hash(f, std::span<const PairSample>(probe)).hex}},
               {}};
    l.human = "c " + fixed2(fix.c) + "  weight " + fixed2(*fix.object.weight.constant) + "  beta " +
              fixed2(fix.object.beta);
    lines.push_back(l);
  }
  {
    opal::MethodConfig ppo;
    ppo.method = opal::Method::PPO_RM;
    ppo.reference = 0.10;
    ppo.kl_coef = 0.05;
    opal::MethodConfig dpo_cfg;
    dpo_cfg.reference = 0.10;
    dpo_cfg.penalties = {{"kl_anchor", 0.05}};
    const auto a = opal::opal_hash(opal::to_gkpo(ppo)).hex;
    const auto b = opal::opal_hash(opal::to_gkpo(dpo_cfg)).hex;
    DemoLine l{"ppo_rm_vs_dpo", {{"opal_hash_ppo_rm", a}, {"opal_hash_dpo", b}, {"equal", a == b}}, {}};
    l.human = std::string(a == b ? "equal" : "different") + " hashes  " + a.substr(0, 16);
    lines.push_back(l);
  }

  if (pretty) {
    for (const auto& l : lines) std::cout << std::left << std::setw(15) << l.name << l.human << "\n";
  } else {
    json out = json::array();
    for (const auto& l : lines) {
      json j = l.fields;
      j["name"] = l.name;
      out.push_back(j);
    }
    emit(json{{"examples", out}});
  }
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_harness(const std::string& which, const std::string& config_path, const std::string& out_dir, bool pretty) {
  const auto experiment = opal::enum_from_string<opal::Experiment>(which);
  if (!experiment) throw UsageError("harness experiment must be h1 or h2");
  std::string path = config_path;
  if (path.empty()) path = std::string(OPAL_CONFIG_DIR) + "/" + which + "_default.json";
  const json doc = read_json(path, kUsage);

  opal::HarnessConfig cfg;
  try {
    cfg = opal::harness_config_from_json(doc);
  } catch (const opal::Error& e) {
    fail_from(e, kUsage, path);
  }
  if (cfg.experiment != *experiment) fail(kUsage, "config_mismatch", "config is for '" + std::string(opal::to_string(cfg.experiment)) + "'");

  opal::HarnessResult res;
  try {
    res = opal::run_harness(cfg);
  } catch (const opal::Error& e) {
    fail(kFail, e.code(), e.what());
  }
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(kUsage, "unwritable_dir", "cannot create '" + out_dir + "'");
    std::ofstream(fs::path(out_dir) / (which + "_report.json")) << res.report.dump(2) << "\n";
    std::ofstream(fs::path(out_dir) / (which + "_report.txt")) << res.table;
    for (const char* key : {"a", "b"})
      std::ofstream(fs::path(out_dir) / (which + "_spec_" + key + ".json"))
          << opal::canonical_json(res.report["specs"][key]["canonical"]) << "\n";
    opal::DatasetSpec ds = cfg.dataset;
    ds.seed = cfg.seeds.front();
    std::ofstream(fs::path(out_dir) / (which + "_dataset_seed" + std::to_string(ds.seed) + ".jsonl"))
        << opal::dataset_to_jsonl(opal::gen_dataset(ds));
  }
  if (pretty)
    std::cout << res.table << "pass: " << (res.pass ? "yes" : "no") << "\n";
  else
    std::cout << res.report.dump() << "\n";
  if (!res.pass) fail(kFail, "harness_failed", which + " acceptance bar not met");
  return kOk;
}

int cmd_diff(const std::string& a_path, const std::string& b_path, bool include_provenance, bool pretty) {
  const auto a = load_object(a_path);
  const auto b = load_object(b_path);
  std::vector<opal::FieldDelta> deltas;
  try {
    deltas = opal::diff(a, b, include_provenance);
  } catch (const opal::Error& e) {
    fail(kFail, e.code(), e.what());
  }
  if (pretty) {
    if (deltas.empty()) std::cout << "no differences\n";
    for (const auto& d : deltas)
      std::cout << d.path << ": " << opal::canonical_json(d.a) << " -> " << opal::canonical_json(d.b) << "\n";
    return kOk;
  }
  json out = json::array();
  for (const auto& d : deltas) out.push_back({{"path", d.path}, {"a", d.a}, {"b", d.b}});
  emit(json{{"equal", deltas.empty()}, {"deltas", out}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Opal operator algebra and GKPO tools"};
  app.require_subcommand(1);
  bool pretty = false;
  app.add_flag("--pretty", pretty, "Human-readable output instead of JSON");

  std::string path, path_b, probe_path, to, kind, file, out_dir, which, config;
  std::vector<std::string> args;
  bool scale_fix = false, emit_canonical = false, include_provenance = false;
  double threshold = 0.0;

  auto* validate = app.add_subcommand("validate", "Check a GKPO document against the schema");
  validate->add_option("path", path, "GKPO JSON file")->required();

  auto* canon = app.add_subcommand("canonicalize", "Print the canonical document with its opal_hash");
  canon->add_option("path", path, "GKPO JSON file")->required();
  canon->add_option("--probe", probe_path, "Probe samples (JSONL) for scale fixing");
  canon->add_flag("--scale-fix", scale_fix, "Apply scale fixing against --probe");

  auto* hash = app.add_subcommand("hash", "Print the opal_hash");
  hash->add_option("path", path, "GKPO JSON file")->required();
  hash->add_option("--probe", probe_path, "Probe samples (JSONL) for scale fixing");
  hash->add_flag("--scale-fix", scale_fix, "Apply scale fixing against --probe");
  hash->add_flag("--emit-canonical", emit_canonical, "Also print the canonical bytes");

  auto* convert = app.add_subcommand("convert", "Convert a GKPO document or adapter config");
  convert->add_option("path", path, "GKPO JSON or adapter config")->required();
  convert->add_option("--to", to, "Target: DPO, PPO_RM, RRHF, ORPO, KTO_GRPO or gkpo")->required();
  convert->add_option("--probe", probe_path, "Probe samples (JSONL) for weight absorption");

  auto* probe = app.add_subcommand("probe", "Run a SHIFT, GATE or SCORE probe");
  probe->add_option("kind", kind, "shift, gate or score")->required();
  probe->add_option("args", args, "Numeric arguments");
  probe->add_option("--file", file, "JSON file {\"args\": [...]}");
  probe->add_option("--threshold", threshold, "psi threshold (score)");
  probe->allow_extras(false);

  auto* demo = app.add_subcommand("demo", "Print the worked examples");

  auto* harness = app.add_subcommand("harness", "Run the H1 or H2 experiment");
  harness->add_option("experiment", which, "h1 or h2")->required();
  harness->add_option("config", config, "Experiment config (defaults to the bundled one)");
  harness->add_option("--out", out_dir, "Directory for report files");

  auto* diff = app.add_subcommand("diff", "Field-level delta between two canonical documents");
  diff->add_option("a", path, "GKPO JSON file")->required();
  diff->add_option("b", path_b, "GKPO JSON file")->required();
  diff->add_flag("--include-provenance", include_provenance, "Also compare provenance");

  for (auto* sub : {validate, canon, hash, convert, probe, demo, harness, diff})
    sub->add_flag("--pretty", pretty, "Human-readable output instead of JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return kUsage;
  }

  try {
    if (*validate) return cmd_validate(path, pretty);
    if (*canon) return cmd_canonicalize(path, probe_path, scale_fix, pretty);
    if (*hash) return cmd_hash(path, probe_path, scale_fix, emit_canonical, pretty);
    if (*convert) return cmd_convert(path, to, probe_path, pretty);
    if (*probe) return cmd_probe(kind, args, file, threshold, pretty);
    if (*demo) return cmd_demo(pretty);
    if (*harness) return cmd_harness(which, config, out_dir, pretty);
    if (*diff) return cmd_diff(path, path_b, include_provenance, pretty);
  } catch (const Failure& f) {
    std::cout.flush();
    std::cerr << f.line.dump() << "\n";
    return f.code;
  } catch (const UsageError& e) {
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return kUsage;
  } catch (const opal::Error& e) {
    std::cerr << json{{"error", e.code()}, {"message", e.what()}}.dump() << "\n";
    return kFail;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return kFail;
  }
  return kUsage;
}
