#pragma once

// Strict JSON reader/writer for GKPO objects. Unknown keys, nulls, wrong
// types and out-of-enum strings are rejected with the offending field path.

#include <cmath>
#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "opal/error.hpp"
#include "opal/gkpo.hpp"

namespace opal {

using json = nlohmann::json;

namespace detail {

inline std::string join_path(const std::string& base, std::string_view key) {
  return base.empty() ? std::string(key) : base + "." + std::string(key);
}

[[noreturn]] inline void type_error(const std::string& path, std::string_view expected) {
  throw SchemaError("type_error", path, "wrong type at '" + path + "': expected " + std::string(expected));
}

// Cursor over one JSON object that records which keys were consumed so that
// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) type_error(path_.empty() ? "<root>" : path_, "object");
  }

  bool has(std::string_view key) const { return node_.contains(std::string(key)); }

  const json& required(std::string_view key) {
    const auto it = node_.find(std::string(key));
    if (it == node_.end())
      throw SchemaError("missing_key", child(key), "missing required key '" + child(key) + "'");
    return take(key, *it);
  }

  const json* optional(std::string_view key) {
    const auto it = node_.find(std::string(key));
    if (it == node_.end()) return nullptr;
    return &take(key, *it);
  }

  double number(std::string_view key) { return as_number(required(key), child(key)); }
  std::string string(std::string_view key) { return as_string(required(key), child(key)); }
  bool boolean(std::string_view key) {
    const auto& v = required(key);
    if (!v.is_boolean()) type_error(child(key), "boolean");
    return v.get<bool>();
  }

  template <typename E>
  E enumeration(std::string_view key) {
    const std::string text = string(key);
    const auto value = enum_from_string<E>(text);
    if (!value)
      throw SchemaError("enum_error", child(key), "value '" + text + "' not allowed at '" + child(key) + "'");
    return *value;
  }

  std::vector<std::string> string_list(std::string_view key) {
    const json* v = optional(key);
    if (!v) return {};
    if (!v->is_array()) type_error(child(key), "array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v->size(); ++i)
      out.push_back(as_string((*v)[i], child(key) + "[" + std::to_string(i) + "]"));
    return out;
  }

  std::string child(std::string_view key) const { return join_path(path_, key); }

  void finish() const {
    for (const auto& [key, value] : node_.items())
      if (!consumed_.contains(key))
        throw SchemaError("unknown_key", join_path(path_, key), "unknown key '" + join_path(path_, key) + "'");
  }

  static double as_number(const json& v, const std::string& path) {
    if (v.is_null()) throw SchemaError("type_error", path, "null is not allowed at '" + path + "'");
    if (!v.is_number()) type_error(path, "number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaError("type_error", path, "non-finite number at '" + path + "'");
    return d;
  }

  static std::string as_string(const json& v, const std::string& path) {
    if (v.is_null()) throw SchemaError("type_error", path, "null is not allowed at '" + path + "'");
    if (!v.is_string()) type_error(path, "string");
    return v.get<std::string>();
  }

 private:
  const json& take(std::string_view key, const json& v) {
    consumed_.insert(std::string(key));
    if (v.is_null()) throw SchemaError("type_error", child(key), "null is not allowed at '" + child(key) + "'");
    return v;
  }

  const json& node_;
  std::string path_;
  std::set<std::string> consumed_;
};

inline WitnessValue witness_from_json(const json& v, const std::string& path) {
  if (v.is_number()) return ObjectReader::as_number(v, path);
  if (!v.is_array()) type_error(path, "number or array of numbers");
  if (!v.empty() && v.front().is_array()) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string rp = path + "[" + std::to_string(i) + "]";
      if (!v[i].is_array()) type_error(rp, "array of numbers");
      std::vector<double> row;
      for (std::size_t j = 0; j < v[i].size(); ++j)
        row.push_back(ObjectReader::as_number(v[i][j], rp + "[" + std::to_string(j) + "]"));
      rows.push_back(std::move(row));
    }
    return rows;
  }
  std::vector<double> flat;
  for (std::size_t i = 0; i < v.size(); ++i)
    flat.push_back(ObjectReader::as_number(v[i], path + "[" + std::to_string(i) + "]"));
  return flat;
}

inline json witness_to_json(const WitnessValue& v) {
  return std::visit([](const auto& x) { return json(x); }, v);
}

}  // namespace detail

// Builds a GKPO object from an already-tokenized JSON document.
inline GkpoObject from_json(const json& root) {
  using detail::ObjectReader;
  GkpoObject obj;
  ObjectReader top(root, "");

  obj.version = top.string("version");
  if (obj.version != kGkpoVersion)
    throw SchemaError("version_error", "version", "unsupported version '" + obj.version + "'");

  {
    ObjectReader r(top.required("score"), "score");
    obj.score.type = r.enumeration<ScoreType>("type");
    if (r.has("custom_name")) obj.score.custom_name = r.string("custom_name");
    r.finish();
  }
  {
    ObjectReader r(top.required("weight"), "weight");
    obj.weight.form = r.enumeration<WeightForm>("form");
    if (r.has("constant")) obj.weight.constant = r.number("constant");
    obj.weight.factors = r.string_list("factors");
    if (r.has("score_fn")) obj.weight.score_fn = r.string("score_fn");
    r.finish();
  }
  {
    ObjectReader r(top.required("reference"), "reference");
    obj.reference.form = r.enumeration<ReferenceForm>("form");
    if (r.has("value")) obj.reference.value = r.number("value");
    r.finish();
  }
  obj.link = top.enumeration<LinkKind>("link");
  obj.loss = top.enumeration<LossKind>("loss");
  obj.beta = top.number("beta");

  if (const json* pen = top.optional("penalties")) {
    if (!pen->is_array()) detail::type_error("penalties", "array");
    for (std::size_t i = 0; i < pen->size(); ++i) {
      const std::string path = "penalties[" + std::to_string(i) + "]";
      ObjectReader r((*pen)[i], path);
      PenaltyEntry p;
      p.name = r.string("name");
      p.lambda = r.number("lambda");
      if (const json* meta = r.optional("meta")) {
        ObjectReader m(*meta, path + ".meta");
        if (m.has("gate")) p.meta_gate = m.boolean("gate");
        m.finish();
      }
      r.finish();
      obj.penalties.push_back(std::move(p));
    }
  }

  if (const json* ops = top.optional("dataset_ops")) {
    ObjectReader r(*ops, "dataset_ops");
    obj.dataset_ops.group_weights = r.string_list("group_weights");
    obj.dataset_ops.group_penalties = r.string_list("group_penalties");
    obj.dataset_ops.composition = r.enumeration<Composition>("composition");
    r.finish();
  }

  if (const json* prov = top.optional("provenance")) {
    ObjectReader r(*prov, "provenance");
    if (r.has("opal_hash")) obj.provenance.opal_hash = r.string("opal_hash");
    if (r.has("method")) obj.provenance.method = r.string("method");
    obj.provenance.citations = r.string_list("citations");
    if (r.has("notes")) obj.provenance.notes = r.string("notes");
    r.finish();
  }

  if (const json* red = top.optional("reducibility")) {
    ObjectReader r(*red, "reducibility");
    obj.reducibility.inside_R = r.boolean("inside_R");
    for (const auto& text : r.string_list("reasons")) {
      const auto reason = enum_from_string<Reason>(text);
      if (!reason)
        throw SchemaError("enum_error", "reducibility.reasons", "unknown reason code '" + text + "'");
      obj.reducibility.reasons.push_back(*reason);
    }
    if (const json* wit = r.optional("witness")) {
      if (!wit->is_object()) detail::type_error("reducibility.witness", "object");
      for (const auto& [key, value] : wit->items())
        obj.reducibility.witness[key] = detail::witness_from_json(value, "reducibility.witness." + key);
    }
    r.finish();
  }

  top.finish();
  return obj;
}

// Parses UTF-8 JSON text into a GKPO object.
inline GkpoObject parse(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw SyntaxError(e.byte, e.what());
  }
  return from_json(root);
}

inline json to_json(const GkpoObject& obj) {
  json out = json::object();
  out["version"] = obj.version;

  json score = {{"type", to_string(obj.score.type)}};
  if (obj.score.custom_name) score["custom_name"] = *obj.score.custom_name;
  out["score"] = score;

  json weight = {{"form", to_string(obj.weight.form)}};
  if (obj.weight.constant) weight["constant"] = *obj.weight.constant;
  if (!obj.weight.factors.empty()) weight["factors"] = obj.weight.factors;
  if (obj.weight.score_fn) weight["score_fn"] = *obj.weight.score_fn;
  out["weight"] = weight;

  json reference = {{"form", to_string(obj.reference.form)}};
  if (obj.reference.value) reference["value"] = *obj.reference.value;
  out["reference"] = reference;

  out["link"] = to_string(obj.link);
  out["loss"] = to_string(obj.loss);
  out["beta"] = obj.beta;

  json penalties = json::array();
  for (const auto& p : obj.penalties) {
    json entry = {{"name", p.name}, {"lambda", p.lambda}};
    if (p.meta_gate) entry["meta"] = {{"gate", *p.meta_gate}};
    penalties.push_back(entry);
  }
  out["penalties"] = penalties;

  out["dataset_ops"] = {{"group_weights", obj.dataset_ops.group_weights},
                        {"group_penalties", obj.dataset_ops.group_penalties},
                        {"composition", to_string(obj.dataset_ops.composition)}};

  json prov = {{"method", obj.provenance.method},
               {"citations", obj.provenance.citations},
               {"notes", obj.provenance.notes}};
  if (obj.provenance.opal_hash) prov["opal_hash"] = *obj.provenance.opal_hash;
  out["provenance"] = prov;

  json reasons = json::array();
  for (Reason r : obj.reducibility.reasons) reasons.push_back(to_string(r));
  json witness = json::object();
  for (const auto& [key, value] : obj.reducibility.witness) witness[key] = detail::witness_to_json(value);
  out["reducibility"] = {{"inside_R", obj.reducibility.inside_R}, {"reasons", reasons}, {"witness", witness}};
  return out;
}

// Plain (non-canonical) serialization; numbers keep full precision.
inline std::string serialize(const GkpoObject& obj, int indent = -1) { return to_json(obj).dump(indent); }

}  // namespace opal
