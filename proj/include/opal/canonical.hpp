#pragma once

// Canonical byte form and content hash of GKPO objects.
//
//   C1  collection: duplicate penalties summed, every list sorted
//   C2  optional scale fixing against a probe set
//   C3  deterministic JSON: sorted keys, compact separators, numbers rounded
//       half-even to 1e-6 and printed as the shortest plain decimal
//   C4  opal hash: SHA-256 (lowercase hex) over the operator content of C3
//
// The hash covers everything except the `provenance` block, so two methods
// that collect to the same operators share a hash regardless of naming or
// citations. `canonicalize` returns the full canonical document (provenance
// included, `opal_hash` omitted).

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "opal/error.hpp"
#include "opal/gkpo.hpp"
#include "opal/gkpo_json.hpp"
#include "opal/operator_algebra.hpp"

namespace opal {

inline constexpr int kCanonicalDecimals = 6;

// Rounds to 1e-6 (half-even on the shortest round-trip decimal of `value`)
// and prints without exponent, trailing zeros or negative zero.
inline std::string format_canonical_number(double value) {
  if (!std::isfinite(value)) throw DomainError("non_finite", "cannot canonicalize a non-finite number");
  std::array<char, 512> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value, std::chars_format::fixed);
  std::string s(buf.data(), res.ptr);

  const bool negative = !s.empty() && s.front() == '-';
  if (negative) s.erase(0, 1);
  const auto dot = s.find('.');
  std::string int_part = dot == std::string::npos ? s : s.substr(0, dot);
  std::string frac = dot == std::string::npos ? std::string() : s.substr(dot + 1);

  if (frac.size() > static_cast<std::size_t>(kCanonicalDecimals)) {
    const char next = frac[kCanonicalDecimals];
    const std::string_view rest(frac.data() + kCanonicalDecimals + 1, frac.size() - kCanonicalDecimals - 1);
    frac.resize(kCanonicalDecimals);
    const bool rest_zero = rest.find_first_not_of('0') == std::string_view::npos;
    const bool odd = (frac.back() - '0') % 2 == 1;
    const bool round_up = next > '5' || (next == '5' && (!rest_zero || odd));
    if (round_up) {
      std::string digits = int_part + frac;
      int i = static_cast<int>(digits.size()) - 1;
      for (; i >= 0; --i) {
        if (digits[static_cast<std::size_t>(i)] == '9') {
          digits[static_cast<std::size_t>(i)] = '0';
        } else {
          ++digits[static_cast<std::size_t>(i)];
          break;
        }
      }
      if (i < 0) digits.insert(digits.begin(), '1');
      int_part = digits.substr(0, digits.size() - kCanonicalDecimals);
      frac = digits.substr(digits.size() - kCanonicalDecimals);
    }
  }
  while (!frac.empty() && frac.back() == '0') frac.pop_back();
  const auto nz = int_part.find_first_not_of('0');
  int_part = nz == std::string::npos ? "0" : int_part.substr(nz);

  std::string out = int_part;
  if (!frac.empty()) out += "." + frac;
  if (negative && out != "0") out.insert(out.begin(), '-');
  return out;
}

namespace detail {

inline void emit_canonical(const json& v, std::string& out) {
  switch (v.type()) {
    case json::value_t::object: {
      out += '{';
      bool first = true;
      for (const auto& [key, child] : v.items()) {  // object_t is a std::map: keys in byte order
        if (!first) out += ',';
        first = false;
        out += json(key).dump();
        out += ':';
        emit_canonical(child, out);
      }
      out += '}';
      break;
    }
    case json::value_t::array: {
      out += '[';
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        emit_canonical(v[i], out);
      }
      out += ']';
      break;
    }
    case json::value_t::number_float:
    case json::value_t::number_integer:
    case json::value_t::number_unsigned:
      out += format_canonical_number(v.get<double>());
      break;
    case json::value_t::string:
    case json::value_t::boolean:
    case json::value_t::null:
      out += v.dump();
      break;
    default:
      throw DomainError("unsupported_json", "binary or discarded values cannot be canonicalized");
  }
}

}  // namespace detail

inline std::string canonical_json(const json& v) {
  std::string out;
  detail::emit_canonical(v, out);
  return out;
}

// C1: sums duplicate penalty names (a gate flag on any copy survives) and
// sorts penalties, factors, dataset-op lists, citations and reasons.
inline GkpoObject collect_object(GkpoObject obj) {
  std::map<std::string, PenaltyEntry> merged;
  for (const auto& p : obj.penalties) {
    auto [it, fresh] = merged.try_emplace(p.name, p);
    if (fresh) continue;
    it->second.lambda += p.lambda;
    if (p.meta_gate) it->second.meta_gate = it->second.meta_gate.value_or(false) || *p.meta_gate;
  }
  obj.penalties.clear();
  for (auto& [name, p] : merged) obj.penalties.push_back(std::move(p));

  std::sort(obj.weight.factors.begin(), obj.weight.factors.end());
  std::sort(obj.dataset_ops.group_weights.begin(), obj.dataset_ops.group_weights.end());
  std::sort(obj.dataset_ops.group_penalties.begin(), obj.dataset_ops.group_penalties.end());
  std::sort(obj.provenance.citations.begin(), obj.provenance.citations.end());
  auto& reasons = obj.reducibility.reasons;
  std::sort(reasons.begin(), reasons.end());
  reasons.erase(std::unique(reasons.begin(), reasons.end()), reasons.end());
  return obj;
}

struct ObjectScaleFix {
  GkpoObject object;
  std::vector<PairSample> probe;  // the probe expressed in the rescaled units
  double c = 1.0;
  bool scale_undefined = false;
};

// C2 on a whole object: c = 1 / median |df*| over the probe, then
// weight.constant /= c, beta *= c, and the reference value and probe samples
// move to the rescaled score units. Only constant weights can absorb 1/c.
inline ObjectScaleFix scale_fix(const GkpoObject& obj, std::span<const PairSample> probe) {
  if (obj.weight.form != WeightForm::constant || !obj.weight.constant)
    throw DomainError("scale_fix_unsupported", "scale fixing needs weight.form = constant");
  NormalForm nf;
  for (const auto& p : obj.penalties) nf.penalty_coeffs[p.name] += p.lambda;
  nf.weight_constant = *obj.weight.constant;
  const ScaleFix fix = scale_fix(nf, probe);

  ObjectScaleFix out{obj, {}, fix.c, fix.scale_undefined};
  out.object.weight.constant = fix.nf.weight_constant;
  out.object.beta *= fix.beta_multiplier;
  if (out.object.reference.value && *out.object.reference.value != 0.0) *out.object.reference.value *= fix.c;
  for (const auto& s : probe) out.probe.push_back(rescaled(s, fix.c));
  return out;
}

struct Canonical {
  std::string bytes;
  double scale_applied = 1.0;
  bool scale_undefined = false;
};

namespace detail {

struct Prepared {
  GkpoObject object;
  double c = 1.0;
  bool undefined = false;
};

inline Prepared prepare(const GkpoObject& obj, std::optional<std::span<const PairSample>> probe) {
  Prepared p{collect_object(obj)};
  if (probe) {
    auto fix = scale_fix(p.object, *probe);
    p.object = std::move(fix.object);
    p.c = fix.c;
    p.undefined = fix.scale_undefined;
  }
  const auto report = validate(p.object);
  if (!report.empty())
    throw DomainError("validation_error", "invalid object at '" + report.front().path + "': " + report.front().message);
  p.object.provenance.opal_hash.reset();
  return p;
}

}  // namespace detail

inline Canonical canonicalize(const GkpoObject& obj, std::optional<std::span<const PairSample>> probe = std::nullopt) {
  const auto p = detail::prepare(obj, probe);
  return {canonical_json(to_json(p.object)), p.c, p.undefined};
}

// Bytes the opal hash is computed over: the canonical document without its
// provenance block.
inline std::string hash_preimage(const GkpoObject& obj,
                                 std::optional<std::span<const PairSample>> probe = std::nullopt) {
  const auto p = detail::prepare(obj, probe);
  json j = to_json(p.object);
  j.erase("provenance");
  return canonical_json(j);
}

inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("crypto_error", "SHA-256 computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xF];
  }
  return out;
}

struct OpalHash {
  std::string hex;
  bool operator==(const OpalHash&) const = default;
};

inline OpalHash opal_hash(const GkpoObject& obj, std::optional<std::span<const PairSample>> probe = std::nullopt) {
  return {sha256_hex(hash_preimage(obj, probe))};
}

// Canonical document with provenance.opal_hash filled in.
inline std::string canonical_document(const GkpoObject& obj,
                                      std::optional<std::span<const PairSample>> probe = std::nullopt) {
  auto p = detail::prepare(obj, probe);
  json j = to_json(p.object);
  json pre = j;
  pre.erase("provenance");
  j["provenance"]["opal_hash"] = sha256_hex(canonical_json(pre));
  return canonical_json(j);
}

// Probe samples as JSON: {"prompt_id", "delta_u", "delta_phi", "omega",
// "delta_ref"}; the three maps are optional.
inline PairSample sample_from_json(const json& j, const std::string& path) {
  detail::ObjectReader r(j, path);
  PairSample s;
  if (r.has("prompt_id")) s.prompt_id = r.string("prompt_id");
  s.delta_u = r.number("delta_u");
  for (const char* key : {"delta_phi", "omega", "delta_ref"}) {
    const json* m = r.optional(key);
    if (!m) continue;
    if (!m->is_object()) detail::type_error(r.child(key), "object of name -> number");
    auto& dst = key[0] == 'o' ? s.omega : key[6] == 'p' ? s.delta_phi : s.delta_ref;
    for (const auto& [name, v] : m->items()) dst[name] = detail::ObjectReader::as_number(v, r.child(key) + "." + name);
  }
  r.finish();
  return s;
}

inline json sample_to_json(const PairSample& s) {
  return {{"prompt_id", s.prompt_id}, {"delta_u", s.delta_u}, {"delta_phi", s.delta_phi}, {"omega", s.omega},
          {"delta_ref", s.delta_ref}};
}

// One sample per non-blank line.
inline std::vector<PairSample> samples_from_jsonl(std::string_view text) {
  std::vector<PairSample> out;
  std::size_t start = 0, lineno = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    const std::string_view line = text.substr(start, end - start);
    ++lineno;
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      json j;
      try {
        j = json::parse(line.begin(), line.end());
      } catch (const json::parse_error& e) {
        throw SyntaxError(e.byte, "probe line " + std::to_string(lineno) + ": " + e.what());
      }
      out.push_back(sample_from_json(j, "line" + std::to_string(lineno)));
    }
    start = end + 1;
  }
  return out;
}

struct FieldDelta {
  std::string path;
  json a;  // null when absent on that side
  json b;
  bool operator==(const FieldDelta&) const = default;
};

namespace detail {

inline void flatten(const json& v, const std::string& path, std::map<std::string, json>& out) {
  if (v.is_object() && !v.empty()) {
    for (const auto& [key, child] : v.items()) flatten(child, path.empty() ? key : path + "." + key, out);
  } else {
    out[path] = v;
  }
}

}  // namespace detail

// Field-level delta between the canonical forms of two objects. Arrays are
// compared as whole values. Provenance is skipped unless requested, matching
// what the hash covers.
inline std::vector<FieldDelta> diff(const GkpoObject& a, const GkpoObject& b, bool include_provenance = false) {
  auto canonical_tree = [&](const GkpoObject& o) {
    json j = json::parse(canonicalize(o).bytes);
    if (!include_provenance) j.erase("provenance");
    std::map<std::string, json> flat;
    detail::flatten(j, "", flat);
    return flat;
  };
  const auto fa = canonical_tree(a);
  const auto fb = canonical_tree(b);
  std::set<std::string> paths;
  for (const auto& [k, v] : fa) paths.insert(k);
  for (const auto& [k, v] : fb) paths.insert(k);
  std::vector<FieldDelta> out;
  for (const auto& path : paths) {
    const auto ia = fa.find(path);
    const auto ib = fb.find(path);
    const json va = ia == fa.end() ? json() : ia->second;
    const json vb = ib == fb.end() ? json() : ib->second;
    if (canonical_json(va) != canonical_json(vb)) out.push_back({path, va, vb});
  }
  return out;
}

}  // namespace opal
