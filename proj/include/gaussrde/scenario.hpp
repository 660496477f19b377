#pragma once

// JSON scenarios: parsing with defaults, whole-file validation, overrides,
// and the command pipelines behind the CLI. Reports are deterministic;
// anything time-dependent belongs in the metadata the caller writes.

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaussrde/asymptotics.hpp"
#include "gaussrde/gaussian_drivers.hpp"
#include "gaussrde/lie_hormander.hpp"
#include "gaussrde/malliavin_probe.hpp"
#include "gaussrde/parallel.hpp"
#include "gaussrde/polynomial.hpp"
#include "gaussrde/rde_solver.hpp"
#include "gaussrde/systems.hpp"

#ifndef GAUSSRDE_VERSION_STRING
#define GAUSSRDE_VERSION_STRING "0.1.0"
#endif

namespace gaussrde::scenario {

using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = GAUSSRDE_VERSION_STRING;

enum ExitCode : int { kOk = 0, kInternal = 1, kValidation = 2, kAllExploded = 3, kDegenerate = 4 };

/// Carries the machine-readable code printed as "ERROR <code> <message>".
class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(int exit_code, std::string code, const std::string& msg)
      : std::runtime_error(msg), exit_code_(exit_code), code_(std::move(code)) {}
  int exit_code() const { return exit_code_; }
  const std::string& code() const { return code_; }

 private:
  int exit_code_;
  std::string code_;
};

class ValidationError : public ScenarioError {
 public:
  explicit ValidationError(std::vector<std::string> problems)
      : ScenarioError(kValidation, "VALIDATION", join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = std::to_string(p.size()) + (p.size() == 1 ? " problem: " : " problems: ");
    for (std::size_t i = 0; i < p.size(); ++i) s += (i ? "; " : "") + p[i];
    return s;
  }
  std::vector<std::string> problems_;
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"sample",  "solve",   "malliavin", "hormander", "taylor",
                                          "scaling", "support", "selftest",  "validate"};
  return c;
}

struct CurveSpec {
  std::vector<double> slopes;  // x_i(t) = slope_i t + amplitude (sin(2 pi f t + i) - sin(i))
  double amplitude = 0.5;
  double frequency = 1.0;

  Eigen::VectorXd operator()(double t) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(slopes.size()));
    for (std::size_t i = 0; i < slopes.size(); ++i) {
      const double ph = static_cast<double>(i);
      x[static_cast<Eigen::Index>(i)] =
          slopes[i] * t + amplitude * (std::sin(2 * M_PI * frequency * t + ph) - std::sin(ph));
    }
    return x;
  }
};

struct Scenario {
  std::string name;
  CovarianceSpec driver;
  int grid = 9;  // log2 of the number of intervals on [0, T]
  int level = 2;
  int depth = 3;
  PolyVectorFieldSet fields;
  std::optional<PolyVectorField> w;
  Eigen::VectorXd y0;
  double t = 1.0;
  std::size_t basis_modes = 0;
  double variance_fraction = 0.999;
  std::size_t samples = 100;
  std::uint64_t seed = 0;
  int workers = 1;
  double threshold = 1e-12;

  int hormander_r = 3;
  int group_samples = 3;

  int taylor_order = 2;
  double taylor_p = 1.0;
  CurveSpec curve;
  std::vector<int> dyadic_exponents{3, 4, 5, 6, 7, 8};
  std::size_t taylor_steps = 256;

  double scaling_hurst = 0.5;
  std::vector<int> scaling_n{4, 8, 16, 32, 64, 128, 256};
  int subgrid = 64;

  double support_hurst = 0.5;
  std::vector<int> support_n{4, 64};
  std::vector<double> eps;
  std::vector<std::vector<std::vector<double>>> targets;  // per target: levels 1..k of its log
  int support_grid = 6;  // log2 intervals on [0, 1/n]

  std::size_t intervals() const { return std::size_t{1} << grid; }
  int state_dim() const { return fields.state_dim; }
  int driver_dim() const { return driver.components; }
};

// ---------------------------------------------------------------- JSON helpers

inline json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json to_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
  return a;
}

inline json to_json(const PolyVectorField& f) {
  json comps = json::array();
  for (const auto& p : f.components()) {
    json terms = json::array();
    for (const auto& [e, c] : p.terms()) terms.push_back(json::array({c, e}));
    comps.push_back(terms);
  }
  return comps;
}

inline json to_json(const TruncatedTensor& g) {
  json levels = json::array();
  for (int k = 1; k <= g.level(); ++k) {
    json lv = json::array();
    for (double x : g.level_span(k)) lv.push_back(x);
    levels.push_back(lv);
  }
  return levels;
}

/// Collects every problem instead of stopping at the first.
class Reader {
 public:
  std::vector<std::string> errors;

  void fail(const std::string& msg) { errors.push_back(msg); }

  static std::string key(const std::string& where, const std::string& k) { return where.empty() ? k : where + "." + k; }

  void allow_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) return;
    for (const auto& [k, _] : obj.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || k == a;
      if (!ok) fail("unknown key '" + key(where, k) + "'");
    }
  }

  const json* section(const json& obj, const char* k, const std::string& where) {
    if (!obj.contains(k) || obj[k].is_null()) return nullptr;
    if (!obj[k].is_object()) {
      fail(key(where, k) + ": expected an object");
      return nullptr;
    }
    return &obj[k];
  }

  double num(const json& obj, const char* k, double def, const std::string& where) {
    if (!obj.contains(k) || obj[k].is_null()) return def;
    if (!obj[k].is_number()) {
      fail(key(where, k) + ": expected a number");
      return def;
    }
    return obj[k].get<double>();
  }

  long long integer(const json& obj, const char* k, long long def, const std::string& where) {
    if (!obj.contains(k) || obj[k].is_null()) return def;
    const json& v = obj[k];
    if (v.is_number_integer()) return v.get<long long>();
    if (v.is_number_float() && std::isfinite(v.get<double>()) && v.get<double>() == std::floor(v.get<double>()) &&
        std::abs(v.get<double>()) < 9e15)
      return static_cast<long long>(v.get<double>());
    fail(key(where, k) + ": expected an integer");
    return def;
  }

  std::uint64_t unsigned64(const json& obj, const char* k, std::uint64_t def, const std::string& where) {
    if (!obj.contains(k) || obj[k].is_null()) return def;
    const json& v = obj[k];
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    fail(key(where, k) + ": expected a non-negative integer");
    return def;
  }

  bool boolean(const json& obj, const char* k, bool def, const std::string& where) {
    if (!obj.contains(k) || obj[k].is_null()) return def;
    if (!obj[k].is_boolean()) {
      fail(key(where, k) + ": expected true or false");
      return def;
    }
    return obj[k].get<bool>();
  }

  std::string string(const json& obj, const char* k, const std::string& def, const std::string& where) {
    if (!obj.contains(k) || obj[k].is_null()) return def;
    if (!obj[k].is_string()) {
      fail(key(where, k) + ": expected a string");
      return def;
    }
    return obj[k].get<std::string>();
  }

  std::vector<double> numbers(const json& v, const std::string& where) {
    std::vector<double> out;
    if (!v.is_array()) {
      fail(where + ": expected an array of numbers");
      return out;
    }
    for (const auto& x : v) {
      if (!x.is_number()) {
        fail(where + ": expected an array of numbers");
        return {};
      }
      out.push_back(x.get<double>());
    }
    return out;
  }

  std::vector<double> numbers(const json& obj, const char* k, std::vector<double> def, const std::string& where) {
    if (!obj.contains(k) || obj[k].is_null()) return def;
    return numbers(obj[k], key(where, k));
  }

  std::vector<int> integers(const json& obj, const char* k, std::vector<int> def, const std::string& where) {
    if (!obj.contains(k) || obj[k].is_null()) return def;
    std::vector<int> out;
    if (!obj[k].is_array()) {
      fail(key(where, k) + ": expected an array of integers");
      return def;
    }
    for (const auto& x : obj[k]) {
      if (!x.is_number_integer()) {
        fail(key(where, k) + ": expected an array of integers");
        return def;
      }
      out.push_back(x.get<int>());
    }
    return out;
  }
};

/// [[coef, [exponents]], ...] per component; returns nullopt after recording errors.
inline std::optional<PolyVectorField> parse_field(const json& f, int e, const std::string& where, Reader& rd) {
  if (!f.is_array()) {
    rd.fail(where + ": a field is an array of components, each a list of [coefficient, [exponents]] terms");
    return std::nullopt;
  }
  if (static_cast<int>(f.size()) != e) {
    rd.fail(where + ": field has " + std::to_string(f.size()) + " components but the state dimension is " +
            std::to_string(e));
    return std::nullopt;
  }
  std::vector<Polynomial> comps;
  bool ok = true;
  for (std::size_t c = 0; c < f.size(); ++c) {
    Polynomial p(e);
    const std::string wc = where + "[" + std::to_string(c) + "]";
    if (!f[c].is_array()) {
      rd.fail(wc + ": expected a list of [coefficient, [exponents]] terms");
      ok = false;
      continue;
    }
    for (std::size_t t = 0; t < f[c].size(); ++t) {
      const json& term = f[c][t];
      const std::string wt = wc + "[" + std::to_string(t) + "]";
      if (!term.is_array() || term.size() != 2 || !term[0].is_number() || !term[1].is_array()) {
        rd.fail(wt + ": a term is [coefficient, [exponents]]");
        ok = false;
        continue;
      }
      Exponents ex;
      bool good = term[1].size() == static_cast<std::size_t>(e);
      for (const auto& x : term[1]) {
        good = good && x.is_number_integer() && x.get<long long>() >= 0 && x.get<long long>() <= 64;
        if (good) ex.push_back(x.get<int>());
      }
      if (!good) {
        rd.fail(wt + ": exponents must be " + std::to_string(e) + " non-negative integers (state dimension)");
        ok = false;
        continue;
      }
      p.add_term(ex, term[0].get<double>());
    }
    comps.push_back(std::move(p));
  }
  if (!ok) return std::nullopt;
  return PolyVectorField(std::move(comps));
}

inline std::optional<PolyVectorFieldSet> preset_system(const std::string& name, int d, std::string& err) {
  if (name == "heisenberg") return systems::heisenberg();
  if (name == "grushin") return systems::grushin();
  if (name == "elliptic") return systems::elliptic(d < 1 ? 1 : d);
  if (name == "linear_scalar") return systems::linear_scalar();
  err = "unknown system '" + name + "'; supported systems: heisenberg, grushin, elliptic, linear_scalar";
  return std::nullopt;
}

// --------------------------------------------------------------- overrides

/// Splits "a.b.c=value"; value parses as JSON, falling back to a string.
inline void apply_set(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError({"--set expects key=value, got '" + assignment + "'"});
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError({"--set key '" + path + "' has an empty component"});
    if (!node->is_object()) {
      if (!node->is_null()) throw ValidationError({"--set key '" + path + "' descends into a non-object"});
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline json parse_document(const std::string& text, const std::string& origin) {
  try {
    json doc = json::parse(text);
    if (!doc.is_object()) throw ValidationError({origin + ": top level must be a JSON object"});
    return doc;
  } catch (const json::parse_error& e) {
    throw ScenarioError(kValidation, "PARSE", origin + ": " + e.what());
  }
}

// ----------------------------------------------------------------- parsing

/// Validates the whole document and fills defaults. Throws ValidationError
/// listing every problem, or ScenarioError(kDegenerate) for a bridge that
/// returns at the horizon without the explicit degenerate flag.
inline Scenario parse_scenario(const json& doc) {
  Reader rd;
  Scenario sc;
  if (!doc.is_object()) throw ValidationError({"scenario must be a JSON object"});
  rd.allow_keys(doc,
                {"name", "driver", "grid", "level", "depth", "system", "fields", "w", "y0", "t", "basis_modes",
                 "variance_fraction", "samples", "seed", "workers", "threshold", "hormander", "taylor", "scaling",
                 "support"},
                "");
  sc.name = rd.string(doc, "name", "", "");

  bool bridge_at_horizon = false;
  if (const json* dr = rd.section(doc, "driver", "")) {
    rd.allow_keys(*dr, {"kind", "hurst", "bridge_return", "horizon", "components", "allow_degenerate"}, "driver");
    const std::string kind = rd.string(*dr, "kind", "brownian", "driver");
    try {
      sc.driver.kind = covariance_kind_from_string(kind);
    } catch (const std::invalid_argument& e) {
      rd.fail(std::string("driver.kind: ") + e.what());
    }
    sc.driver.horizon = rd.num(*dr, "horizon", 1.0, "driver");
    sc.driver.components = static_cast<int>(rd.integer(*dr, "components", 1, "driver"));
    sc.driver.hurst = rd.num(*dr, "hurst", 0.5, "driver");
    sc.driver.bridge_return = rd.num(*dr, "bridge_return", 0.0, "driver");
    sc.driver.allow_degenerate = rd.boolean(*dr, "allow_degenerate", false, "driver");
    if (sc.driver.kind == CovarianceKind::bridge && !dr->contains("bridge_return"))
      rd.fail("driver.bridge_return is required for a bridge");
    if (sc.driver.kind != CovarianceKind::fbm && dr->contains("hurst") && sc.driver.hurst != 0.5)
      rd.fail("driver.hurst applies to fbm only");
    if (sc.driver.kind != CovarianceKind::fbm) sc.driver.hurst = 0.5;
    if (sc.driver.kind != CovarianceKind::bridge) sc.driver.bridge_return = 0.0;
    bridge_at_horizon = sc.driver.kind == CovarianceKind::bridge && sc.driver.bridge_return == sc.driver.horizon &&
                        !sc.driver.allow_degenerate;
    if (!bridge_at_horizon)
      for (const auto& p : sc.driver.problems()) rd.fail("driver: " + p);
  }
  const int d = sc.driver.components;

  sc.grid = static_cast<int>(rd.integer(doc, "grid", 9, ""));
  if (sc.grid < 1 || sc.grid > 12) rd.fail("grid: log2 intervals must lie in 1..12, got " + std::to_string(sc.grid));
  sc.level = static_cast<int>(rd.integer(doc, "level", 2, ""));
  if (sc.level < 2 || sc.level > 6) rd.fail("level: lift level must lie in 2..6, got " + std::to_string(sc.level));
  sc.depth = static_cast<int>(rd.integer(doc, "depth", 3, ""));
  if (sc.depth < 1 || sc.depth > 6) rd.fail("depth: Euler depth must lie in 1..6, got " + std::to_string(sc.depth));

  // fields: a preset name or explicit term lists
  bool have_fields = false;
  const bool has_system = doc.contains("system") && !doc["system"].is_null();
  const bool has_fields = doc.contains("fields") && !doc["fields"].is_null();
  if (has_system && has_fields) {
    rd.fail("give either 'system' or 'fields', not both");
  } else if (has_system) {
    std::string err;
    const std::string name = rd.string(doc, "system", "", "");
    if (auto s = preset_system(name, d, err)) {
      sc.fields = *s;
      have_fields = true;
    } else if (!name.empty()) {
      rd.fail("system: " + err);
    }
  } else if (has_fields) {
    const json& fs = doc["fields"];
    if (!fs.is_array() || fs.empty() || !fs[0].is_array() || fs[0].empty()) {
      rd.fail("fields: expected a non-empty array of vector fields");
    } else {
      const int e = static_cast<int>(fs[0].size());
      std::vector<PolyVectorField> vs;
      bool ok = true;
      for (std::size_t i = 0; i < fs.size(); ++i) {
        auto f = parse_field(fs[i], e, "fields[" + std::to_string(i) + "]", rd);
        if (f)
          vs.push_back(std::move(*f));
        else
          ok = false;
      }
      if (ok) {
        sc.fields = PolyVectorFieldSet(e, std::move(vs));
        have_fields = true;
      }
    }
  } else {
    rd.fail("fields: the scenario needs 'system' or 'fields'");
  }

  if (have_fields && sc.fields.driver_dim() != d)
    rd.fail("dimension mismatch: driver has d = " + std::to_string(d) + " components but fields define " +
            std::to_string(sc.fields.driver_dim()) + " vector fields");
  const int e = have_fields ? sc.fields.state_dim : 0;

  if (doc.contains("w") && !doc["w"].is_null()) {
    const json& w = doc["w"];
    if (w.is_number_integer()) {
      const long long i = w.get<long long>();
      if (!have_fields) {
      } else if (i < 1 || i > sc.fields.driver_dim()) {
        rd.fail("w: field index must lie in 1.." + std::to_string(sc.fields.driver_dim()) + ", got " +
                std::to_string(i));
      } else {
        sc.w = sc.fields[static_cast<int>(i - 1)];
      }
    } else if (have_fields) {
      sc.w = parse_field(w, e, "w", rd);
    }
  }

  if (doc.contains("y0") && !doc["y0"].is_null()) {
    const auto y = rd.numbers(doc["y0"], "y0");
    sc.y0 = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    if (have_fields && static_cast<int>(y.size()) != e)
      rd.fail("dimension mismatch: y0 has length " + std::to_string(y.size()) + " but the fields live in R^" +
              std::to_string(e));
  } else {
    sc.y0 = Eigen::VectorXd::Zero(e);
  }

  sc.t = rd.num(doc, "t", sc.driver.horizon, "");
  if (sc.driver.horizon > 0.0 && sc.grid >= 1 && sc.grid <= 12) {
    const double steps = sc.t / sc.driver.horizon * static_cast<double>(sc.intervals());
    if (!(sc.t >= 0.0 && sc.t <= sc.driver.horizon))
      rd.fail("t: evaluation time must lie in [0, " + std::to_string(sc.driver.horizon) + "]");
    else if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps))
      rd.fail("t: evaluation time is not a grid point");
  }

  const long long bm = rd.integer(doc, "basis_modes", 0, "");
  if (bm < 0 || (sc.grid >= 1 && sc.grid <= 12 && bm > static_cast<long long>(sc.intervals())))
    rd.fail("basis_modes must lie in 0..grid size (" + std::to_string(sc.intervals()) + "), 0 = by variance fraction");
  sc.basis_modes = static_cast<std::size_t>(std::max(0LL, bm));
  sc.variance_fraction = rd.num(doc, "variance_fraction", 0.999, "");
  if (!(sc.variance_fraction > 0.0 && sc.variance_fraction <= 1.0)) rd.fail("variance_fraction must lie in (0, 1]");
  const long long ns = rd.integer(doc, "samples", 100, "");
  if (ns < 1) rd.fail("samples must be positive");
  sc.samples = static_cast<std::size_t>(std::max(1LL, ns));
  sc.seed = rd.unsigned64(doc, "seed", 0, "");
  sc.workers = static_cast<int>(rd.integer(doc, "workers", 1, ""));
  if (sc.workers < 1 || sc.workers > 256) rd.fail("workers must lie in 1..256");
  sc.threshold = rd.num(doc, "threshold", 1e-12, "");
  if (!(sc.threshold >= 0.0)) rd.fail("threshold must be non-negative");

  if (const json* h = rd.section(doc, "hormander", "")) {
    rd.allow_keys(*h, {"r", "group_samples"}, "hormander");
    sc.hormander_r = static_cast<int>(rd.integer(*h, "r", 3, "hormander"));
    sc.group_samples = static_cast<int>(rd.integer(*h, "group_samples", 3, "hormander"));
  }
  if (sc.hormander_r < 1 || sc.hormander_r > 6) rd.fail("hormander.r must lie in 1..6");
  if (sc.group_samples < 1) rd.fail("hormander.group_samples must be positive");

  sc.curve.slopes.clear();
  for (int i = 0; i < d; ++i) sc.curve.slopes.push_back(i + 1.0);
  if (const json* t = rd.section(doc, "taylor", "")) {
    rd.allow_keys(*t, {"order", "p", "curve", "dyadic_exponents", "steps"}, "taylor");
    sc.taylor_order = static_cast<int>(rd.integer(*t, "order", 2, "taylor"));
    sc.taylor_p = rd.num(*t, "p", 1.0, "taylor");
    sc.dyadic_exponents = rd.integers(*t, "dyadic_exponents", sc.dyadic_exponents, "taylor");
    const long long st = rd.integer(*t, "steps", 256, "taylor");
    if (st < 1 || st > 65536) rd.fail("taylor.steps must lie in 1..65536");
    sc.taylor_steps = static_cast<std::size_t>(std::max(1LL, st));
    if (const json* c = rd.section(*t, "curve", "taylor")) {
      rd.allow_keys(*c, {"slopes", "amplitude", "frequency"}, "taylor.curve");
      sc.curve.slopes = rd.numbers(*c, "slopes", sc.curve.slopes, "taylor.curve");
      sc.curve.amplitude = rd.num(*c, "amplitude", 0.5, "taylor.curve");
      sc.curve.frequency = rd.num(*c, "frequency", 1.0, "taylor.curve");
    }
  }
  if (sc.taylor_order < 1 || sc.taylor_order > 6) rd.fail("taylor.order must lie in 1..6");
  if (!(sc.taylor_p >= 1.0)) rd.fail("taylor.p must be >= 1");
  if (!(sc.taylor_order > sc.taylor_p - 1.0)) rd.fail("taylor.order must exceed p - 1");
  if (static_cast<int>(sc.curve.slopes.size()) != d)
    rd.fail("dimension mismatch: taylor.curve.slopes has length " + std::to_string(sc.curve.slopes.size()) +
            " but the driver has d = " + std::to_string(d));
  if (sc.dyadic_exponents.size() < 2) rd.fail("taylor.dyadic_exponents needs at least two times");
  for (int j : sc.dyadic_exponents)
    if (j < 0 || j > 40) rd.fail("taylor.dyadic_exponents must lie in 0..40");

  const double default_h = sc.driver.kind == CovarianceKind::fbm ? sc.driver.hurst : 0.5;
  sc.scaling_hurst = default_h;
  sc.support_hurst = default_h;
  auto check_n = [&](const std::vector<int>& ns_, const std::string& where) {
    if (ns_.empty()) rd.fail(where + " must not be empty");
    for (int n : ns_)
      if (n < 1 || 1.0 / n > sc.driver.horizon)
        rd.fail(where + ": n = " + std::to_string(n) + " needs 1/n inside [0, T]");
  };
  if (const json* s = rd.section(doc, "scaling", "")) {
    rd.allow_keys(*s, {"hurst", "n_list", "subgrid"}, "scaling");
    sc.scaling_hurst = rd.num(*s, "hurst", default_h, "scaling");
    sc.scaling_n = rd.integers(*s, "n_list", sc.scaling_n, "scaling");
    sc.subgrid = static_cast<int>(rd.integer(*s, "subgrid", 64, "scaling"));
  }
  check_n(sc.scaling_n, "scaling.n_list");
  if (sc.subgrid < 1 || sc.subgrid > 4096) rd.fail("scaling.subgrid must lie in 1..4096");
  if (sc.scaling_hurst != default_h)
    rd.fail("scaling.hurst = " + std::to_string(sc.scaling_hurst) + " does not match the comparison fBm (H = " +
            std::to_string(default_h) + " for this driver)");

  if (const json* s = rd.section(doc, "support", "")) {
    rd.allow_keys(*s, {"hurst", "n_list", "eps", "targets", "grid"}, "support");
    sc.support_hurst = rd.num(*s, "hurst", default_h, "support");
    sc.support_n = rd.integers(*s, "n_list", sc.support_n, "support");
    sc.eps = rd.numbers(*s, "eps", {}, "support");
    sc.support_grid = static_cast<int>(rd.integer(*s, "grid", 6, "support"));
    if (s->contains("targets") && !(*s)["targets"].is_null()) {
      const json& ts = (*s)["targets"];
      if (!ts.is_array()) rd.fail("support.targets: expected an array of {\"log\": [[level 1], [level 2], ...]}");
      for (std::size_t i = 0; ts.is_array() && i < ts.size(); ++i) {
        const std::string wt = "support.targets[" + std::to_string(i) + "]";
        if (!ts[i].is_object() || !ts[i].contains("log") || !ts[i]["log"].is_array()) {
          rd.fail(wt + ": expected {\"log\": [[level 1], [level 2], ...]}");
          continue;
        }
        rd.allow_keys(ts[i], {"log"}, wt);
        std::vector<std::vector<double>> levels;
        for (std::size_t k = 0; k < ts[i]["log"].size(); ++k)
          levels.push_back(rd.numbers(ts[i]["log"][k], wt + ".log[" + std::to_string(k) + "]"));
        sc.targets.push_back(std::move(levels));
      }
    }
  }
  check_n(sc.support_n, "support.n_list");
  for (double x : sc.eps)
    if (!(x > 0.0)) rd.fail("support.eps values must be positive");
  if (sc.support_grid < 1 || sc.support_grid > 12) rd.fail("support.grid must lie in 1..12");
  if (!(sc.support_hurst > 0.0 && sc.support_hurst < 1.0)) rd.fail("support.hurst must lie in (0, 1)");
  for (std::size_t i = 0; i < sc.targets.size(); ++i) {
    const auto& lv = sc.targets[i];
    const std::string wt = "support.targets[" + std::to_string(i) + "]";
    if (static_cast<int>(lv.size()) > sc.level) rd.fail(wt + ": more levels than the lift level");
    bool sized = d >= 1 && static_cast<int>(lv.size()) <= sc.level;
    for (std::size_t k = 0; sized && k < lv.size(); ++k)
      if (lv[k].size() != ipow(static_cast<std::size_t>(d), static_cast<int>(k + 1))) {
        rd.fail(wt + ".log[" + std::to_string(k) + "] needs d^" + std::to_string(k + 1) + " entries");
        sized = false;
      }
    if (sized && lv.size() >= 2) {
      // a group element's log is a Lie element: its level 2 is antisymmetric
      double sym = 0.0;
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          sym = std::max(sym, std::abs(lv[1][static_cast<std::size_t>(a * d + b)] +
                                       lv[1][static_cast<std::size_t>(b * d + a)]));
      if (sym > 1e-12) rd.fail(wt + ": level 2 of the log must be antisymmetric (a Lie element)");
    }
  }

  if (!rd.errors.empty()) throw ValidationError(rd.errors);
  if (bridge_at_horizon)
    throw ScenarioError(kDegenerate, "DEGENERATE_COVARIANCE",
                        "bridge returning at the horizon T = " + std::to_string(sc.driver.horizon) +
                            " has a singular covariance; set driver.allow_degenerate to study it");
  return sc;
}

inline std::vector<GroupElement> support_targets(const Scenario& sc) {
  if (sc.targets.empty()) return default_support_targets(sc.driver_dim(), sc.level);
  std::vector<GroupElement> out;
  for (const auto& lv : sc.targets) {
    TruncatedTensor t(sc.driver_dim(), sc.level);
    for (std::size_t k = 0; k < lv.size(); ++k) {
      auto dst = t.level_span(static_cast<int>(k + 1));
      std::copy(lv[k].begin(), lv[k].end(), dst.begin());
    }
    out.push_back(GroupElement::exp(t));
  }
  return out;
}

/// The scenario with every default filled in; parses back to itself.
inline json resolved(const Scenario& sc) {
  json j;
  j["name"] = sc.name;
  json dr;
  dr["kind"] = to_string(sc.driver.kind);
  dr["horizon"] = sc.driver.horizon;
  dr["components"] = sc.driver.components;
  if (sc.driver.kind == CovarianceKind::fbm) dr["hurst"] = sc.driver.hurst;
  if (sc.driver.kind == CovarianceKind::bridge) dr["bridge_return"] = sc.driver.bridge_return;
  dr["allow_degenerate"] = sc.driver.allow_degenerate;
  j["driver"] = dr;
  j["grid"] = sc.grid;
  j["level"] = sc.level;
  j["depth"] = sc.depth;
  json fs = json::array();
  for (const auto& f : sc.fields.fields) fs.push_back(to_json(f));
  j["fields"] = fs;
  j["w"] = sc.w ? to_json(*sc.w) : json(nullptr);
  j["y0"] = to_json(sc.y0);
  j["t"] = sc.t;
  j["basis_modes"] = sc.basis_modes;
  j["variance_fraction"] = sc.variance_fraction;
  j["samples"] = sc.samples;
  j["seed"] = sc.seed;
  j["workers"] = sc.workers;
  j["threshold"] = sc.threshold;
  j["hormander"] = {{"r", sc.hormander_r}, {"group_samples", sc.group_samples}};
  j["taylor"] = {{"order", sc.taylor_order},
                 {"p", sc.taylor_p},
                 {"curve", {{"slopes", sc.curve.slopes}, {"amplitude", sc.curve.amplitude}, {"frequency", sc.curve.frequency}}},
                 {"dyadic_exponents", sc.dyadic_exponents},
                 {"steps", sc.taylor_steps}};
  j["scaling"] = {{"hurst", sc.scaling_hurst}, {"n_list", sc.scaling_n}, {"subgrid", sc.subgrid}};
  json targets = json::array();
  for (const auto& lv : sc.targets) targets.push_back({{"log", lv}});
  j["support"] = {{"hurst", sc.support_hurst},
                  {"n_list", sc.support_n},
                  {"eps", sc.eps},
                  {"targets", targets},
                  {"grid", sc.support_grid}};
  return j;
}

// ---------------------------------------------------------------- commands

struct RunResult {
  int exit_code = kOk;
  std::string error_code;  // set when exit_code != 0
  std::string error_message;
  json report;
  std::vector<std::pair<std::string, std::string>> files;  // extra outputs: name, contents
};

namespace detail {

inline RunResult start(const std::string& command, const Scenario* sc) {
  RunResult r;
  r.report["command"] = command;
  r.report["version"] = kVersion;
  r.report["scenario"] = sc ? resolved(*sc) : json(nullptr);
  r.report["results"] = json::object();
  return r;
}

inline void fail(RunResult& r, int code, const std::string& id, const std::string& msg) {
  r.exit_code = code;
  r.error_code = id;
  r.error_message = msg;
  r.report["error"] = {{"code", id}, {"message", msg}};
}

template <class F>
std::string csv(F&& write) {
  std::ostringstream os;
  write(os);
  return os.str();
}

inline RunResult run_sample(const Scenario& sc) {
  RunResult r = start("sample", &sc);
  const auto grid = uniform_grid(sc.driver.horizon, sc.intervals());
  const auto batch = sample_paths(sc.driver, grid, sc.samples, sc.seed, sc.workers);
  const GaussianSampler sampler(sc.driver, grid);
  json& res = r.report["results"];
  res["jitter_rounds"] = sampler.jitter_rounds();
  res["seeds"] = json::array();
  for (const auto& s : batch) res["seeds"].push_back(s.seed);

  // per-component variance at the evaluation time against R(t, t)
  const std::size_t ti = grid_index(grid, sc.t);
  json var = json::array();
  for (int k = 0; k < sc.driver_dim(); ++k) {
    double acc = 0.0;
    for (const auto& s : batch) acc += s.values(k, static_cast<Eigen::Index>(ti)) * s.values(k, static_cast<Eigen::Index>(ti));
    var.push_back(acc / static_cast<double>(batch.size()));
  }
  res["variance_at_t"] = {{"t", sc.t}, {"empirical", var}, {"covariance", covariance(sc.driver, sc.t, sc.t)}};

  std::vector<double> times(grid.begin() + 1, grid.end());
  const auto nd = nondegeneracy_check(sc.driver, times);
  res["nondegeneracy"] = {{"positive_definite", nd.positive_definite}, {"min_eigenvalue", nd.min_eigenvalue}};
  if (!nd.positive_definite) {
    Eigen::Index at = 0;
    Eigen::Map<const Eigen::VectorXd>(nd.null_direction.data(), static_cast<Eigen::Index>(nd.null_direction.size()))
        .cwiseAbs()
        .maxCoeff(&at);
    res["nondegeneracy"]["null_direction_peak_time"] = times[static_cast<std::size_t>(at)];
  }
  if (sc.driver_dim() >= 2) {
    // Levy area of components 1, 2 over [0, T]
    double acc = 0.0;
    for (const auto& s : batch) {
      const auto g = signature(s.path(), 2);
      const double a = 0.5 * (g.tensor().at(2, 1) - g.tensor().at(2, static_cast<std::size_t>(sc.driver_dim())));
      acc += a * a;
    }
    res["levy_area_variance"] = acc / static_cast<double>(batch.size());
  }
  r.files.emplace_back("samples.csv", csv([&](std::ostream& os) { write_samples_csv(os, batch); }));
  return r;
}

inline RunResult run_solve(const Scenario& sc) {
  RunResult r = start("solve", &sc);
  const auto grid = uniform_grid(sc.driver.horizon, sc.intervals());
  const GaussianSampler sampler(sc.driver, grid);
  const std::uint64_t seed = stream_seed(sc.seed, 0);
  const RoughDrive drive = lift(sampler.sample(seed), sc.level);
  json& res = r.report["results"];
  res["seed"] = seed;
  res["p_variation"] = {{"p", 2.5}, {"depth", 8}, {"value", p_variation(drive, 2.5, 8)}};
  Trajectory tr;
  try {
    tr = sc.w ? bracket_transport(sc.fields, *sc.w, sc.y0, drive, sc.depth) : jacobian_flow(sc.fields, sc.y0, drive, sc.depth);
  } catch (const NumericalExplosion& e) {
    res["exploded"] = {{"time", e.time()}, {"step", e.step()}};
    fail(r, kAllExploded, "EXPLOSION", std::string("all samples exploded: ") + e.what());
    return r;
  }
  const std::size_t ti = grid_index(grid, sc.t);
  res["t"] = sc.t;
  res["y_t"] = to_json(tr.y[ti]);
  res["jacobian_t"] = to_json(tr.jac_forward[ti]);
  res["inverse_jacobian_t"] = to_json(tr.jac_inverse[ti]);
  double defect = 0.0;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(sc.state_dim(), sc.state_dim());
  for (std::size_t j = 0; j < tr.times.size(); ++j)
    defect = std::max(defect, (tr.jac_inverse[j] * tr.jac_forward[j] - id).cwiseAbs().maxCoeff());
  res["max_inverse_defect"] = defect;
  if (sc.w) {
    res["z3_t"] = to_json(tr.transport[ti]);
    res["z3_direct_t"] = to_json(tr.transport_direct[ti]);
    double disagree = 0.0, lie = 0.0;
    const auto integral = transported_bracket_integral(tr, sc.fields, *sc.w, drive.path);
    for (std::size_t j = 0; j < tr.times.size(); ++j) {
      disagree = std::max(disagree, (tr.transport[j] - tr.transport_direct[j]).norm());
      lie = std::max(lie, (tr.transport[j] - tr.transport[0] - integral[j]).norm());
    }
    res["max_transport_disagreement"] = disagree;
    res["lie_identity_residual"] = lie;
  }
  r.files.emplace_back("trajectory.csv", csv([&](std::ostream& os) { tr.write_csv(os); }));
  return r;
}

inline DensityProbeConfig probe_config(const Scenario& sc) {
  DensityProbeConfig cfg;
  cfg.driver = sc.driver;
  cfg.fields = sc.fields;
  cfg.y0 = sc.y0;
  cfg.grid_intervals = sc.intervals();
  cfg.level = sc.level;
  cfg.depth = sc.depth;
  cfg.basis_modes = sc.basis_modes;
  cfg.variance_fraction = sc.variance_fraction;
  cfg.seed = sc.seed;
  cfg.workers = sc.workers;
  return cfg;
}

inline RunResult run_malliavin(const Scenario& sc) {
  RunResult r = start("malliavin", &sc);
  const MalliavinReport rep = density_probe(probe_config(sc), sc.samples, sc.t, sc.threshold);
  json& res = r.report["results"];
  res["t"] = rep.t;
  res["threshold"] = rep.threshold;
  res["basis_modes"] = rep.basis_modes;
  res["basis_warnings"] = rep.basis_warnings;
  res["requested"] = rep.requested;
  res["valid"] = rep.valid();
  res["exploded"] = rep.exploded_seeds.size();
  res["exploded_seeds"] = rep.exploded_seeds;
  res["degenerate"] = rep.degenerate;
  res["degenerate_fraction"] = rep.degenerate_fraction();
  res["cross_check_failures"] = rep.cross_check_failures;
  res["max_cross_check_error"] = rep.max_cross_check_error;
  res["max_determinant_error"] = rep.max_determinant_error;
  res["max_symmetry_error"] = rep.max_symmetry_error;
  res["min_eigenvalue_overall"] = rep.min_eigenvalue_overall;
  json q = json::array();
  for (std::size_t i = 0; i < rep.min_eigenvalue_quantiles.size(); ++i)
    q.push_back({{"level", report_quantile_levels()[i]}, {"value", rep.min_eigenvalue_quantiles[i]}});
  res["min_eigenvalue_quantiles"] = q;
  if (!rep.samples.empty()) {
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(sc.state_dim(), sc.state_dim());
    double max_sigma = 0.0;
    for (const auto& s : rep.samples) {
      mean += s.sigma;
      max_sigma = std::max(max_sigma, s.sigma.norm());
    }
    res["mean_sigma"] = to_json(Eigen::MatrixXd(mean / static_cast<double>(rep.valid())));
    res["max_sigma_norm"] = max_sigma;
  }
  r.files.emplace_back("malliavin.csv", csv([&](std::ostream& os) { rep.write_csv(os); }));
  if (rep.valid() == 0) fail(r, kAllExploded, "EXPLOSION", "all " + std::to_string(rep.requested) + " samples exploded");
  return r;
}

inline json span_json(const SpanReport& s, bool with_vectors) {
  json j;
  j["r"] = s.r;
  j["rank"] = s.rank;
  j["full_rank"] = s.full_rank();
  j["tolerance"] = s.tolerance;
  j["singular_values"] = s.singular_values;
  if (with_vectors) {
    json v = json::array();
    for (std::size_t i = 0; i < s.vectors.size(); ++i) v.push_back({{"label", s.labels[i]}, {"value", to_json(s.vectors[i])}});
    j["vectors"] = v;
  }
  return j;
}

inline RunResult run_hormander(const Scenario& sc) {
  RunResult r = start("hormander", &sc);
  json levels = json::array();
  bool equal = true;
  for (int k = 1; k <= sc.hormander_r; ++k) {
    const SpanReport h = hormander_rank(sc.fields, sc.y0, k);
    const SpanReport ht = ht_rank(sc.fields, sc.y0, k, sc.group_samples, stream_seed(sc.seed, static_cast<std::uint64_t>(k)));
    equal = equal && h.rank == ht.rank && ht.within_bracket_span && ht.covers_bracket_span;
    json l;
    l["r"] = k;
    l["H"] = span_json(h, true);
    l["HT"] = span_json(ht, false);
    l["HT"]["within_bracket_span"] = ht.within_bracket_span;
    l["HT"]["covers_bracket_span"] = ht.covers_bracket_span;
    levels.push_back(l);
  }
  json& res = r.report["results"];
  res["y0"] = to_json(sc.y0);
  res["levels"] = levels;
  res["rank"] = levels.back()["H"]["rank"];
  res["hormander_condition"] = levels.back()["H"]["full_rank"];
  res["ranks_agree"] = equal;
  return r;
}

inline RunResult run_taylor(const Scenario& sc) {
  RunResult r = start("taylor", &sc);
  if (!sc.w) {
    fail(r, kValidation, "VALIDATION", "taylor needs the transported field 'w' (a field or a 1-based field index)");
    return r;
  }
  RemainderOptions opt;
  opt.dyadic_exponents = sc.dyadic_exponents;
  opt.steps = sc.taylor_steps;
  opt.solver_depth = std::max(sc.depth, sc.taylor_order + 2);
  const CurveSpec curve = sc.curve;
  ExpansionReport rep;
  try {
    rep = remainder_slope(sc.fields, *sc.w, sc.y0, [&](double t) { return curve(t); }, sc.taylor_order, sc.taylor_p, opt);
  } catch (const NumericalExplosion& e) {
    fail(r, kAllExploded, "EXPLOSION", std::string("all samples exploded: ") + e.what());
    return r;
  }
  json& res = r.report["results"];
  json coef = json::array();
  for (int k = 0; k <= rep.m; ++k) {
    json lv = json::array();
    for (std::size_t w = 0; w < rep.coefficients[k].size(); ++w)
      lv.push_back({{"word", k == 0 ? std::string("[]") : word_label(decode_word(w, k, rep.driver_dim))},
                    {"value", to_json(rep.coefficients[k][w])}});
    coef.push_back(lv);
  }
  res["coefficients"] = coef;
  res["times"] = rep.times;
  res["remainders"] = rep.remainders;
  res["noise_floor"] = rep.noise_floor;
  res["vacuous"] = rep.vacuous;
  if (rep.vacuous) {
    res["slope"] = nullptr;
    res["finding"] = "vacuous: scheme exact for this system";
  } else {
    res["slope"] = rep.slope;
    res["fit_residual"] = rep.fit_residual;
  }
  res["contract_slope"] = (rep.m + 1) / sc.taylor_p - 0.2;
  res["meets_contract"] = rep.meets_contract;
  r.files.emplace_back("taylor.csv", csv([&](std::ostream& os) {
                         os.precision(17);
                         os << "t,remainder\n";
                         for (std::size_t i = 0; i < rep.times.size(); ++i) os << rep.times[i] << "," << rep.remainders[i] << "\n";
                       }));
  return r;
}

inline RunResult run_scaling(const Scenario& sc) {
  RunResult r = start("scaling", &sc);
  const auto def = scaling_defect(sc.driver, sc.scaling_hurst, sc.scaling_n, sc.subgrid);
  json& res = r.report["results"];
  json rows = json::array();
  std::vector<double> x, y;
  bool all_zero = true;
  for (const auto& p : def) {
    rows.push_back({{"n", p.n}, {"defect", p.defect}});
    all_zero = all_zero && p.defect == 0.0;
    if (p.defect > 0.0) {
      x.push_back(p.n);
      y.push_back(p.defect);
    }
  }
  res["hurst"] = sc.scaling_hurst;
  res["defects"] = rows;
  res["identically_zero"] = all_zero;
  if (x.size() >= 2 && x.size() == def.size()) {
    const auto [slope, resid] = loglog_fit(x, y);
    res["slope"] = slope;
    res["fit_residual"] = resid;
  } else {
    res["slope"] = nullptr;
  }
  r.files.emplace_back("scaling.csv", csv([&](std::ostream& os) {
                         os.precision(17);
                         os << "n,defect\n";
                         for (const auto& p : def) os << p.n << "," << p.defect << "\n";
                       }));
  return r;
}

inline RunResult run_support(const Scenario& sc) {
  RunResult r = start("support", &sc);
  SupportProbeConfig cfg;
  cfg.driver = sc.driver;
  cfg.hurst = sc.support_hurst;
  cfg.level = sc.level;
  cfg.n_list = sc.support_n;
  cfg.targets = support_targets(sc);
  cfg.eps = sc.eps;
  cfg.n_samples = sc.samples;
  cfg.grid_intervals = std::size_t{1} << sc.support_grid;
  cfg.seed = sc.seed;
  cfg.workers = sc.workers;
  const SupportReport rep = support_probe(cfg);
  json& res = r.report["results"];
  json targets = json::array();
  for (const auto& g : rep.targets) targets.push_back(to_json(g.tensor()));
  res["targets"] = targets;
  json cells = json::array();
  bool positive = true;
  for (const auto& c : rep.cells) {
    cells.push_back({{"n", c.n}, {"target", c.target}, {"eps", c.eps}, {"frequency", c.frequency}, {"stderr", c.stderr_}});
    positive = positive && c.frequency > 0.0;
  }
  res["cells"] = cells;
  res["all_frequencies_positive"] = positive;
  json q = json::array();
  for (std::size_t a = 0; a < rep.n_list.size(); ++a)
    for (std::size_t k = 0; k < rep.targets.size(); ++k)
      q.push_back({{"n", rep.n_list[a]}, {"target", k}, {"levels", report_quantile_levels()}, {"distances", rep.distance_quantiles[a][k]}});
  res["distance_quantiles"] = q;
  res["findings"] = rep.findings;
  r.files.emplace_back("support.csv", csv([&](std::ostream& os) {
                         os.precision(17);
                         os << "n,target,eps,frequency,stderr\n";
                         for (const auto& c : rep.cells)
                           os << c.n << "," << c.target << "," << c.eps << "," << c.frequency << "," << c.stderr_ << "\n";
                       }));
  return r;
}

}  // namespace detail

/// Runs one pipeline; library exceptions map onto exit codes.
inline RunResult run(const std::string& command, const Scenario& sc) {
  try {
    if (command == "sample") return detail::run_sample(sc);
    if (command == "solve") return detail::run_solve(sc);
    if (command == "malliavin") return detail::run_malliavin(sc);
    if (command == "hormander") return detail::run_hormander(sc);
    if (command == "taylor") return detail::run_taylor(sc);
    if (command == "scaling") return detail::run_scaling(sc);
    if (command == "support") return detail::run_support(sc);
    if (command == "validate") {
      RunResult r = detail::start("validate", &sc);
      r.report["results"] = {{"valid", true}};
      return r;
    }
  } catch (const DegenerateCovariance& e) {
    RunResult r = detail::start(command, &sc);
    detail::fail(r, kDegenerate, "DEGENERATE_COVARIANCE", e.what());
    return r;
  } catch (const ScenarioError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    RunResult r = detail::start(command, &sc);
    detail::fail(r, kValidation, "VALIDATION", e.what());
    return r;
  }
  throw ScenarioError(kValidation, "USAGE", "unknown command '" + command + "'");
}

}  // namespace gaussrde::scenario
