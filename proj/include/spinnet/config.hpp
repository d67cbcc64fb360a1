#ifndef SPINNET_CONFIG_HPP
#define SPINNET_CONFIG_HPP

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "spinnet/errors.hpp"
#include "spinnet/network.hpp"

namespace spinnet {

enum class Experiment { Deer, Rabi, Hahn, Diffusion, Protocol, Crossover, Concentration, Fit };

inline constexpr std::array<std::string_view, 8> kExperimentNames{
    "deer", "rabi", "hahn", "diffusion", "protocol", "crossover", "concentration", "fit"};

inline std::string_view experiment_name(Experiment e) {
  return kExperimentNames[static_cast<std::size_t>(e)];
}

inline Experiment parse_experiment(std::string_view s) {
  for (std::size_t k = 0; k < kExperimentNames.size(); ++k)
    if (kExperimentNames[k] == s) return static_cast<Experiment>(k);
  throw ConfigError("unknown experiment '" + std::string(s) + "'");
}

// clang-format off
inline constexpr std::string_view kRunConfigSchema = R"schema({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "spinnet run configuration",
  "type": "object",
  "required": ["experiment"],
  "additionalProperties": false,
  "properties": {
    "experiment": {
      "type": "string",
      "enum": ["deer", "rabi", "hahn", "diffusion", "protocol", "crossover", "concentration", "fit"]
    },
    "seed": {"type": "integer", "minimum": 0},
    "realizations": {"type": "integer", "minimum": 1},
    "output_dir": {"type": "string"},
    "physics": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "omega_MHz": {"type": "number", "exclusiveMinimum": 0},
        "W_MHz": {"type": "number", "minimum": 0},
        "gamma_hh_MHz": {"type": "number", "exclusiveMinimum": 0},
        "t1rho_dark_us": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "t1rho_laser_us": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "t1rho_nv_us": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "p_nv0": {"type": "number", "minimum": 0, "maximum": 1},
        "field_G": {"type": "number", "exclusiveMinimum": 0},
        "temperature_K": {"type": "number", "exclusiveMinimum": 0}
      }
    },
    "network": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "p1_ppm": {"type": "number", "minimum": 0},
        "nv_ppm": {"type": "number", "minimum": 0},
        "box_length_nm": {"type": "number", "exclusiveMinimum": 0},
        "exclusion_radius_nm": {"type": "number", "minimum": 0}
      }
    },
    "protocol": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "t_hh_us": {"type": "number", "exclusiveMinimum": 0},
        "t_laser_us": {"type": "number", "exclusiveMinimum": 0},
        "n_cycles": {"type": "integer", "minimum": 1, "maximum": 32},
        "probe_count": {"type": "integer", "minimum": 1},
        "nv_relaxation": {"type": "boolean"},
        "redraw_detunings": {"type": "boolean"},
        "leakage_rate_per_us": {"type": "number", "minimum": 0},
        "readout": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "enabled": {"type": "boolean"},
            "p1_prepared": {"type": "number", "minimum": -1, "maximum": 1},
            "t_max_us": {"type": "number", "exclusiveMinimum": 0},
            "points": {"type": "integer", "minimum": 3}
          }
        }
      }
    },
    "diffusion": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "sizes": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 2}},
        "time_points": {"type": "integer", "minimum": 10},
        "tau_us": {"type": "number", "minimum": 0}
      }
    },
    "echo": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "ppm": {"type": "number", "exclusiveMinimum": 0},
        "bath_size": {"type": "integer", "minimum": 1, "maximum": 10},
        "points": {"type": "integer", "minimum": 4},
        "tau_scale": {"type": "number", "exclusiveMinimum": 0}
      }
    },
    "rabi": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "ppm": {"type": "number", "exclusiveMinimum": 0},
        "bath_size": {"type": "integer", "minimum": 1, "maximum": 8},
        "t_max_us": {"type": "number", "exclusiveMinimum": 0},
        "points": {"type": "integer", "minimum": 8}
      }
    },
    "crossover": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "omegas_MHz": {"type": "array", "minItems": 2, "items": {"type": "number", "exclusiveMinimum": 0}}
      }
    },
    "concentration": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "densities_ppm": {"type": "array", "minItems": 2, "items": {"type": "number", "exclusiveMinimum": 0}},
        "gamma_exp_MHz": {"type": "number", "minimum": 0},
        "gamma_sigma_MHz": {"type": "number", "minimum": 0},
        "groups": {
          "type": "array",
          "minItems": 1,
          "items": {
            "type": "object",
            "required": ["groups", "density_fraction"],
            "additionalProperties": false,
            "properties": {
              "groups": {"type": "number", "minimum": 0},
              "density_fraction": {"type": "number", "minimum": 0, "maximum": 1}
            }
          }
        },
        "mc_samples": {"type": "integer", "minimum": 100}
      }
    },
    "fit": {
      "type": "object",
      "required": ["model", "data"],
      "additionalProperties": false,
      "properties": {
        "model": {
          "type": "string",
          "enum": ["stretched_exp", "exp_saturation", "exp_decay", "lorentzian", "multi_lorentzian",
                   "linear", "linear_through_origin", "damped_cosine", "crossover"]
        },
        "components": {"type": "integer", "minimum": 1},
        "data": {"type": "string"},
        "x_column": {"type": "integer", "minimum": 0},
        "y_column": {"type": "integer", "minimum": 0},
        "sigma_column": {"type": "integer", "minimum": 0}
      }
    }
  }
}
)schema";
// clang-format on

inline const nlohmann::json& run_config_schema() {
  static const nlohmann::json s = nlohmann::json::parse(kRunConfigSchema);
  return s;
}

// ---------------------------------------------------------------------------------------
// Schema validation (the subset of JSON Schema the run configuration uses)
// ---------------------------------------------------------------------------------------

struct SchemaIssue {
  std::string pointer;  // JSON pointer of the offending value, "" for the root
  std::string message;
};

namespace detail {

inline std::string json_type_name(const nlohmann::json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return "object";
}

inline bool has_type(const nlohmann::json& v, const std::string& t) {
  if (t == "number") return v.is_number();
  if (t == "integer")
    return v.is_number_integer() || v.is_number_unsigned() ||
           (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
  return json_type_name(v) == t;
}

inline std::string fmt_number(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

inline void validate_node(const nlohmann::json& schema, const nlohmann::json& v,
                          const std::string& ptr, std::vector<SchemaIssue>& out) {
  if (auto it = schema.find("type"); it != schema.end()) {
    std::vector<std::string> types;
    if (it->is_array())
      for (const auto& t : *it) types.push_back(t.get<std::string>());
    else
      types.push_back(it->get<std::string>());
    bool ok = false;
    for (const auto& t : types) ok = ok || has_type(v, t);
    if (!ok) {
      std::string want;
      for (const auto& t : types) want += (want.empty() ? "" : " or ") + t;
      out.push_back({ptr, "expected " + want + ", got " + json_type_name(v)});
      return;
    }
  }
  if (auto it = schema.find("enum"); it != schema.end()) {
    bool ok = false;
    for (const auto& e : *it) ok = ok || e == v;
    if (!ok) {
      std::string list;
      for (const auto& e : *it) list += (list.empty() ? "" : ", ") + e.dump();
      out.push_back({ptr, "value " + v.dump() + " not one of [" + list + "]"});
    }
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (auto it = schema.find("minimum"); it != schema.end() && x < it->get<double>())
      out.push_back({ptr, "must be >= " + fmt_number(it->get<double>())});
    if (auto it = schema.find("exclusiveMinimum"); it != schema.end() && x <= it->get<double>())
      out.push_back({ptr, "must be > " + fmt_number(it->get<double>())});
    if (auto it = schema.find("maximum"); it != schema.end() && x > it->get<double>())
      out.push_back({ptr, "must be <= " + fmt_number(it->get<double>())});
  }
  if (v.is_array()) {
    if (auto it = schema.find("minItems");
        it != schema.end() && v.size() < it->get<std::size_t>())
      out.push_back({ptr, "needs at least " + std::to_string(it->get<std::size_t>()) + " items"});
    if (auto it = schema.find("items"); it != schema.end())
      for (std::size_t k = 0; k < v.size(); ++k)
        validate_node(*it, v[k], ptr + "/" + std::to_string(k), out);
  }
  if (v.is_object()) {
    if (auto it = schema.find("required"); it != schema.end())
      for (const auto& r : *it)
        if (!v.contains(r.get<std::string>()))
          out.push_back({ptr + "/" + r.get<std::string>(), "required field missing"});
    const auto props = schema.find("properties");
    const bool closed = schema.value("additionalProperties", true) == false;
    for (auto kv = v.begin(); kv != v.end(); ++kv) {
      const std::string child = ptr + "/" + kv.key();
      if (props != schema.end() && props->contains(kv.key()))
        validate_node((*props)[kv.key()], kv.value(), child, out);
      else if (closed)
        out.push_back({child, "unknown field"});
    }
  }
}

}  // namespace detail

inline std::vector<SchemaIssue> validate_against_schema(const nlohmann::json& value,
                                                        const nlohmann::json& schema = run_config_schema()) {
  std::vector<SchemaIssue> out;
  detail::validate_node(schema, value, "", out);
  return out;
}

// ---------------------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------------------

struct GroupSpec {
  double groups = 1.0;
  double density_fraction = 1.0;
};

struct RunConfig {
  Experiment experiment = Experiment::Protocol;
  std::uint64_t seed = 0;
  std::size_t realizations = 100;
  std::string output_dir;  // empty: derived from the output root

  // physics
  double omega = 6.40;  // MHz
  double W = 1.36;      // MHz
  double gamma_hh = 0.15;
  double t1rho_dark = 430.0;  // us; infinity disables
  double t1rho_laser = 32.0;
  double t1rho_nv = 1300.0;
  double p_nv0 = 0.75;
  double field_G = 446.0;
  double temperature_K = 300.0;

  // network
  double p1_ppm = 1.575;
  double nv_ppm = 0.6;
  double box_length = 80.0;  // nm
  double exclusion_radius = 1.0;

  // protocol
  double t_hh = 5.0;
  double t_laser = 5.0;
  std::size_t n_cycles = 32;
  std::size_t probe_count = 8;
  bool nv_relaxation = true;
  bool redraw_detunings = false;
  double leakage_rate = 0.0;
  bool readout = true;
  double p1_prepared = 0.074;
  double readout_t_max = 30.0;
  std::size_t readout_points = 61;

  // diffusion
  std::vector<std::size_t> sizes{100, 200, 400, 800};
  std::size_t time_points = 600;
  double tau_us = 30.0;

  // echo (deer, hahn)
  double echo_ppm = 1.0;
  std::size_t echo_bath = 5;
  std::size_t echo_points = 40;
  double tau_scale = 6.0;

  // rabi
  double rabi_ppm = 1.575;
  std::size_t rabi_bath = 4;
  double rabi_t_max = 5.0;
  std::size_t rabi_points = 256;

  // crossover
  std::vector<double> omegas{0.5, 1.0, 2.0, 3.0, 4.0, 6.4, 10.0};

  // concentration
  std::vector<double> densities{0.8, 2.4, 6.3, 26.0};
  std::optional<double> gamma_exp;
  double gamma_sigma = 0.0;
  std::vector<GroupSpec> groups{{1.0, 1.0}};
  std::size_t mc_samples = 10000;

  // fit
  std::string fit_model;
  std::size_t components = 1;
  std::string fit_data;  // resolved against the config file directory
  std::size_t x_column = 0;
  std::size_t y_column = 1;
  std::optional<std::size_t> sigma_column;
};

namespace detail {

inline double relaxation_from_json(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (j[key].is_null()) return std::numeric_limits<double>::infinity();
  return j[key].get<double>();
}

inline nlohmann::json relaxation_to_json(double t) {
  return std::isfinite(t) ? nlohmann::json(t) : nlohmann::json(nullptr);
}

}  // namespace detail

/// Builds a RunConfig from JSON that already passed schema validation. Relative data paths
/// are resolved against `base_dir`.
inline RunConfig run_config_from_json(const nlohmann::json& j,
                                      const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  c.experiment = parse_experiment(j.at("experiment").get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.realizations = j.value("realizations", c.realizations);
  c.output_dir = j.value("output_dir", c.output_dir);
  const auto block = [&](const char* k) { return j.contains(k) ? j[k] : nlohmann::json::object(); };

  const auto ph = block("physics");
  c.omega = ph.value("omega_MHz", c.omega);
  c.W = ph.value("W_MHz", c.W);
  c.gamma_hh = ph.value("gamma_hh_MHz", c.gamma_hh);
  c.t1rho_dark = detail::relaxation_from_json(ph, "t1rho_dark_us", c.t1rho_dark);
  c.t1rho_laser = detail::relaxation_from_json(ph, "t1rho_laser_us", c.t1rho_laser);
  c.t1rho_nv = detail::relaxation_from_json(ph, "t1rho_nv_us", c.t1rho_nv);
  c.p_nv0 = ph.value("p_nv0", c.p_nv0);
  c.field_G = ph.value("field_G", c.field_G);
  c.temperature_K = ph.value("temperature_K", c.temperature_K);

  const auto nw = block("network");
  c.p1_ppm = nw.value("p1_ppm", c.p1_ppm);
  c.nv_ppm = nw.value("nv_ppm", c.nv_ppm);
  c.box_length = nw.value("box_length_nm", c.box_length);
  c.exclusion_radius = nw.value("exclusion_radius_nm", c.exclusion_radius);

  const auto pr = block("protocol");
  c.t_hh = pr.value("t_hh_us", c.t_hh);
  c.t_laser = pr.value("t_laser_us", c.t_laser);
  c.n_cycles = pr.value("n_cycles", c.n_cycles);
  c.probe_count = pr.value("probe_count", c.probe_count);
  c.nv_relaxation = pr.value("nv_relaxation", c.nv_relaxation);
  c.redraw_detunings = pr.value("redraw_detunings", c.redraw_detunings);
  c.leakage_rate = pr.value("leakage_rate_per_us", c.leakage_rate);
  const auto ro = pr.contains("readout") ? pr["readout"] : nlohmann::json::object();
  c.readout = ro.value("enabled", c.readout);
  c.p1_prepared = ro.value("p1_prepared", c.p1_prepared);
  c.readout_t_max = ro.value("t_max_us", c.readout_t_max);
  c.readout_points = ro.value("points", c.readout_points);

  const auto df = block("diffusion");
  c.sizes = df.value("sizes", c.sizes);
  c.time_points = df.value("time_points", c.time_points);
  c.tau_us = df.value("tau_us", c.tau_us);

  const auto ec = block("echo");
  c.echo_ppm = ec.value("ppm", c.echo_ppm);
  c.echo_bath = ec.value("bath_size", c.echo_bath);
  c.echo_points = ec.value("points", c.echo_points);
  c.tau_scale = ec.value("tau_scale", c.tau_scale);

  const auto rb = block("rabi");
  c.rabi_ppm = rb.value("ppm", c.rabi_ppm);
  c.rabi_bath = rb.value("bath_size", c.rabi_bath);
  c.rabi_t_max = rb.value("t_max_us", c.rabi_t_max);
  c.rabi_points = rb.value("points", c.rabi_points);

  const auto cr = block("crossover");
  c.omegas = cr.value("omegas_MHz", c.omegas);

  const auto cc = block("concentration");
  c.densities = cc.value("densities_ppm", c.densities);
  if (cc.contains("gamma_exp_MHz")) c.gamma_exp = cc["gamma_exp_MHz"].get<double>();
  c.gamma_sigma = cc.value("gamma_sigma_MHz", c.gamma_sigma);
  if (cc.contains("groups")) {
    c.groups.clear();
    for (const auto& g : cc["groups"])
      c.groups.push_back({g.at("groups").get<double>(), g.at("density_fraction").get<double>()});
  }
  c.mc_samples = cc.value("mc_samples", c.mc_samples);

  if (j.contains("fit")) {
    const auto& f = j["fit"];
    c.fit_model = f.at("model").get<std::string>();
    c.components = f.value("components", c.components);
    std::filesystem::path data = f.at("data").get<std::string>();
    if (data.is_relative() && !base_dir.empty()) data = base_dir / data;
    c.fit_data = data.lexically_normal().string();
    c.x_column = f.value("x_column", c.x_column);
    c.y_column = f.value("y_column", c.y_column);
    if (f.contains("sigma_column")) c.sigma_column = f["sigma_column"].get<std::size_t>();
  }
  return c;
}

/// Fully resolved configuration: every default spelled out, so the output alone reruns the
/// experiment.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : c.groups)
    groups.push_back({{"groups", g.groups}, {"density_fraction", g.density_fraction}});
  nlohmann::json j = {
      {"experiment", std::string(experiment_name(c.experiment))},
      {"seed", c.seed},
      {"realizations", c.realizations},
      {"physics",
       {{"omega_MHz", c.omega},
        {"W_MHz", c.W},
        {"gamma_hh_MHz", c.gamma_hh},
        {"t1rho_dark_us", detail::relaxation_to_json(c.t1rho_dark)},
        {"t1rho_laser_us", detail::relaxation_to_json(c.t1rho_laser)},
        {"t1rho_nv_us", detail::relaxation_to_json(c.t1rho_nv)},
        {"p_nv0", c.p_nv0},
        {"field_G", c.field_G},
        {"temperature_K", c.temperature_K}}},
      {"network",
       {{"p1_ppm", c.p1_ppm},
        {"nv_ppm", c.nv_ppm},
        {"box_length_nm", c.box_length},
        {"exclusion_radius_nm", c.exclusion_radius}}},
      {"protocol",
       {{"t_hh_us", c.t_hh},
        {"t_laser_us", c.t_laser},
        {"n_cycles", c.n_cycles},
        {"probe_count", c.probe_count},
        {"nv_relaxation", c.nv_relaxation},
        {"redraw_detunings", c.redraw_detunings},
        {"leakage_rate_per_us", c.leakage_rate},
        {"readout",
         {{"enabled", c.readout},
          {"p1_prepared", c.p1_prepared},
          {"t_max_us", c.readout_t_max},
          {"points", c.readout_points}}}}},
      {"diffusion", {{"sizes", c.sizes}, {"time_points", c.time_points}, {"tau_us", c.tau_us}}},
      {"echo",
       {{"ppm", c.echo_ppm},
        {"bath_size", c.echo_bath},
        {"points", c.echo_points},
        {"tau_scale", c.tau_scale}}},
      {"rabi",
       {{"ppm", c.rabi_ppm},
        {"bath_size", c.rabi_bath},
        {"t_max_us", c.rabi_t_max},
        {"points", c.rabi_points}}},
      {"crossover", {{"omegas_MHz", c.omegas}}},
      {"concentration",
       {{"densities_ppm", c.densities},
        {"gamma_sigma_MHz", c.gamma_sigma},
        {"groups", groups},
        {"mc_samples", c.mc_samples}}}};
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  if (c.gamma_exp) j["concentration"]["gamma_exp_MHz"] = *c.gamma_exp;
  if (!c.fit_model.empty()) {
    j["fit"] = {{"model", c.fit_model},
                {"components", c.components},
                {"data", c.fit_data},
                {"x_column", c.x_column},
                {"y_column", c.y_column}};
    if (c.sigma_column) j["fit"]["sigma_column"] = *c.sigma_column;
  }
  return j;
}

// ---------------------------------------------------------------------------------------
// Validation report
// ---------------------------------------------------------------------------------------

struct ValidationReport {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  std::optional<RunConfig> config;

  bool ok() const { return errors.empty(); }
};

namespace detail {

inline void check_spacing(double ppm, double exclusion, const std::string& field,
                          std::vector<std::string>& warnings) {
  if (!(ppm > 0.0) || !(exclusion > 0.0)) return;
  const double d = mean_spacing(ppm);
  if (d < exclusion) {
    std::ostringstream os;
    os << field << ": mean spacing " << d << " nm at " << ppm
       << " ppm is below the exclusion radius " << exclusion
       << " nm; site generation is likely infeasible";
    warnings.push_back(os.str());
  }
}

}  // namespace detail

/// Schema plus physics sanity checks, without running anything.
inline ValidationReport validate_config(const nlohmann::json& j,
                                        const std::filesystem::path& base_dir = {}) {
  ValidationReport rep;
  for (const auto& issue : validate_against_schema(j))
    rep.errors.push_back((issue.pointer.empty() ? "/" : issue.pointer) + ": " + issue.message);
  if (!rep.ok()) return rep;
  const RunConfig c = run_config_from_json(j, base_dir);

  detail::check_spacing(c.p1_ppm + c.nv_ppm, c.exclusion_radius, "/network", rep.warnings);
  switch (c.experiment) {
    case Experiment::Deer:
    case Experiment::Hahn:
      detail::check_spacing(c.echo_ppm, c.exclusion_radius, "/echo/ppm", rep.warnings);
      break;
    case Experiment::Rabi:
      detail::check_spacing(c.rabi_ppm, c.exclusion_radius, "/rabi/ppm", rep.warnings);
      break;
    case Experiment::Concentration:
      for (std::size_t k = 0; k < c.densities.size(); ++k)
        detail::check_spacing(c.densities[k], c.exclusion_radius,
                              "/concentration/densities_ppm/" + std::to_string(k), rep.warnings);
      {
        bool any = false;
        for (const auto& g : c.groups) any = any || g.groups > 0.0;
        if (!any) rep.errors.push_back("/concentration/groups: no entry addresses a bath group");
      }
      break;
    case Experiment::Diffusion:
      if (c.realizations < 2) rep.errors.push_back("/realizations: diffusion needs at least 2");
      if (!(c.p1_ppm > 0.0)) rep.errors.push_back("/network/p1_ppm: diffusion needs a P1 bath > 0");
      break;
    case Experiment::Protocol:
    case Experiment::Crossover:
      if (!(c.p1_ppm > 0.0)) rep.errors.push_back("/network/p1_ppm: protocol needs a P1 bath > 0");
      if (!(c.nv_ppm > 0.0)) rep.errors.push_back("/network/nv_ppm: protocol needs NV centers > 0");
      if (c.readout && c.p_nv0 == 0.0)
        rep.errors.push_back("/physics/p_nv0: readout needs p_nv0 > 0");
      break;
    case Experiment::Fit:
      if (c.fit_model.empty()) rep.errors.push_back("/fit: required for the fit experiment");
      else if (!std::filesystem::exists(c.fit_data))
        rep.errors.push_back("/fit/data: file '" + c.fit_data + "' not found");
      break;
  }
  if (c.experiment == Experiment::Protocol || c.experiment == Experiment::Crossover ||
      c.experiment == Experiment::Diffusion) {
    const double expected = ppm_to_density(c.p1_ppm + c.nv_ppm) * std::pow(c.box_length, 3);
    if (c.experiment != Experiment::Diffusion && expected > 5000.0)
      rep.warnings.push_back("/network/box_length_nm: about " + std::to_string(long(expected)) +
                             " sites per realization; runs will be slow");
  }
  if (rep.ok()) rep.config = c;
  return rep;
}

/// Reads a JSON config file. Syntax errors are ConfigErrors naming the file.
inline nlohmann::json read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path.string() + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace spinnet

#endif  // SPINNET_CONFIG_HPP
