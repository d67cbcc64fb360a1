// spinnet: run, reproduce and validate simulation configs.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "spinnet/config.hpp"
#include "spinnet/io.hpp"
#include "spinnet/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spinnet;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> realizations;
  std::optional<double> omega;
  std::string out;
  bool quiet = false;
};

void apply(const Overrides& o, json& j) {
  if (o.seed) j["seed"] = *o.seed;
  if (o.realizations) j["realizations"] = *o.realizations;
  if (o.omega) j["physics"]["omega_MHz"] = *o.omega;
}

fs::path output_root() {
  if (const char* env = std::getenv("SPINNET_OUT_ROOT"); env && *env) return env;
  return "runs";
}

std::string stamp() {
  std::string s = io::utc_timestamp();
  std::erase(s, ':');
  std::erase(s, '-');
  return s;
}

fs::path run_directory(const RunConfig& c, const Overrides& o, const std::string& label) {
  if (!o.out.empty()) return o.out;
  if (!c.output_dir.empty()) return c.output_dir;
  return output_root() / (label + "-seed" + std::to_string(c.seed) + "-" + stamp());
}

Logger make_logger(bool quiet) {
  if (quiet) return [](const std::string&) {};
  return [](const std::string& m) { std::cerr << "[spinnet] " << m << '\n'; };
}

RunConfig checked(const json& j, const fs::path& base, bool quiet) {
  const ValidationReport rep = validate_config(j, base);
  if (!quiet)
    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  if (!rep.ok()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : rep.errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return *rep.config;
}

json run_into(const RunConfig& c, const fs::path& dir, const Logger& log) {
  io::RunDirectory out(dir, to_json(c), c.seed);
  log("writing to " + out.root().string());
  return run_experiment(c, out, log);
}

// ---------------------------------------------------------------------------------------
// run / validate
// ---------------------------------------------------------------------------------------

int cmd_run(const std::string& path, const Overrides& o) {
  json j = read_config_file(path);
  apply(o, j);
  const RunConfig c = checked(j, fs::path(path).parent_path(), o.quiet);
  const fs::path dir = run_directory(c, o, std::string(experiment_name(c.experiment)));
  run_into(c, dir, make_logger(o.quiet));
  if (!o.quiet) std::cout << "wrote " << (dir / summary_name(c.experiment)).string() << '\n';
  return 0;
}

int cmd_validate(const std::string& path, const Overrides& o) {
  json j = read_config_file(path);
  apply(o, j);
  const ValidationReport rep = validate_config(j, fs::path(path).parent_path());
  for (const auto& w : rep.warnings) std::cout << "warning: " << w << '\n';
  for (const auto& e : rep.errors) std::cout << "error: " << e << '\n';
  if (!rep.ok()) return kExitConfig;
  std::cout << "ok\n";
  return 0;
}

// ---------------------------------------------------------------------------------------
// reproduce
// ---------------------------------------------------------------------------------------

struct Row {
  std::string quantity;
  double value;
  double sigma;
  std::string target;
  double lo, hi;
};

void print_table(const std::string& title, const std::vector<Row>& rows) {
  std::cout << '\n' << title << '\n';
  std::cout << std::left << std::setw(34) << "quantity" << std::setw(22) << "simulated"
            << std::setw(14) << "target" << std::setw(20) << "accepted" << "status\n";
  for (const auto& r : rows) {
    std::ostringstream v, acc;
    v << std::setprecision(4) << r.value;
    if (r.sigma > 0.0) v << " +- " << std::setprecision(2) << r.sigma;
    acc << '[' << std::setprecision(4) << r.lo << ", " << r.hi << ']';
    const bool ok = std::isfinite(r.value) && r.value >= r.lo && r.value <= r.hi;
    std::cout << std::left << std::setw(34) << r.quantity << std::setw(22) << v.str()
              << std::setw(14) << r.target << std::setw(20) << acc.str() << (ok ? "ok" : "OFF")
              << '\n';
  }
}

const std::vector<std::string> kTags{"fig-s2", "fig-s3", "fig-s4a", "fig-s4b", "fig-4"};

RunConfig preset_base(Experiment e, const Overrides& o, std::size_t realizations) {
  RunConfig c;
  c.experiment = e;
  c.realizations = o.realizations.value_or(realizations);
  c.seed = o.seed.value_or(1);
  if (o.omega) c.omega = *o.omega;
  return c;
}

int cmd_reproduce(const std::string& tag, const Overrides& o) {
  if (std::find(kTags.begin(), kTags.end(), tag) == kTags.end()) {
    std::cerr << "error: unknown reproduce tag '" << tag << "'; valid tags:";
    for (const auto& t : kTags) std::cerr << ' ' << t;
    std::cerr << '\n';
    return kExitConfig;
  }
  const Logger log = make_logger(o.quiet);
  const fs::path root = !o.out.empty() ? fs::path(o.out)
                                       : output_root() / ("reproduce-" + tag + "-" + stamp());
  std::vector<Row> rows;
  std::string title;

  if (tag == "fig-s2") {
    RunConfig c = preset_base(Experiment::Concentration, o, 60);
    const json s = run_into(c, root, log);
    const auto& d = s["densities_ppm"];
    const auto& r = s["rates_MHz"];
    double r24 = 0.0, r63 = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (d[k].get<double>() == 2.4) r24 = r[k].get<double>();
      if (d[k].get<double>() == 6.3) r63 = r[k].get<double>();
    }
    title = "DEER dephasing versus P1 density (" + std::to_string(c.realizations) + " clusters per density)";
    rows.push_back({"alpha (MHz/ppm)", s["alpha_MHz_per_ppm"].get<double>(),
                    s["alpha_sigma"].get<double>(), "linear", 0.0, 1e9});
    rows.push_back({"R^2 of rate vs density", s["r_squared"].get<double>(), 0.0, "> 0.95", 0.95, 1.0});
    rows.push_back({"rate ratio 6.3 / 2.4 ppm", r24 > 0.0 ? r63 / r24 : std::nan(""), 0.0, "2.6",
                    2.6 * 0.7, 2.6 * 1.3});
  } else if (tag == "fig-s3") {
    title = "Extrapolated diffusion coefficient versus Rabi frequency";
    std::vector<double> omegas{1.0, 3.0, 6.40};
    if (o.omega) omegas = {*o.omega};
    for (double om : omegas) {
      RunConfig c = preset_base(Experiment::Diffusion, o, 10);
      c.omega = om;
      std::ostringstream sub;
      sub << "omega_" << std::fixed << std::setprecision(2) << om;
      const json s = run_into(c, root / sub.str(), log);
      std::ostringstream q;
      q << "D_inf at " << std::setprecision(3) << om << " MHz (nm^2/us)";
      const double D = s["D_inf"].get<double>();
      if (std::abs(om - 6.40) < 1e-9) {
        rows.push_back({q.str(), D, s["sigma"].get<double>(), "0.22", 0.13, 0.33});
        rows.push_back({"L_D at 30 us (nm)", s["diffusion_length_nm"].get<double>(),
                        s["diffusion_length_sigma_nm"].get<double>(), "6.2", 4.8, 7.7});
      } else {
        rows.push_back({q.str(), D, s["sigma"].get<double>(), "finite", 0.0, 1e9});
      }
    }
  } else if (tag == "fig-s4a") {
    RunConfig c = preset_base(Experiment::Protocol, o, 40);
    c.readout = false;
    const json s = run_into(c, root, log);
    title = "Iterative protocol saturation at " + std::to_string(c.omega) + " MHz";
    rows.push_back({"N_sat (cycles)", s["N_sat"].get<double>(), s["N_sat_sigma"].get<double>(), "3",
                    2.0, 4.0});
    rows.push_back({"P_sat", s["P_sat"].get<double>(), s["P_sat_sigma"].get<double>(), "0.179", 0.12,
                    0.24});
  } else if (tag == "fig-s4b") {
    RunConfig c = preset_base(Experiment::Crossover, o, 20);
    c.omegas = {0.5, 1.0, 2.0, 3.0, 6.4, 10.0};
    const json s = run_into(c, root, log);
    title = "Saturation polarization versus Rabi frequency";
    rows.push_back({"P_inf", s["A_inf"].get<double>(), s["A_inf_sigma"].get<double>(), "0.179", 0.12,
                    0.24});
    rows.push_back({"Omega_c (MHz)", s["W_MHz"].get<double>(), s["W_sigma"].get<double>(), "finite",
                    0.0, 1e9});
  } else {  // fig-4
    title = "Polarization chain and readout equilibration";
    const auto e = polarization_summary(0.143, 1.0, 2.6, 0.75, 446.0);
    rows.push_back({"P_P1 from A = 0.143", e.P_p1, 0.0, "0.074", 0.073, 0.075});
    rows.push_back({"spin temperature (K)", e.T_spin, 0.0, "0.405", 0.400, 0.410});
    rows.push_back({"thermal polarization 300 K", e.P_thermal, 0.0, "1.0e-4", 0.95e-4, 1.05e-4});
    rows.push_back({"enhancement", e.enhancement, 0.0, "740", 700.0, 780.0});
    RunConfig c = preset_base(Experiment::Protocol, o, 40);
    c.readout = true;
    const json s = run_into(c, root, log);
    const double tau = s["readout"]["tau_eq_us"].get<double>();
    rows.push_back({"readout tau_eq (us)", tau, s["readout"]["tau_eq_sigma_us"].get<double>(),
                    "< T1rho/50", 0.0, c.t1rho_dark / 50.0});
    rows.push_back({"N_sat (cycles)", s["N_sat"].get<double>(), s["N_sat_sigma"].get<double>(), "3",
                    2.0, 4.0});
  }
  print_table(title, rows);
  std::cout << "artifacts: " << root.string() << '\n';
  return 0;
}

void add_overrides(CLI::App* sub, Overrides& o, bool with_out) {
  sub->add_option("--seed", o.seed, "Master seed");
  sub->add_option("--realizations", o.realizations, "Disorder realizations")->check(CLI::PositiveNumber);
  sub->add_option("--omega-mhz", o.omega, "Rabi frequency override, MHz");
  if (with_out) sub->add_option("--out", o.out, "Run directory (default: $SPINNET_OUT_ROOT or ./runs)");
  sub->add_flag("--quiet", o.quiet, "Suppress progress output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disordered dipolar spin network simulations"};
  app.set_version_flag("--version", std::string(SPINNET_VERSION));
  app.require_subcommand(1);

  Overrides o;
  std::string config, tag;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config, "Config JSON")->required();
  add_overrides(run, o, true);

  auto* rep = app.add_subcommand("reproduce", "Run a figure preset at desk scale and compare");
  rep->add_option("tag", tag, "fig-s2, fig-s3, fig-s4a, fig-s4b or fig-4")->required();
  add_overrides(rep, o, true);

  auto* val = app.add_subcommand("validate", "Check a config without running it");
  val->add_option("config", config, "Config JSON")->required();
  add_overrides(val, o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, o);
    if (*rep) return cmd_reproduce(tag, o);
    return cmd_validate(config, o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const GenerationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FitError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
