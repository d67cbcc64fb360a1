#ifndef SPINNET_RUNNER_HPP
#define SPINNET_RUNNER_HPP

#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "spinnet/clusterdyn.hpp"
#include "spinnet/config.hpp"
#include "spinnet/fitkit.hpp"
#include "spinnet/io.hpp"
#include "spinnet/parallel.hpp"
#include "spinnet/protocol.hpp"
#include "spinnet/random.hpp"
#include "spinnet/stats.hpp"
#include "spinnet/transport.hpp"

namespace spinnet {

using Logger = std::function<void(const std::string&)>;

inline ProtocolConfig protocol_config(const RunConfig& c) {
  ProtocolConfig p;
  p.cycle.t_hh = c.t_hh;
  p.cycle.t_laser = c.t_laser;
  p.cycle.n_cycles = c.n_cycles;
  p.cycle.omega = c.omega;
  p.cycle.gamma = c.gamma_hh;
  p.cycle.p_nv0 = c.p_nv0;
  p.cycle.t1rho_dark = c.t1rho_dark;
  p.cycle.t1rho_laser = c.t1rho_laser;
  p.cycle.t1rho_nv = c.t1rho_nv;
  p.cycle.nv_relaxation = c.nv_relaxation;
  p.cycle.probe_count = c.probe_count;
  p.cycle.redraw_detunings = c.redraw_detunings;
  p.cycle.leakage_rate = c.leakage_rate;
  p.W = c.W;
  p.nv_ppm = c.nv_ppm;
  p.p1_ppm = c.p1_ppm;
  p.box_length = c.box_length;
  p.exclusion_radius = c.exclusion_radius;
  p.realizations = c.realizations;
  p.seed = c.seed;
  return p;
}

inline DiffusionConfig diffusion_config(const RunConfig& c) {
  DiffusionConfig d;
  d.omega = c.omega;
  d.W = c.W;
  d.gamma = c.gamma_hh;
  d.p1_ppm = c.p1_ppm;
  d.nv_ppm = c.nv_ppm;
  d.sizes = c.sizes;
  d.realizations = c.realizations;
  d.time_points = c.time_points;
  d.exclusion_radius = c.exclusion_radius;
  d.seed = c.seed;
  return d;
}

inline EchoConfig echo_config(const RunConfig& c, double ppm, std::uint64_t seed) {
  EchoConfig e;
  e.cluster = nv_p1_cluster(ppm, c.echo_bath);
  e.cluster.exclusion_radius = c.exclusion_radius;
  e.tau = scaled_tau_grid(ppm, c.echo_points, c.tau_scale);
  e.realizations = c.realizations;
  e.seed = seed;
  return e;
}

namespace detail {

inline nlohmann::json dephasing_json(const TraceResult& t) {
  try {
    const DephasingFit d = extract_dephasing_rate(t, false);
    return {{"rate_MHz", d.rate}, {"rate_sigma_MHz", d.rate_sigma}, {"T2_us", d.T2},
            {"beta", d.beta},     {"beta_sigma", d.beta_sigma},    {"fit", d.fit}};
  } catch (const FitError& e) {
    return {{"rate_MHz", nullptr}, {"note", e.what()}};
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------------------
// Experiments. Each writes its CSV traces and one summary JSON (manifest embedded) and
// returns the summary body.
// ---------------------------------------------------------------------------------------

inline nlohmann::json run_echo_experiment(const RunConfig& c, io::RunDirectory& out, const Logger& log) {
  const bool deer = c.experiment == Experiment::Deer;
  EchoConfig e = echo_config(c, c.echo_ppm, c.seed);
  log(std::string(deer ? "DEER" : "Hahn echo") + " at " + std::to_string(c.echo_ppm) + " ppm, " +
      std::to_string(c.realizations) + " clusters");
  const TraceResult t = deer ? run_deer(e) : run_hahn(e);
  out.write_text("echo_trace.csv", [&](std::ostream& os) { t.write_csv(os); });
  nlohmann::json s = {{"experiment", deer ? "deer" : "hahn"},
                      {"ppm", c.echo_ppm},
                      {"realizations", t.realizations},
                      {"dephasing", detail::dephasing_json(t)}};
  return s;
}

inline nlohmann::json run_rabi_experiment(const RunConfig& c, io::RunDirectory& out, const Logger& log) {
  std::vector<double> t(c.rabi_points);
  for (std::size_t k = 0; k < t.size(); ++k)
    t[k] = c.rabi_t_max * static_cast<double>(k) / static_cast<double>(t.size() - 1);
  ClusterSpec spec = nv_p1_cluster(c.rabi_ppm, c.rabi_bath);
  spec.exclusion_radius = c.exclusion_radius;
  log("Rabi drive at " + std::to_string(c.omega) + " MHz on " + std::to_string(c.realizations) +
      " P1 clusters");
  std::vector<std::vector<double>> rows(c.realizations);
  parallel_for(c.realizations, [&](std::size_t r) {
    const std::uint64_t s = derive_seed(c.seed, r);
    SampledCluster cl = sample_cluster(spec, s);
    Rng rng = make_rng(derive_seed(s, "detuning"));
    std::normal_distribution<double> g(0.0, c.W);
    for (auto& site : cl.sites) site.detuning = c.W > 0.0 ? g(rng) : 0.0;
    PulseTarget target;
    target.species = Species::P1;
    rows[r] = run_rabi(cl.sites, c.omega, t, target, true, spec.field_axis).signal;
  });
  const TraceResult tr = reduce_traces(t, rows);
  out.write_text("rabi_trace.csv", [&](std::ostream& os) { tr.write_csv(os); });
  nlohmann::json s = {{"experiment", "rabi"}, {"omega_MHz", c.omega}, {"realizations", tr.realizations}};
  const auto peak = fft_peak(tr);
  s["fft_peak_MHz"] = peak ? nlohmann::json(*peak) : nlohmann::json(nullptr);
  try {
    s["damped_cosine"] = fitkit::fit(fitkit::models::damped_cosine(), tr.abscissa, tr.signal);
  } catch (const FitError& e) {
    s["damped_cosine"] = {{"note", e.what()}};
  }
  return s;
}

inline nlohmann::json run_diffusion_experiment(const RunConfig& c, io::RunDirectory& out,
                                               const Logger& log) {
  log("diffusion scaling at " + std::to_string(c.omega) + " MHz over " + std::to_string(c.sizes.size()) +
      " sizes, " + std::to_string(c.realizations) + " realizations each");
  const DiffusionScaling d = run_diffusion_scaling(diffusion_config(c));
  out.write_text("diffusion_scaling.csv", [&](std::ostream& os) {
    os << "N_p1,L_nm,inv_L_per_nm,D_L_nm2_per_us,D_L_sigma\n";
    os.precision(17);
    for (const auto& s : d.sizes)
      os << s.n_p1 << ',' << s.L << ',' << 1.0 / s.L << ',' << s.estimate.D << ','
         << s.estimate.sigma << '\n';
  });
  for (const auto& s : d.sizes)
    out.write_text("msd_N" + std::to_string(s.n_p1) + ".csv",
                   [&](std::ostream& os) { s.curve.write_csv(os); });
  nlohmann::json s = d;
  const double D = std::max(0.0, d.extrapolation.D_inf);
  const double LD = diffusion_length(D, c.tau_us);
  s["tau_us"] = c.tau_us;
  s["diffusion_length_nm"] = LD;
  s["diffusion_length_sigma_nm"] = D > 0.0 ? 0.5 * LD * d.extrapolation.sigma / D : 0.0;
  return s;
}

inline nlohmann::json run_protocol_experiment(const RunConfig& c, io::RunDirectory& out,
                                              const Logger& log) {
  const ProtocolConfig pc = protocol_config(c);
  log("iterative protocol at " + std::to_string(c.omega) + " MHz, " + std::to_string(c.realizations) +
      " realizations");
  const ProtocolResult r = run_iterative_protocol(pc);
  out.write_text("protocol_trajectory.csv", [&](std::ostream& os) { r.write_csv(os); });
  nlohmann::json s = {{"experiment", "protocol"},
                      {"N_sat", r.N_sat},
                      {"N_sat_sigma", r.N_sat_sigma},
                      {"P_sat", r.P_sat},
                      {"P_sat_sigma", r.P_sat_sigma},
                      {"tau_sat_us", r.N_sat * (c.t_hh + c.t_laser)},
                      {"protocol", r}};
  if (c.readout) {
    ReadoutConfig rc;
    rc.network = pc;
    rc.p1_prepared = c.p1_prepared;
    rc.times = readout_times(c.readout_t_max, c.readout_points);
    log("readout equilibration from P_P1 = " + std::to_string(c.p1_prepared));
    const ReadoutResult rr = readout_equilibration(rc);
    out.write_text("readout.csv", [&](std::ostream& os) { rr.write_csv(os); });
    s["readout"] = {{"A", rr.A},
                    {"A_sigma", rr.A_sigma},
                    {"tau_eq_us", rr.tau_eq},
                    {"tau_eq_sigma_us", rr.tau_eq_sigma},
                    {"t1rho_dark_over_tau_eq",
                     std::isfinite(c.t1rho_dark) ? nlohmann::json(c.t1rho_dark / rr.tau_eq)
                                                 : nlohmann::json(nullptr)},
                    {"mean_nv_count", rr.n_nv},
                    {"mean_p1_count", rr.n_p1}};
    if (rr.A > 0.0 && rr.n_p1 > 0.0) {
      PolarizationEstimate e =
          polarization_summary(rr.A, rr.n_nv, rr.n_p1, c.p_nv0, c.field_G, c.temperature_K);
      e.tau_eq = rr.tau_eq;
      s["polarization"] = e;
    }
  }
  return s;
}

inline nlohmann::json run_crossover_experiment(const RunConfig& c, io::RunDirectory& out,
                                               const Logger& log) {
  log("crossover sweep over " + std::to_string(c.omegas.size()) + " Rabi frequencies, " +
      std::to_string(c.realizations) + " realizations each");
  const CrossoverResult r = run_crossover(protocol_config(c), c.omegas);
  out.write_text("crossover.csv", [&](std::ostream& os) { r.write_csv(os); });
  nlohmann::json s = r;
  s["experiment"] = "crossover";
  return s;
}

inline nlohmann::json run_concentration_experiment(const RunConfig& c, io::RunDirectory& out,
                                                   const Logger& log) {
  std::vector<TraceResult> traces;
  for (std::size_t k = 0; k < c.densities.size(); ++k) {
    log("DEER at " + std::to_string(c.densities[k]) + " ppm");
    traces.push_back(run_deer(echo_config(c, c.densities[k], derive_seed(c.seed, k))));
  }
  out.write_text("deer_traces.csv", [&](std::ostream& os) {
    os << "density_ppm,tau_us,signal,sem\n";
    os.precision(17);
    for (std::size_t k = 0; k < traces.size(); ++k)
      for (std::size_t i = 0; i < traces[k].abscissa.size(); ++i)
        os << c.densities[k] << ',' << traces[k].abscissa[i] << ',' << traces[k].signal[i] << ','
           << traces[k].sem[i] << '\n';
  });
  const AlphaCalibration a = calibrate_alpha(c.densities, traces);
  out.write_text("dephasing_rates.csv", [&](std::ostream& os) {
    os << "density_ppm,rate_MHz,rate_sigma_MHz\n";
    os.precision(17);
    for (std::size_t k = 0; k < a.densities.size(); ++k)
      os << a.densities[k] << ',' << a.rates[k] << ',' << a.rate_sigmas[k] << '\n';
  });
  std::vector<GroupConfig> groups;
  for (const auto& g : c.groups) groups.push_back({g.groups, g.density_fraction, a.alpha, a.alpha_sigma});
  const KEstimate K = compute_K(groups);
  nlohmann::json s = {{"experiment", "concentration"},
                      {"alpha_MHz_per_ppm", a.alpha},
                      {"alpha_sigma", a.alpha_sigma},
                      {"r_squared", a.r_squared},
                      {"densities_ppm", a.densities},
                      {"rates_MHz", a.rates},
                      {"rate_sigmas_MHz", a.rate_sigmas},
                      {"K_MHz_per_group_ppm", K.K},
                      {"K_sigma", K.sigma},
                      {"alpha_fit", a.fit}};
  if (c.gamma_exp) {
    const ConcentrationEstimate est =
        estimate_concentration(*c.gamma_exp, c.gamma_sigma, K.K, K.sigma, c.mc_samples,
                               derive_seed(c.seed, "concentration"));
    out.write_text("concentration_posterior.csv", [&](std::ostream& os) {
      os << "ppm\n";
      os.precision(17);
      for (double v : est.posterior) os << v << '\n';
    });
    s["concentration"] = est;
  } else {
    s["concentration"] = nullptr;
  }
  return s;
}

inline nlohmann::json run_fit_experiment(const RunConfig& c, io::RunDirectory& out, const Logger& log) {
  const io::CsvTable t = io::read_csv(c.fit_data);
  const auto col = [&](std::size_t k, const char* what) -> const std::vector<double>& {
    if (k >= t.columns.size())
      throw ConfigError(std::string("/fit/") + what + ": column " + std::to_string(k) +
                        " out of range (file has " + std::to_string(t.columns.size()) + ")");
    return t.columns[k];
  };
  const auto& x = col(c.x_column, "x_column");
  const auto& y = col(c.y_column, "y_column");
  fitkit::FitOptions opt;
  if (c.sigma_column) {
    opt.sigma_y = col(*c.sigma_column, "sigma_column");
    opt.absolute_sigma = true;
  }
  const fitkit::Model m = fitkit::models::by_name(c.fit_model, c.components);
  log("fitting " + c.fit_model + " to " + std::to_string(x.size()) + " points");
  const fitkit::FitResult f = fitkit::fit(m, x, y, opt);
  out.write_text("fit_residuals.csv", [&](std::ostream& os) {
    os << "x,y,model,residual\n";
    os.precision(17);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double yh = m(x[k], f.params);
      os << x[k] << ',' << y[k] << ',' << yh << ',' << y[k] - yh << '\n';
    }
  });
  return {{"experiment", "fit"}, {"data", c.fit_data}, {"fit", f}};
}

/// Summary file name per experiment.
inline std::string summary_name(Experiment e) {
  switch (e) {
    case Experiment::Deer:
    case Experiment::Hahn: return "echo_summary.json";
    case Experiment::Rabi: return "rabi_summary.json";
    case Experiment::Diffusion: return "diffusion_summary.json";
    case Experiment::Protocol: return "protocol_summary.json";
    case Experiment::Crossover: return "crossover_summary.json";
    case Experiment::Concentration: return "concentration_summary.json";
    case Experiment::Fit: return "fit_report.json";
  }
  return "summary.json";
}

/// Runs one experiment into `out`, writes its summary and the manifest.
inline nlohmann::json run_experiment(const RunConfig& c, io::RunDirectory& out, const Logger& log) {
  nlohmann::json s;
  switch (c.experiment) {
    case Experiment::Deer:
    case Experiment::Hahn: s = run_echo_experiment(c, out, log); break;
    case Experiment::Rabi: s = run_rabi_experiment(c, out, log); break;
    case Experiment::Diffusion: s = run_diffusion_experiment(c, out, log); break;
    case Experiment::Protocol: s = run_protocol_experiment(c, out, log); break;
    case Experiment::Crossover: s = run_crossover_experiment(c, out, log); break;
    case Experiment::Concentration: s = run_concentration_experiment(c, out, log); break;
    case Experiment::Fit: s = run_fit_experiment(c, out, log); break;
  }
  out.write_summary(summary_name(c.experiment), s);
  out.finalize();
  return s;
}

}  // namespace spinnet

#endif  // SPINNET_RUNNER_HPP
