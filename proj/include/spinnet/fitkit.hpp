#ifndef SPINNET_FITKIT_HPP
#define SPINNET_FITKIT_HPP

// Nonlinear least squares (Levenberg-Marquardt with a finite-difference Jacobian and box
// bounds), weighted linear regression, Monte Carlo uncertainty propagation and spectra.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spinnet/errors.hpp"
#include "spinnet/random.hpp"
#include "spinnet/stats.hpp"

namespace spinnet::fitkit {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

using ModelFunction = std::function<double(double, std::span<const double>)>;
using GuessFunction =
    std::function<std::vector<double>(std::span<const double>, std::span<const double>)>;

struct Model {
  std::string name;
  std::vector<std::string> parameter_names;
  ModelFunction eval;
  std::vector<double> lower;
  std::vector<double> upper;
  GuessFunction initial_guess;

  std::size_t num_params() const { return parameter_names.size(); }
  double operator()(double x, std::span<const double> p) const { return eval(x, p); }
};

struct FitResult {
  std::string model;
  std::vector<std::string> names;
  std::vector<double> params;
  std::vector<double> sigma;  // 1 sigma
  Eigen::MatrixXd covariance;
  double residual_norm = 0.0;  // sqrt(sum of weighted squared residuals)
  double chi2 = 0.0;
  std::size_t dof = 0;
  double r_squared = 0.0;
  bool converged = false;
  bool sigma_reliable = true;
  std::size_t iterations = 0;
  std::string message;

  std::size_t index(std::string_view name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return k;
    throw MisuseError("fit has no parameter named '" + std::string(name) + "'");
  }
  double value(std::string_view name) const { return params[index(name)]; }
  double error(std::string_view name) const { return sigma[index(name)]; }
};

struct FitOptions {
  std::optional<std::vector<double>> sigma_y;  // per-point 1 sigma
  bool absolute_sigma = false;  // true: sigma_y are true errors; false: rescale by reduced chi2
  std::optional<std::vector<double>> initial;
  std::size_t max_iterations = 2000;
  double tolerance = 1e-15;
};

namespace detail {

inline std::vector<std::size_t> argsort(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  return idx;
}

// First abscissa (in ascending x) at which y crosses `level`, linearly interpolated.
inline std::optional<double> first_crossing(std::span<const double> x, std::span<const double> y,
                                            double level) {
  const auto idx = argsort(x);
  for (std::size_t k = 1; k < idx.size(); ++k) {
    const double y0 = y[idx[k - 1]] - level, y1 = y[idx[k]] - level;
    if (y0 == 0.0) return x[idx[k - 1]];
    if ((y0 < 0.0) != (y1 < 0.0)) {
      const double t = y0 / (y0 - y1);
      return x[idx[k - 1]] + t * (x[idx[k]] - x[idx[k - 1]]);
    }
  }
  return std::nullopt;
}

inline double tail_mean(std::span<const double> x, std::span<const double> y, double fraction) {
  const auto idx = argsort(x);
  const std::size_t n = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * idx.size()));
  double s = 0.0;
  for (std::size_t k = idx.size() - n; k < idx.size(); ++k) s += y[idx[k]];
  return s / static_cast<double>(n);
}

inline double head_value(std::span<const double> x, std::span<const double> y) {
  return y[argsort(x).front()];
}

inline double x_span(std::span<const double> x) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return *hi - *lo;
}

inline double lorentz(double x, double c, double w, double a) {
  const double d = x - c;
  return a * w * w / (d * d + w * w);
}

// Half width at half maximum of the feature at index `peak` above `base`.
inline double half_width(std::span<const double> x, std::span<const double> y, std::size_t peak,
                         double base) {
  const auto idx = argsort(x);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < idx.size(); ++k)
    if (idx[k] == peak) pos = k;
  const double half = 0.5 * (y[peak] - base);
  double left = x[idx.front()], right = x[idx.back()];
  for (std::size_t k = pos; k-- > 0;)
    if (std::abs(y[idx[k]] - base) <= std::abs(half)) {
      left = x[idx[k]];
      break;
    }
  for (std::size_t k = pos + 1; k < idx.size(); ++k)
    if (std::abs(y[idx[k]] - base) <= std::abs(half)) {
      right = x[idx[k]];
      break;
    }
  const double w = 0.5 * (right - left);
  return w > 0.0 ? w : 0.1 * x_span(x);
}

}  // namespace detail

// ---------------------------------------------------------------------------------------
// Model catalogue
// ---------------------------------------------------------------------------------------

namespace models {

/// A exp[-(t / T2)^beta], beta bounded to [0.3, 3].
inline Model stretched_exp() {
  Model m;
  m.name = "stretched_exp";
  m.parameter_names = {"A", "T2", "beta"};
  m.eval = [](double t, std::span<const double> p) {
    return p[0] * std::exp(-std::pow(std::max(t, 0.0) / p[1], p[2]));
  };
  m.lower = {-kInf, 1e-12, 0.3};
  m.upper = {kInf, kInf, 3.0};
  m.initial_guess = [](std::span<const double> x, std::span<const double> y) {
    const double a = detail::head_value(x, y);
    const double t2 = detail::first_crossing(x, y, a / std::numbers::e)
                          .value_or(2.0 * detail::x_span(x));
    return std::vector<double>{a, std::max(t2, 1e-9), 1.0};
  };
  return m;
}

/// A (1 - exp(-x / tau)); passes through the origin.
inline Model exp_saturation() {
  Model m;
  m.name = "exp_saturation";
  m.parameter_names = {"A", "tau"};
  m.eval = [](double x, std::span<const double> p) { return -p[0] * std::expm1(-x / p[1]); };
  m.lower = {-kInf, 1e-12};
  m.upper = {kInf, kInf};
  m.initial_guess = [](std::span<const double> x, std::span<const double> y) {
    const double a = detail::tail_mean(x, y, 0.2);
    const double tau = detail::first_crossing(x, y, a * (1.0 - 1.0 / std::numbers::e))
                           .value_or(0.3 * detail::x_span(x));
    return std::vector<double>{a, std::max(tau, 1e-9)};
  };
  return m;
}

/// A exp(-x / tau).
inline Model exp_decay() {
  Model m;
  m.name = "exp_decay";
  m.parameter_names = {"A", "tau"};
  m.eval = [](double x, std::span<const double> p) { return p[0] * std::exp(-x / p[1]); };
  m.lower = {-kInf, 1e-12};
  m.upper = {kInf, kInf};
  m.initial_guess = [](std::span<const double> x, std::span<const double> y) {
    const double a = detail::head_value(x, y);
    const double tau = detail::first_crossing(x, y, a / std::numbers::e)
                           .value_or(2.0 * detail::x_span(x));
    return std::vector<double>{a, std::max(tau, 1e-9)};
  };
  return m;
}

/// offset + amp * hwhm^2 / ((x - center)^2 + hwhm^2); amp < 0 describes a dip.
inline Model lorentzian() {
  Model m;
  m.name = "lorentzian";
  m.parameter_names = {"center", "hwhm", "amp", "offset"};
  m.eval = [](double x, std::span<const double> p) {
    return p[3] + detail::lorentz(x, p[0], p[1], p[2]);
  };
  m.lower = {-kInf, 1e-12, -kInf, -kInf};
  m.upper = {kInf, kInf, kInf, kInf};
  m.initial_guess = [](std::span<const double> x, std::span<const double> y) {
    const auto idx = detail::argsort(x);
    const double base = 0.5 * (y[idx.front()] + y[idx.back()]);
    std::size_t peak = 0;
    for (std::size_t k = 0; k < y.size(); ++k)
      if (std::abs(y[k] - base) > std::abs(y[peak] - base)) peak = k;
    return std::vector<double>{x[peak], detail::half_width(x, y, peak, base), y[peak] - base, base};
  };
  return m;
}

/// offset + sum_k amp_k hwhm_k^2 / ((x - center_k)^2 + hwhm_k^2).
inline Model multi_lorentzian(std::size_t components) {
  if (components == 0) throw MisuseError("multi-Lorentzian needs at least one component");
  Model m;
  m.name = "multi_lorentzian";
  for (std::size_t k = 0; k < components; ++k) {
    const std::string s = std::to_string(k);
    m.parameter_names.insert(m.parameter_names.end(), {"center" + s, "hwhm" + s, "amp" + s});
    m.lower.insert(m.lower.end(), {-kInf, 1e-12, -kInf});
    m.upper.insert(m.upper.end(), {kInf, kInf, kInf});
  }
  m.parameter_names.push_back("offset");
  m.lower.push_back(-kInf);
  m.upper.push_back(kInf);
  m.eval = [components](double x, std::span<const double> p) {
    double s = p[3 * components];
    for (std::size_t k = 0; k < components; ++k)
      s += detail::lorentz(x, p[3 * k], p[3 * k + 1], p[3 * k + 2]);
    return s;
  };
  // Greedy peak picking: strongest residual feature first, then subtract it.
  m.initial_guess = [components](std::span<const double> x, std::span<const double> y) {
    const auto idx = detail::argsort(x);
    const double base = 0.5 * (y[idx.front()] + y[idx.back()]);
    std::vector<double> res(y.begin(), y.end());
    for (double& r : res) r -= base;
    std::vector<double> p;
    for (std::size_t k = 0; k < components; ++k) {
      std::size_t peak = 0;
      for (std::size_t i = 0; i < res.size(); ++i)
        if (std::abs(res[i]) > std::abs(res[peak])) peak = i;
      const double w = detail::half_width(x, res, peak, 0.0);
      const double c = x[peak], a = res[peak];
      p.insert(p.end(), {c, w, a});
      for (std::size_t i = 0; i < res.size(); ++i) res[i] -= detail::lorentz(x[i], c, w, a);
    }
    p.push_back(base);
    return p;
  };
  return m;
}

/// slope * x (+ intercept).
inline Model linear(bool through_origin) {
  Model m;
  m.name = through_origin ? "linear_through_origin" : "linear";
  m.parameter_names = through_origin ? std::vector<std::string>{"slope"}
                                     : std::vector<std::string>{"slope", "intercept"};
  m.eval = [through_origin](double x, std::span<const double> p) {
    return p[0] * x + (through_origin ? 0.0 : p[1]);
  };
  m.lower.assign(m.num_params(), -kInf);
  m.upper.assign(m.num_params(), kInf);
  m.initial_guess = [through_origin](std::span<const double> x, std::span<const double> y) {
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += x[i] * y[i];
      sxx += x[i] * x[i];
    }
    const double slope = sxx > 0 ? sxy / sxx : 0.0;
    return through_origin ? std::vector<double>{slope} : std::vector<double>{slope, 0.0};
  };
  return m;
}

/// offset + A exp(-x / tau) cos(2 pi f x + phi).
inline Model damped_cosine() {
  Model m;
  m.name = "damped_cosine";
  m.parameter_names = {"A", "f", "phi", "tau", "offset"};
  m.eval = [](double x, std::span<const double> p) {
    return p[4] + p[0] * std::exp(-x / p[3]) * std::cos(2.0 * std::numbers::pi * p[1] * x + p[2]);
  };
  m.lower = {-kInf, 0.0, -kInf, 1e-12, -kInf};
  m.upper = {kInf, kInf, kInf, kInf, kInf};
  m.initial_guess = [](std::span<const double> x, std::span<const double> y) {
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    const double span = detail::x_span(x);
    // Coarse periodogram scan for the dominant frequency.
    const double df = 0.25 / span;
    const double fmax = 0.5 * static_cast<double>(x.size()) / span;
    double best_f = df, best_p = -1.0;
    for (double f = df; f <= fmax; f += df) {
      std::complex<double> acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i)
        acc += (y[i] - mean) * std::polar(1.0, -2.0 * std::numbers::pi * f * x[i]);
      if (std::abs(acc) > best_p) {
        best_p = std::abs(acc);
        best_f = f;
      }
    }
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      acc += (y[i] - mean) * std::polar(1.0, -2.0 * std::numbers::pi * best_f * x[i]);
    double amp = 0.0;
    for (double v : y) amp = std::max(amp, std::abs(v - mean));
    return std::vector<double>{amp, best_f, std::arg(acc), span, mean};
  };
  return m;
}

/// A_inf x^2 / (x^2 + W^2): saturation amplitude versus drive strength.
inline Model crossover() {
  Model m;
  m.name = "crossover";
  m.parameter_names = {"A_inf", "W"};
  m.eval = [](double x, std::span<const double> p) {
    return p[0] * x * x / (x * x + p[1] * p[1]);
  };
  m.lower = {-kInf, 1e-12};
  m.upper = {kInf, kInf};
  m.initial_guess = [](std::span<const double> x, std::span<const double> y) {
    double ymax = 0.0;
    for (double v : y) ymax = std::max(ymax, v);
    const double a = 1.1 * ymax;
    const auto idx = detail::argsort(x);
    const double w = detail::first_crossing(x, y, 0.5 * a).value_or(x[idx[idx.size() / 2]]);
    return std::vector<double>{a, std::max(std::abs(w), 1e-6)};
  };
  return m;
}

inline Model by_name(const std::string& name, std::size_t components = 1) {
  if (name == "stretched_exp") return stretched_exp();
  if (name == "exp_saturation") return exp_saturation();
  if (name == "exp_decay") return exp_decay();
  if (name == "lorentzian") return lorentzian();
  if (name == "multi_lorentzian") return multi_lorentzian(components);
  if (name == "linear") return linear(false);
  if (name == "linear_through_origin") return linear(true);
  if (name == "damped_cosine") return damped_cosine();
  if (name == "crossover") return crossover();
  throw ConfigError("unknown fit model '" + name + "'");
}

}  // namespace models

// ---------------------------------------------------------------------------------------
// Nonlinear least squares
// ---------------------------------------------------------------------------------------

namespace detail {

inline void clamp_to_bounds(const Model& m, std::vector<double>& p) {
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::clamp(p[k], m.lower[k], m.upper[k]);
}

inline Eigen::VectorXd residuals(const Model& m, std::span<const double> x,
                                 std::span<const double> y, const Eigen::VectorXd& w,
                                 std::span<const double> p) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    r[static_cast<Eigen::Index>(i)] = w[static_cast<Eigen::Index>(i)] * (y[i] - m.eval(x[i], p));
  return r;
}

// Jacobian of the model values (not residuals), weighted. Central differences, one-sided at bounds.
inline Eigen::MatrixXd jacobian(const Model& m, std::span<const double> x, const Eigen::VectorXd& w,
                                const std::vector<double>& p) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd J(n, static_cast<Eigen::Index>(p.size()));
  std::vector<double> q = p;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double h = 6e-6 * std::max(std::abs(p[k]), 1e-4);
    double hi = p[k] + h, lo = p[k] - h;
    if (hi > m.upper[k]) hi = p[k];
    if (lo < m.lower[k]) lo = p[k];
    const double denom = hi - lo;
    for (Eigen::Index i = 0; i < n; ++i) {
      q[k] = hi;
      const double fh = m.eval(x[static_cast<std::size_t>(i)], q);
      q[k] = lo;
      const double fl = m.eval(x[static_cast<std::size_t>(i)], q);
      J(i, static_cast<Eigen::Index>(k)) = w[i] * (fh - fl) / denom;
    }
    q[k] = p[k];
  }
  return J;
}

}  // namespace detail

/// Weighted nonlinear least squares. Never returns a silent answer: a run that hits the
/// iteration cap comes back with converged == false and a message.
inline FitResult fit(const Model& model, std::span<const double> x, std::span<const double> y,
                     const FitOptions& opt = {}) {
  const std::size_t n = x.size(), np = model.num_params();
  if (y.size() != n) throw MisuseError("x and y lengths differ");
  if (n < np)
    throw FitError(model.name + ": " + std::to_string(n) + " points cannot determine " +
                   std::to_string(np) + " parameters");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw FitError("non-finite data point");

  Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  if (opt.sigma_y) {
    if (opt.sigma_y->size() != n) throw MisuseError("sigma_y length differs from data");
    for (std::size_t i = 0; i < n; ++i) {
      const double s = (*opt.sigma_y)[i];
      if (!(s > 0.0)) throw FitError("sigma_y entries must be positive");
      w[static_cast<Eigen::Index>(i)] = 1.0 / s;
    }
  }

  std::vector<double> p = opt.initial ? *opt.initial : model.initial_guess(x, y);
  if (p.size() != np) throw MisuseError("initial guess has the wrong number of parameters");
  detail::clamp_to_bounds(model, p);

  Eigen::VectorXd r = detail::residuals(model, x, y, w, p);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  FitResult out;
  out.model = model.name;
  out.names = model.parameter_names;

  std::size_t it = 0;
  bool converged = false;
  for (; it < opt.max_iterations; ++it) {
    if (cost == 0.0) {
      converged = true;
      break;
    }
    const Eigen::MatrixXd J = detail::jacobian(model, x, w, p);
    const Eigen::MatrixXd A = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    Eigen::VectorXd dscale = A.diagonal().cwiseMax(1e-30);

    bool accepted = false;
    double new_cost = cost;
    std::vector<double> trial;
    Eigen::VectorXd new_r;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::MatrixXd Ad = A;
      Ad.diagonal() += lambda * dscale;
      const Eigen::VectorXd step = Ad.ldlt().solve(g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      trial = p;
      for (std::size_t k = 0; k < np; ++k) trial[k] += step[static_cast<Eigen::Index>(k)];
      detail::clamp_to_bounds(model, trial);
      new_r = detail::residuals(model, x, y, w, trial);
      new_cost = new_r.squaredNorm();
      if (std::isfinite(new_cost) && new_cost <= cost) {
        accepted = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) {
      // No descent direction left at working precision: a stationary point.
      converged = true;
      break;
    }
    double max_rel_step = 0.0;
    for (std::size_t k = 0; k < np; ++k)
      max_rel_step = std::max(max_rel_step,
                              std::abs(trial[k] - p[k]) / (std::abs(p[k]) + 1e-12));
    const double improvement = cost - new_cost;
    p = trial;
    r = new_r;
    cost = new_cost;
    lambda = std::max(lambda / 3.0, 1e-15);
    if (improvement <= opt.tolerance * cost && max_rel_step < 1e-10) {
      converged = true;
      ++it;
      break;
    }
  }

  out.params = p;
  out.iterations = it;
  out.converged = converged;
  out.message = converged ? "converged" : "iteration limit reached without convergence";
  out.chi2 = cost;
  out.residual_norm = std::sqrt(cost);
  out.dof = n - np;

  const Eigen::MatrixXd J = detail::jacobian(model, x, w, p);
  const Eigen::MatrixXd A = J.transpose() * J;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::VectorXd sv = svd.singularValues();
  const double cutoff = 1e-14 * (sv.size() > 0 ? sv[0] : 0.0);
  Eigen::VectorXd inv = sv;
  bool singular = false;
  for (Eigen::Index k = 0; k < sv.size(); ++k) {
    if (sv[k] > cutoff) {
      inv[k] = 1.0 / sv[k];
    } else {
      inv[k] = 0.0;
      singular = true;
    }
  }
  Eigen::MatrixXd cov = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  cov = 0.5 * (cov + cov.transpose());
  const bool absolute = opt.sigma_y && opt.absolute_sigma;
  if (!absolute) {
    if (out.dof > 0) {
      cov *= cost / static_cast<double>(out.dof);
    } else {
      cov.setConstant(std::nan(""));
      out.sigma_reliable = false;
    }
  }
  if (singular) out.sigma_reliable = false;
  out.covariance = cov;
  out.sigma.resize(np);
  for (std::size_t k = 0; k < np; ++k)
    out.sigma[k] = std::sqrt(std::max(cov(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)), 0.0));

  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= static_cast<double>(n);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - model.eval(x[i], p);
    ss_res += e * e;
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  out.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return out;
}

/// Closed-form weighted linear regression.
inline FitResult linear_fit(std::span<const double> x, std::span<const double> y,
                            std::optional<std::span<const double>> sigma_y, bool through_origin) {
  const std::size_t n = x.size();
  const std::size_t np = through_origin ? 1 : 2;
  if (y.size() != n) throw MisuseError("x and y lengths differ");
  if (n < np)
    throw FitError("linear fit is underdetermined: " + std::to_string(n) + " point(s) for " +
                   std::to_string(np) + " parameter(s)");
  std::vector<double> w(n, 1.0);
  if (sigma_y) {
    if (sigma_y->size() != n) throw MisuseError("sigma_y length differs from data");
    for (std::size_t i = 0; i < n; ++i) {
      if (!((*sigma_y)[i] > 0.0)) throw FitError("sigma_y entries must be positive");
      w[i] = 1.0 / ((*sigma_y)[i] * (*sigma_y)[i]);
    }
  }
  CompensatedSum S, Sx, Sy, Sxx, Sxy;
  for (std::size_t i = 0; i < n; ++i) {
    S.add(w[i]);
    Sx.add(w[i] * x[i]);
    Sy.add(w[i] * y[i]);
    Sxx.add(w[i] * x[i] * x[i]);
    Sxy.add(w[i] * x[i] * y[i]);
  }
  FitResult out;
  out.model = through_origin ? "linear_through_origin" : "linear";
  out.names = through_origin ? std::vector<std::string>{"slope"}
                             : std::vector<std::string>{"slope", "intercept"};
  out.covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(np));
  if (through_origin) {
    if (!(Sxx.value() > 0.0)) throw FitError("linear fit through origin needs a nonzero abscissa");
    out.params = {Sxy.value() / Sxx.value()};
    out.covariance(0, 0) = 1.0 / Sxx.value();
  } else {
    const double det = S.value() * Sxx.value() - Sx.value() * Sx.value();
    if (!(std::abs(det) > 0.0)) throw FitError("linear fit is degenerate: all abscissae equal");
    const double slope = (S.value() * Sxy.value() - Sx.value() * Sy.value()) / det;
    const double icpt = (Sxx.value() * Sy.value() - Sx.value() * Sxy.value()) / det;
    out.params = {slope, icpt};
    out.covariance(0, 0) = S.value() / det;
    out.covariance(1, 1) = Sxx.value() / det;
    out.covariance(0, 1) = out.covariance(1, 0) = -Sx.value() / det;
  }
  double chi2 = 0.0, ss_res = 0.0, ss_tot = 0.0, ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pred = out.params[0] * x[i] + (through_origin ? 0.0 : out.params[1]);
    chi2 += w[i] * (y[i] - pred) * (y[i] - pred);
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  out.chi2 = chi2;
  out.residual_norm = std::sqrt(chi2);
  out.dof = n - np;
  out.converged = true;
  out.iterations = 0;
  out.message = "closed form";
  if (!sigma_y) {
    if (out.dof > 0) {
      out.covariance *= chi2 / static_cast<double>(out.dof);
    } else {
      out.covariance.setConstant(std::nan(""));
      out.sigma_reliable = false;
    }
  }
  if (out.dof == 0) out.sigma_reliable = false;
  out.sigma.resize(np);
  for (std::size_t k = 0; k < np; ++k)
    out.sigma[k] = std::sqrt(out.covariance(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)));
  out.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return out;
}

// ---------------------------------------------------------------------------------------
// Monte Carlo propagation
// ---------------------------------------------------------------------------------------

struct McResult {
  double mean = 0.0;
  double sigma = 0.0;
  double median = 0.0;
  double q025 = 0.0, q16 = 0.0, q84 = 0.0, q975 = 0.0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::vector<double> samples;
};

/// Samples independent Gaussian inputs and pushes them through f. Non-finite outputs are
/// treated as rejected draws and counted.
inline McResult mc_propagate(const std::function<double(std::span<const double>)>& f,
                             std::span<const double> means, std::span<const double> sigmas,
                             std::size_t n = 10000, std::uint64_t seed = 0) {
  if (means.size() != sigmas.size()) throw MisuseError("means and sigmas lengths differ");
  for (double s : sigmas)
    if (!(s >= 0.0)) throw DomainError("input sigmas must be >= 0");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  McResult out;
  out.samples.reserve(n);
  std::vector<double> draw(means.size());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t k = 0; k < means.size(); ++k) draw[k] = means[k] + sigmas[k] * normal(rng);
    const double v = f(draw);
    if (std::isfinite(v)) {
      out.samples.push_back(v);
    } else {
      ++out.rejected;
    }
  }
  out.accepted = out.samples.size();
  if (out.samples.empty()) throw NumericError("Monte Carlo propagation rejected every sample");
  const MeanSem ms = mean_sem(out.samples);
  out.mean = ms.mean;
  out.sigma = ms.stddev;
  std::vector<double> sorted = out.samples;
  std::sort(sorted.begin(), sorted.end());
  out.median = quantile_sorted(sorted, 0.5);
  out.q025 = quantile_sorted(sorted, 0.025);
  out.q16 = quantile_sorted(sorted, 0.16);
  out.q84 = quantile_sorted(sorted, 0.84);
  out.q975 = quantile_sorted(sorted, 0.975);
  return out;
}

// ---------------------------------------------------------------------------------------
// Spectra
// ---------------------------------------------------------------------------------------

struct Spectrum {
  std::vector<double> freqs;      // MHz for dt in us
  std::vector<double> magnitude;  // single-sided amplitude
};

namespace detail {

inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace detail

/// Single-sided amplitude spectrum of a uniformly sampled trace. `pad_to` zero-pads for a
/// finer frequency grid. Power-of-two lengths use a radix-2 FFT, others a direct DFT.
inline Spectrum fft_spectrum(std::span<const double> trace, double dt, std::size_t pad_to = 0) {
  if (!(dt > 0.0)) throw DomainError("sample spacing must be positive");
  if (trace.empty()) throw MisuseError("empty trace");
  const std::size_t n = std::max(pad_to, trace.size());
  std::vector<std::complex<double>> a(n, 0.0);
  for (std::size_t i = 0; i < trace.size(); ++i) a[i] = trace[i];
  if (std::has_single_bit(n)) {
    detail::fft_radix2(a);
  } else {
    std::vector<std::complex<double>> b(n, 0.0);
    for (std::size_t k = 0; k <= n / 2; ++k)
      for (std::size_t i = 0; i < trace.size(); ++i)
        b[k] += trace[i] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * i % n) / double(n));
    a.swap(b);
  }
  Spectrum s;
  const double norm = 1.0 / static_cast<double>(trace.size());
  for (std::size_t k = 0; k <= n / 2; ++k) {
    s.freqs.push_back(static_cast<double>(k) / (static_cast<double>(n) * dt));
    s.magnitude.push_back(std::abs(a[k]) * norm * (k == 0 ? 1.0 : 2.0));
  }
  return s;
}

/// Dominant nonzero frequency with parabolic refinement, or nullopt for a trace without
/// oscillatory content.
inline std::optional<double> peak(const Spectrum& s) {
  if (s.magnitude.size() < 3) return std::nullopt;
  std::size_t best = 1;
  for (std::size_t k = 2; k < s.magnitude.size(); ++k)
    if (s.magnitude[k] > s.magnitude[best]) best = k;
  double overall = 0.0;
  for (double m : s.magnitude) overall = std::max(overall, m);
  if (!(s.magnitude[best] > 1e-9 * overall) || overall == 0.0) return std::nullopt;
  double offset = 0.0;
  if (best + 1 < s.magnitude.size()) {
    const double a = s.magnitude[best - 1], b = s.magnitude[best], c = s.magnitude[best + 1];
    const double denom = a - 2.0 * b + c;
    if (denom != 0.0) offset = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
  }
  const double df = s.freqs[1] - s.freqs[0];
  return s.freqs[best] + offset * df;
}

/// Full width at half maximum of the dominant nonzero-frequency peak.
inline std::optional<double> peak_fwhm(const Spectrum& s) {
  if (s.magnitude.size() < 3) return std::nullopt;
  std::size_t best = 1;
  for (std::size_t k = 2; k < s.magnitude.size(); ++k)
    if (s.magnitude[k] > s.magnitude[best]) best = k;
  const double half = 0.5 * s.magnitude[best];
  auto cross = [&](std::size_t lo, std::size_t hi) {
    const double t = (s.magnitude[lo] - half) / (s.magnitude[lo] - s.magnitude[hi]);
    return s.freqs[lo] + t * (s.freqs[hi] - s.freqs[lo]);
  };
  std::optional<double> left, right;
  for (std::size_t k = best; k > 0; --k)
    if (s.magnitude[k - 1] <= half) {
      left = cross(k, k - 1);
      break;
    }
  for (std::size_t k = best; k + 1 < s.magnitude.size(); ++k)
    if (s.magnitude[k + 1] <= half) {
      right = cross(k, k + 1);
      break;
    }
  if (!left || !right) return std::nullopt;
  return *right - *left;
}

inline void to_json(nlohmann::json& j, const FitResult& r) {
  nlohmann::json params = nlohmann::json::object();
  for (std::size_t k = 0; k < r.names.size(); ++k)
    params[r.names[k]] = {{"value", r.params[k]}, {"sigma", r.sigma[k]}};
  std::vector<std::vector<double>> cov;
  for (Eigen::Index a = 0; a < r.covariance.rows(); ++a) {
    cov.emplace_back();
    for (Eigen::Index b = 0; b < r.covariance.cols(); ++b) cov.back().push_back(r.covariance(a, b));
  }
  j = {{"model", r.model},
       {"parameters", params},
       {"covariance", cov},
       {"residual_norm", r.residual_norm},
       {"chi2", r.chi2},
       {"dof", r.dof},
       {"r_squared", r.r_squared},
       {"converged", r.converged},
       {"sigma_reliable", r.sigma_reliable},
       {"iterations", r.iterations},
       {"message", r.message}};
}

}  // namespace spinnet::fitkit

#endif  // SPINNET_FITKIT_HPP
