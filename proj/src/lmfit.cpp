#include "chordfit/lmfit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>

#include "chordfit/error.hpp"

namespace chordfit {

namespace {

using Clock = std::chrono::steady_clock;

constexpr double kMaxDamping = 1e16;
// Floor on the Marquardt scaling diagonal, relative to its largest entry, so
// parameters with a vanishing Jacobian column still get a damped step.
constexpr double kDiagFloor = 1e-12;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_shapes(const Spectrum& spectrum) {
  if (spectrum.counts().size() != spectrum.grid().size() ||
      spectrum.sigma().size() != spectrum.grid().size()) {
    throw Error(Errc::shape, "spectrum arrays differ in length");
  }
}

}  // namespace

void FitOptions::validate() const {
  if (max_iterations < 1) throw Error(Errc::domain, "max_iterations must be >= 1");
  if (!(rel_chi2_tol > 0.0) || !(grad_tol > 0.0) || !(step_tol > 0.0) || !(damping_init > 0.0)) {
    throw Error(Errc::domain, "fit tolerances and initial damping must be positive");
  }
  if (!(damping_ratio > 1.0)) throw Error(Errc::domain, "damping ratio must exceed 1");
  if (sigma_min && !(*sigma_min > 0.0)) throw Error(Errc::domain, "sigma_min must be positive");
}

std::string_view to_string(Convergence c) {
  switch (c) {
    case Convergence::chi2_tol: return "chi2_tol";
    case Convergence::grad_tol: return "grad_tol";
    case Convergence::step_tol: return "step_tol";
    case Convergence::max_iter: return "max_iter";
  }
  return "max_iter";
}

std::optional<Convergence> convergence_from_string(std::string_view s) {
  for (auto c : {Convergence::chi2_tol, Convergence::grad_tol, Convergence::step_tol,
                 Convergence::max_iter}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

std::vector<double> FitResult::uncertainties() const {
  if (!covariance) return {};
  std::vector<double> u(static_cast<std::size_t>(covariance->rows()));
  for (Eigen::Index p = 0; p < covariance->rows(); ++p) {
    u[static_cast<std::size_t>(p)] = std::sqrt(std::max((*covariance)(p, p), 0.0));
  }
  return u;
}

Eigen::VectorXd residuals(const SpectralModel& model, const Spectrum& spectrum) {
  check_shapes(spectrum);
  const std::vector<double> s = eval_model(model, spectrum.grid());
  const auto counts = spectrum.counts();
  const auto sigma = spectrum.sigma();
  Eigen::VectorXd r(static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) {
    r[static_cast<Eigen::Index>(i)] = (counts[i] - s[i]) / sigma[i];
  }
  return r;
}

double chi2(const SpectralModel& model, const Spectrum& spectrum) {
  return residuals(model, spectrum).squaredNorm();
}

Eigen::MatrixXd jacobian(const SpectralModel& model, const Spectrum& spectrum) {
  check_shapes(spectrum);
  for (const auto& l : model.lines) {
    if (l.width == 0.0) throw Error(Errc::singular_width, "Jacobian undefined for zero line width");
  }
  model.validate();

  const auto& grid = spectrum.grid();
  const auto sigma = spectrum.sigma();
  const auto n = static_cast<Eigen::Index>(grid.size());
  const auto nb = static_cast<Eigen::Index>(model.baseline_terms());
  Eigen::MatrixXd jac(n, static_cast<Eigen::Index>(model.parameter_count()));

  for (Eigen::Index i = 0; i < n; ++i) {
    const double lam = grid[static_cast<std::size_t>(i)];
    const double w = 1.0 / sigma[static_cast<std::size_t>(i)];
    double power = 1.0;
    for (Eigen::Index j = 0; j < nb; ++j) {
      jac(i, j) = w * power;
      power *= lam;
    }
    Eigen::Index col = nb;
    for (const auto& l : model.lines) {
      const double dx = lam - l.center;
      const double s2 = l.width * l.width;
      const double e = std::exp(-dx * dx / (2.0 * s2));
      jac(i, col) = w * e;
      jac(i, col + 1) = w * l.amplitude * dx / s2 * e;
      jac(i, col + 2) = w * l.amplitude * dx * dx / (s2 * l.width) * e;
      col += 3;
    }
  }
  return jac;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& weighted_jacobian, double chi2_value,
                           std::size_t dof) {
  if (dof < 1) throw Error(Errc::shape, "covariance needs at least one degree of freedom");
  const Eigen::MatrixXd normal = weighted_jacobian.transpose() * weighted_jacobian;
  Eigen::LLT<Eigen::MatrixXd> llt(normal);
  if (llt.info() != Eigen::Success || !(llt.rcond() > std::numeric_limits<double>::epsilon())) {
    throw Error(Errc::degenerate_fit, "normal matrix is singular at the solution");
  }
  const double scale = std::max(chi2_value / static_cast<double>(dof), 1.0);
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(normal.rows(), normal.cols()));
  Eigen::MatrixXd cov = 0.5 * (inv + inv.transpose()) * scale;
  return cov;
}

FitResult lm_fit(const Spectrum& spectrum, const SpectralModel& init, const FitOptions& options) {
  const auto t_start = Clock::now();
  options.validate();
  init.validate();

  const std::size_t n_pix = spectrum.size();
  const std::size_t n_par = init.parameter_count();
  if (n_par >= n_pix) {
    throw Error(Errc::shape, std::to_string(n_par) + " parameters need more than " +
                                 std::to_string(n_pix) + " pixels");
  }
  const double sigma_min = options.sigma_min.value_or(0.5 * spectrum.grid().median_spacing());
  const std::size_t nb = init.baseline_terms();

  FitResult result;
  result.dof = n_pix - n_par;
  FitTimers& timers = result.timers;

  auto timed_residuals = [&](const SpectralModel& m) {
    const auto t0 = Clock::now();
    Eigen::VectorXd r = residuals(m, spectrum);
    timers.model_eval_seconds += seconds_since(t0);
    ++timers.n_model_evals;
    return r;
  };
  auto timed_jacobian = [&](const SpectralModel& m) {
    const auto t0 = Clock::now();
    Eigen::MatrixXd j = jacobian(m, spectrum);
    timers.model_eval_seconds += seconds_since(t0);
    return j;
  };
  auto clamp_bounds = [&](Eigen::VectorXd& theta) {
    for (std::size_t k = 0; k < init.lines.size(); ++k) {
      const auto a = static_cast<Eigen::Index>(nb + 3 * k);
      theta[a] = std::max(theta[a], 0.0);
      theta[a + 2] = std::max(theta[a + 2], sigma_min);
    }
  };

  SpectralModel model = init;
  const std::vector<double> p0 = init.parameters();
  Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(p0.data(), static_cast<Eigen::Index>(p0.size()));

  Eigen::VectorXd r = timed_residuals(model);
  if (!r.allFinite()) throw Error(Errc::bad_initial_model, "non-finite residual at the initial model");
  double chi2_now = r.squaredNorm();
  Eigen::MatrixXd jac = timed_jacobian(model);
  Eigen::MatrixXd normal = jac.transpose() * jac;
  Eigen::VectorXd grad = jac.transpose() * r;
  result.chi2_trace.push_back(chi2_now);

  // The damping multiplies diag(J^T J), so it is already dimensionless.
  double damping = options.damping_init;

  Convergence reason = Convergence::max_iter;
  bool done = false;
  while (!done) {
    if (chi2_now == 0.0) {
      reason = Convergence::chi2_tol;
      break;
    }
    if (grad.lpNorm<Eigen::Infinity>() <= options.grad_tol) {
      reason = Convergence::grad_tol;
      break;
    }
    if (result.iterations >= static_cast<std::size_t>(options.max_iterations)) {
      reason = Convergence::max_iter;
      break;
    }

    Eigen::VectorXd scaling = normal.diagonal();
    const double floor = kDiagFloor * std::max(scaling.maxCoeff(), std::numeric_limits<double>::min());
    scaling = scaling.cwiseMax(floor);

    for (;;) {
      const auto t_solve = Clock::now();
      Eigen::MatrixXd damped = normal;
      damped.diagonal() += damping * scaling;
      Eigen::LLT<Eigen::MatrixXd> llt(damped);
      const bool factored = llt.info() == Eigen::Success;
      Eigen::VectorXd delta;
      if (factored) delta = llt.solve(grad);
      timers.linear_solve_seconds += seconds_since(t_solve);

      if (!factored || !delta.allFinite()) {
        damping *= options.damping_ratio;
        if (damping > kMaxDamping) {
          throw Error(Errc::stagnation, "normal equations unsolvable with damping above 1e16");
        }
        continue;
      }

      if (delta.norm() <= options.step_tol * (theta.norm() + options.step_tol)) {
        reason = Convergence::step_tol;
        done = true;
        break;
      }

      Eigen::VectorXd trial = theta + delta;
      clamp_bounds(trial);
      SpectralModel trial_model = model;
      trial_model.set_parameters(std::span<const double>(trial.data(), static_cast<std::size_t>(trial.size())));
      Eigen::VectorXd r_trial = timed_residuals(trial_model);
      const double chi2_trial = r_trial.squaredNorm();

      if (std::isfinite(chi2_trial) && chi2_trial < chi2_now) {
        const double rel_drop = (chi2_now - chi2_trial) / chi2_now;
        theta = std::move(trial);
        model = std::move(trial_model);
        r = std::move(r_trial);
        chi2_now = chi2_trial;
        jac = timed_jacobian(model);
        normal = jac.transpose() * jac;
        grad = jac.transpose() * r;
        result.chi2_trace.push_back(chi2_now);
        ++result.iterations;
        damping /= options.damping_ratio;
        if (rel_drop <= options.rel_chi2_tol) {
          reason = Convergence::chi2_tol;
          done = true;
        }
        break;
      }

      damping *= options.damping_ratio;
      if (damping > kMaxDamping) {
        // Every damped step fails to lower chi2: the minimum is resolved to
        // machine precision along all directions.
        reason = Convergence::step_tol;
        done = true;
        break;
      }
    }
  }

  result.model = model;
  result.chi2 = chi2_now;
  result.converged = reason;
  {
    const auto t_cov = Clock::now();
    try {
      result.covariance = covariance(jac, chi2_now, result.dof);
    } catch (const Error& e) {
      if (e.code() != Errc::degenerate_fit) throw;
    }
    timers.linear_solve_seconds += seconds_since(t_cov);
  }
  timers.total_seconds = seconds_since(t_start);
  return result;
}

}  // namespace chordfit
