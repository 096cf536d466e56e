#pragma once

// Levenberg-Marquardt minimisation of weighted chi-squared over a SpectralModel.

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "chordfit/spectra.hpp"

namespace chordfit {

struct FitOptions {
  int max_iterations = 200;
  double rel_chi2_tol = 1e-8;
  double grad_tol = 1e-10;  // infinity norm of J^T r
  double step_tol = 1e-12;  // |delta| relative to |theta|
  double damping_init = 1e-3;
  double damping_ratio = 2.0;
  // Lower clamp on line widths; half the median pixel spacing when unset.
  std::optional<double> sigma_min;

  void validate() const;
};

enum class Convergence { chi2_tol, grad_tol, step_tol, max_iter };

std::string_view to_string(Convergence c);
std::optional<Convergence> convergence_from_string(std::string_view s);

struct FitTimers {
  double model_eval_seconds = 0.0;
  double linear_solve_seconds = 0.0;
  double total_seconds = 0.0;
  std::size_t n_model_evals = 0;
};

struct FitResult {
  SpectralModel model;
  double chi2 = 0.0;
  std::size_t dof = 0;
  std::size_t iterations = 0;  // accepted steps
  Convergence converged = Convergence::max_iter;
  // Absent when J^T J at the solution is singular (degenerate fit).
  std::optional<Eigen::MatrixXd> covariance;
  // chi2 at the initial model followed by chi2 after every accepted step.
  std::vector<double> chi2_trace;
  FitTimers timers;

  /// 1-sigma parameter uncertainties from the covariance diagonal; empty when
  /// the covariance is unavailable.
  std::vector<double> uncertainties() const;
};

/// Sum over pixels of ((counts - S) / sigma)^2.
double chi2(const SpectralModel& model, const Spectrum& spectrum);

/// Weighted residuals (counts - S) / sigma.
Eigen::VectorXd residuals(const SpectralModel& model, const Spectrum& spectrum);

/// Weighted analytic Jacobian of the model, pixels x parameters, entry
/// (i, p) = dS(lambda_i)/dtheta_p / sigma_i.
Eigen::MatrixXd jacobian(const SpectralModel& model, const Spectrum& spectrum);

/// (J^T J)^-1 scaled by max(chi2/dof, 1). Throws Errc::degenerate_fit when
/// J^T J is not positive definite.
Eigen::MatrixXd covariance(const Eigen::MatrixXd& weighted_jacobian, double chi2, std::size_t dof);

FitResult lm_fit(const Spectrum& spectrum, const SpectralModel& init, const FitOptions& options = {});

}  // namespace chordfit
