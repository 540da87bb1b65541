#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nvac/errors.hpp"
#include "nvac/signal_synth.hpp"

namespace nvac {

// Residuals are exposed per data point so the engine can assemble vectors and
// Jacobians itself; jacobian_row is optional (central differences otherwise).
struct ModelSpec {
  int n_params = 0;
  int n_residuals = 0;
  std::function<double(int, const Eigen::VectorXd&)> residual;
  std::function<Eigen::VectorXd(int, const Eigen::VectorXd&)> jacobian_row;
};

struct FitOptions {
  int max_iter = 200;
  double gradient_tol = 1e-10;
  double step_tol = 1e-12;
  double lambda0 = 1e-3;
};

struct FitResult {
  std::vector<std::string> param_names;
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;       // sigma^2 (JtJ)^-1, pseudo-inverted when
                                    // the normal equations are singular
  double residual_norm = 0.0;       // 2-norm of the residual vector at params
  int iterations = 0;               // attempted steps (accepted or rejected)
  bool converged = false;
  bool degenerate = false;          // singular JtJ: some direction is
                                    // indeterminate, covariance unreliable
  std::vector<double> cost_trace;   // squared norm after each accepted step
};

// 1-sigma uncertainty of parameter i (covariance diagonal root).
double uncertainty(const FitResult& res, int i);

// Levenberg-Marquardt with multiplicative damping (x10 on reject, /10 on
// accept) on lambda * diag(JtJ). Non-convergence is reported through the
// flags, never thrown; ComputationError only for malformed inputs (wrong
// sizes, missing residual function, non-finite residuals at the start).
FitResult least_squares(const ModelSpec& model, const Eigen::VectorXd& init,
                        const FitOptions& opts = {});

// Multi-Gaussian dip fit: params (center_k MHz, fwhm_k MHz, depth_k) per peak
// (sorted by center), then baseline. Depths are kept >= 0 by an internal
// square transform; reported uncertainties are delta-method propagated.
// Throws ComputationError for bad arguments (n_peaks outside 1..3, centers
// off-grid, size mismatch) and FitError for degenerate data (flat spectrum,
// peaks collapsing within fwhm/10, singular fit).
FitResult fit_gaussian_peaks(const ODMRSpectrum& spectrum, int n_peaks,
                             const std::vector<double>& init_centers_MHz);

// Damped cosine a cos(2 pi nu t) exp(-t/T_R) + c; params (a, nu_MHz, T_R_us,
// c), nu reported positive. Internally the decay is fit as a rate 1/T_R so a
// vanishing decay stays well conditioned. Throws FitError when the initial nu
// exceeds the grid Nyquist frequency, for too few points, and for
// indeterminate (constant) traces.
FitResult fit_damped_cosine(const RabiTrace& trace,
                            const DampedCosineParams& init);

// Lorentzian a*b/((eta - eta0)^2 + b^2) + c on (eta_deg, ratio) samples;
// params (a, b_deg, eta0_deg, c). A fitted center outside the sampled range
// is reported as non-convergence. Throws ComputationError for fewer than 5
// points and FitError for singular fits.
FitResult fit_lorentzian_ratio(
    const std::vector<std::pair<double, double>>& curve);

}  // namespace nvac
