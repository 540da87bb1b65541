#include "nvac/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace nvac {

namespace {

constexpr double kFourLn2 = 4.0 * std::numbers::ln2;
constexpr double kLambdaCeiling = 1e15;

Eigen::VectorXd eval_residuals(const ModelSpec& model,
                               const Eigen::VectorXd& p) {
  Eigen::VectorXd r(model.n_residuals);
  for (int i = 0; i < model.n_residuals; ++i) r(i) = model.residual(i, p);
  return r;
}

Eigen::MatrixXd eval_jacobian(const ModelSpec& model,
                              const Eigen::VectorXd& p) {
  Eigen::MatrixXd j(model.n_residuals, model.n_params);
  if (model.jacobian_row) {
    for (int i = 0; i < model.n_residuals; ++i)
      j.row(i) = model.jacobian_row(i, p).transpose();
    return j;
  }
  Eigen::VectorXd q = p;
  for (int col = 0; col < model.n_params; ++col) {
    const double h = 1e-6 * std::max(1.0, std::abs(p(col)));
    q(col) = p(col) + h;
    const Eigen::VectorXd hi = eval_residuals(model, q);
    q(col) = p(col) - h;
    const Eigen::VectorXd lo = eval_residuals(model, q);
    q(col) = p(col);
    j.col(col) = (hi - lo) / (2.0 * h);
  }
  return j;
}

// sigma^2 (JtJ)^-1 through an eigendecomposition so exact singularity turns
// into a flagged pseudo-inverse instead of a meaningless inverse
void finalize_covariance(const Eigen::MatrixXd& jtj, double ssr, int n_res,
                         FitResult& out) {
  const int m = static_cast<int>(jtj.rows());
  const double sigma2 = ssr / std::max(1, n_res - m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jtj);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double emax = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(m);
  for (int k = 0; k < m; ++k) {
    if (ev(k) > 1e-12 * emax)
      inv(k) = 1.0 / ev(k);
    else
      out.degenerate = true;
  }
  out.covariance = sigma2 * es.eigenvectors() * inv.asDiagonal() *
                   es.eigenvectors().transpose();
}

struct GaussianLayout {
  int n_peaks;
  int baseline_index() const { return 3 * n_peaks; }
};

double gaussian_dip(double f, double center, double fwhm) {
  const double df = f - center;
  return std::exp(-kFourLn2 * df * df / (fwhm * fwhm));
}

}  // namespace

double uncertainty(const FitResult& res, int i) {
  return std::sqrt(std::max(0.0, res.covariance(i, i)));
}

FitResult least_squares(const ModelSpec& model, const Eigen::VectorXd& init,
                        const FitOptions& opts) {
  if (!model.residual)
    throw ComputationError("model has no residual function");
  if (model.n_params <= 0 || model.n_residuals <= 0)
    throw ComputationError("model must have positive parameter and residual "
                           "counts");
  if (init.size() != model.n_params)
    throw ComputationError("initial guess size does not match the model");
  if (!init.allFinite())
    throw ComputationError("initial guess must be finite");

  FitResult out;
  Eigen::VectorXd p = init;
  Eigen::VectorXd r = eval_residuals(model, p);
  if (!r.allFinite())
    throw ComputationError("model residuals are not finite at the start");
  double ssr = r.squaredNorm();
  out.cost_trace.push_back(ssr);

  double lambda = opts.lambda0;
  bool stalled = false;
  while (out.iterations < opts.max_iter) {
    const Eigen::MatrixXd j = eval_jacobian(model, p);
    const Eigen::VectorXd g = j.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() < opts.gradient_tol) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd damp = jtj.diagonal().cwiseMax(1e-30);

    bool accepted = false;
    while (out.iterations < opts.max_iter) {
      ++out.iterations;
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * damp;
      const Eigen::VectorXd delta = a.ldlt().solve(-g);
      if (delta.allFinite()) {
        const bool step_negligible =
            delta.norm() <= opts.step_tol * (p.norm() + opts.step_tol);
        const Eigen::VectorXd p_try = p + delta;
        const Eigen::VectorXd r_try = eval_residuals(model, p_try);
        const double ssr_try =
            r_try.allFinite() ? r_try.squaredNorm()
                              : std::numeric_limits<double>::infinity();
        if (ssr_try < ssr) {
          p = p_try;
          r = r_try;
          ssr = ssr_try;
          out.cost_trace.push_back(ssr);
          lambda = std::max(lambda / 10.0, 1e-15);
          accepted = true;
          if (step_negligible) out.converged = true;
          break;
        }
        // the proposed update is already below the step tolerance, so the
        // parameters cannot improve at working precision: that is convergence,
        // not a stall
        if (step_negligible) {
          out.converged = true;
          break;
        }
      }
      lambda *= 10.0;
      if (lambda > kLambdaCeiling) {
        stalled = true;
        break;
      }
    }
    if (out.converged || stalled || !accepted) break;
  }

  out.params = p;
  out.residual_norm = std::sqrt(ssr);
  const Eigen::MatrixXd j = eval_jacobian(model, p);
  finalize_covariance(j.transpose() * j, ssr, model.n_residuals, out);
  return out;
}

FitResult fit_gaussian_peaks(const ODMRSpectrum& spectrum, int n_peaks,
                             const std::vector<double>& init_centers_MHz) {
  if (n_peaks < 1 || n_peaks > 3)
    throw ComputationError("peak count must be 1, 2, or 3");
  if (static_cast<int>(init_centers_MHz.size()) != n_peaks)
    throw ComputationError("need one initial center per peak");
  const auto& f = spectrum.freq_MHz;
  const auto& s = spectrum.signal;
  if (f.size() != s.size() || f.empty())
    throw ComputationError("spectrum grids are inconsistent");
  const int n = static_cast<int>(f.size());
  const GaussianLayout layout{n_peaks};
  const int m = 3 * n_peaks + 1;
  if (n <= m)
    throw ComputationError("spectrum has too few points for this peak count");
  for (double c : init_centers_MHz)
    if (c < f.front() || c > f.back())
      throw ComputationError("initial center lies outside the grid");

  const double smax = *std::max_element(s.begin(), s.end());
  const double smin = *std::min_element(s.begin(), s.end());
  if (smax - smin < 1e-12 * std::max(1.0, std::abs(smax)))
    throw FitError("flat spectrum: peak parameters are indeterminate");

  // internal params per peak: (center, fwhm, q) with depth = q^2, + baseline
  ModelSpec model;
  model.n_params = m;
  model.n_residuals = n;
  model.residual = [&f, &s, layout](int i, const Eigen::VectorXd& p) {
    double value = p(layout.baseline_index());
    for (int k = 0; k < layout.n_peaks; ++k) {
      const double q = p(3 * k + 2);
      value -= q * q * gaussian_dip(f[i], p(3 * k), p(3 * k + 1));
    }
    return value - s[i];
  };

  // data-driven start: dip depth at the nearest grid point, half width from
  // where the dip has recovered to half depth
  double step = f.back() - f.front();
  for (int i = 1; i < n; ++i) step = std::min(step, f[i] - f[i - 1]);
  step = std::max(step, 1e-9);
  Eigen::VectorXd init(m);
  for (int k = 0; k < n_peaks; ++k) {
    const double c0 = init_centers_MHz[k];
    int i0 = 0;
    for (int i = 1; i < n; ++i)
      if (std::abs(f[i] - c0) < std::abs(f[i0] - c0)) i0 = i;
    const double depth0 = std::max(1e-4, smax - s[i0]);
    double half = 5.0 * step;
    for (int i = i0; i < n; ++i) {
      if (smax - s[i] < 0.5 * depth0) {
        half = std::max(f[i] - f[i0], 2.0 * step);
        break;
      }
    }
    init(3 * k) = c0;
    init(3 * k + 1) = 2.0 * half;
    init(3 * k + 2) = std::sqrt(depth0);
  }
  init(layout.baseline_index()) = smax;

  FitResult res = least_squares(model, init);
  if (res.degenerate)
    throw FitError("gaussian peak fit is singular: parameters indeterminate");

  // report widths positive (the model is even in fwhm)
  for (int k = 0; k < n_peaks; ++k)
    res.params(3 * k + 1) = std::abs(res.params(3 * k + 1));

  // order peaks by center so the report is deterministic
  std::vector<int> order(n_peaks);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return res.params(3 * a) < res.params(3 * b);
  });
  Eigen::VectorXd params = res.params;
  Eigen::MatrixXd perm = Eigen::MatrixXd::Zero(m, m);
  for (int k = 0; k < n_peaks; ++k)
    for (int j = 0; j < 3; ++j)
      perm(3 * k + j, 3 * order[k] + j) = 1.0;
  perm(layout.baseline_index(), layout.baseline_index()) = 1.0;
  res.params = perm * params;
  res.covariance = perm * res.covariance * perm.transpose();

  // depth = q^2 with delta-method covariance scaling
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(m);
  for (int k = 0; k < n_peaks; ++k) {
    const double q = res.params(3 * k + 2);
    res.params(3 * k + 2) = q * q;
    scale(3 * k + 2) = 2.0 * q;
  }
  res.covariance = scale.asDiagonal() * res.covariance * scale.asDiagonal();

  for (int a = 0; a < n_peaks; ++a)
    for (int b = a + 1; b < n_peaks; ++b) {
      const double w =
          std::max(res.params(3 * a + 1), res.params(3 * b + 1));
      if (std::abs(res.params(3 * a) - res.params(3 * b)) < w / 10.0)
        throw FitError(
            "degenerate fit: two peak centers collapsed within fwhm/10");
    }

  res.param_names.clear();
  for (int k = 1; k <= n_peaks; ++k) {
    std::ostringstream c, w, d;
    c << "center_" << k << "_MHz";
    w << "fwhm_" << k << "_MHz";
    d << "depth_" << k;
    res.param_names.push_back(c.str());
    res.param_names.push_back(w.str());
    res.param_names.push_back(d.str());
  }
  res.param_names.push_back("baseline");
  return res;
}

FitResult fit_damped_cosine(const RabiTrace& trace,
                            const DampedCosineParams& init) {
  const auto& t = trace.times_us;
  const auto& y = trace.signal;
  if (t.size() != y.size())
    throw ComputationError("trace grids are inconsistent");
  const int n = static_cast<int>(t.size());
  if (n < 5) throw FitError("too few points to fit a damped cosine");

  double dt_min = t.back() - t.front();
  for (int i = 1; i < n; ++i) dt_min = std::min(dt_min, t[i] - t[i - 1]);
  if (!(dt_min > 0.0))
    throw ComputationError("time grid must be strictly increasing");
  const double nyquist = 0.5 / dt_min;
  if (std::abs(init.nu_MHz) > nyquist) {
    std::ostringstream msg;
    msg << "initial frequency " << std::abs(init.nu_MHz)
        << " MHz aliases on this grid (Nyquist " << nyquist << " MHz)";
    throw FitError(msg.str());
  }

  const double ymax = *std::max_element(y.begin(), y.end());
  const double ymin = *std::min_element(y.begin(), y.end());
  if (ymax - ymin < 1e-12 * std::max(1.0, std::abs(ymax)))
    throw FitError("constant trace: frequency is indeterminate");

  // internal params (a, nu, rate, c); rate = 1/T_R keeps slow decays finite
  ModelSpec model;
  model.n_params = 4;
  model.n_residuals = n;
  model.residual = [&t, &y](int i, const Eigen::VectorXd& p) {
    return p(0) * std::cos(2.0 * std::numbers::pi * p(1) * t[i]) *
               std::exp(-p(2) * t[i]) +
           p(3) - y[i];
  };
  model.jacobian_row = [&t](int i, const Eigen::VectorXd& p) {
    const double w = 2.0 * std::numbers::pi * t[i];
    const double envelope = std::exp(-p(2) * t[i]);
    const double cosv = std::cos(w * p(1)), sinv = std::sin(w * p(1));
    Eigen::VectorXd row(4);
    row(0) = cosv * envelope;
    row(1) = -p(0) * w * sinv * envelope;
    row(2) = -p(0) * t[i] * cosv * envelope;
    row(3) = 1.0;
    return row;
  };

  Eigen::VectorXd start(4);
  start << init.a, init.nu_MHz,
      init.T_R_us > 0.0 ? 1.0 / init.T_R_us : 1.0, init.c;
  FitResult res = least_squares(model, start);
  if (res.degenerate)
    throw FitError("damped cosine fit is singular: parameters indeterminate");

  // report positive frequency (model is even in nu)
  res.params(1) = std::abs(res.params(1));
  // rate -> decay time with delta-method covariance scaling
  const double rate = res.params(2);
  if (std::abs(rate) < 1e-300)
    throw FitError("decay rate collapsed to zero: T_R is indeterminate");
  res.params(2) = 1.0 / rate;
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(4);
  scale(2) = -1.0 / (rate * rate);
  res.covariance = scale.asDiagonal() * res.covariance * scale.asDiagonal();

  res.param_names = {"a", "nu_MHz", "T_R_us", "c"};
  return res;
}

FitResult fit_lorentzian_ratio(
    const std::vector<std::pair<double, double>>& curve) {
  const int n = static_cast<int>(curve.size());
  if (n < 5)
    throw ComputationError(
        "need at least 5 samples spanning the peak to fit the ratio curve");

  ModelSpec model;
  model.n_params = 4;
  model.n_residuals = n;
  model.residual = [&curve](int i, const Eigen::VectorXd& p) {
    const double d = curve[i].first - p(2);
    return p(0) * p(1) / (d * d + p(1) * p(1)) + p(3) - curve[i].second;
  };

  int imax = 0;
  double lo = curve[0].first, hi = curve[0].first, vmin = curve[0].second;
  for (int i = 1; i < n; ++i) {
    if (curve[i].second > curve[imax].second) imax = i;
    lo = std::min(lo, curve[i].first);
    hi = std::max(hi, curve[i].first);
    vmin = std::min(vmin, curve[i].second);
  }
  const double span = std::max(hi - lo, 1e-9);
  Eigen::VectorXd init(4);
  const double b0 = span / 12.0;
  init << (curve[imax].second - vmin) * b0, b0, curve[imax].first, vmin;

  FitResult res = least_squares(model, init);

  // b enters squared except in the numerator scale; report it positive
  if (res.params(1) < 0.0) {
    res.params(1) = -res.params(1);
    res.params(0) = -res.params(0);
  }
  // a center outside the sampled range means the peak was never bracketed
  if (res.params(2) < lo || res.params(2) > hi) res.converged = false;

  res.param_names = {"a", "b_deg", "eta0_deg", "c"};
  return res;
}

}  // namespace nvac
