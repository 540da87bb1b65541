#include "nvac/inversion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nvac/spin_core.hpp"

namespace nvac {

namespace {

constexpr double kPi = std::numbers::pi;

// ---------------------------------------------------------------------------
// Field inversion
// ---------------------------------------------------------------------------

// Dipole matrix elements of the three transitions at the measurement field,
// plus the drive prefactor sqrt(2)*gamma_e that converts mT to MHz.
struct CouplingContext {
  Vector3c d_0minus;
  Vector3c d_0plus;
  Vector3c d_minusplus;
  double mx = 0.0;  // |<zero|Sx|plus-like>|
  double my = 0.0;  // |<zero|Sy|minus>|
  double mz = 0.0;  // |<minus|Sz|plus-like>|
  double k = 0.0;   // MHz per mT of drive amplitude
};

CouplingContext coupling_context(const RabiMeasurementSet& meas,
                                 const PhysicalConstants& consts) {
  const LabeledEigensystem sys = eigensystem(consts, meas.field_context);
  const auto trs = transitions(sys);
  CouplingContext ctx;
  ctx.d_0minus = trs[0].dipole;
  ctx.d_0plus = trs[1].dipole;
  ctx.d_minusplus = trs[2].dipole;
  ctx.mx = std::abs(ctx.d_0plus(0));
  ctx.my = std::abs(ctx.d_0minus(1));
  ctx.mz = std::abs(ctx.d_minusplus(2));
  ctx.k = std::sqrt(2.0) * consts.gamma_e_MHz_per_mT;
  if (ctx.mx < 1e-9 || ctx.my < 1e-9 || ctx.mz < 1e-9) {
    throw ComputationError(
        "a measured transition has no dipole component along its probe axis "
        "at this static field, so the inversion is ill-posed; measure near "
        "the transverse anti-crossing instead");
  }
  return ctx;
}

// Central values of one (possibly resampled) measurement set.
struct Measurements {
  double r_0plus = 0.0;
  double r_0minus = 0.0;
  double r_minusplus = 0.0;
  double ratio = 1.0;
};

// Exact solution of the per-axis coupling equations; used as the fit start
// (and it already is the optimum under the single-axis model).
Eigen::VectorXd closed_form_start(const Measurements& m,
                                  const CouplingContext& ctx) {
  const double eta = std::atan2(m.r_0minus / ctx.my, m.r_0plus / ctx.mx);
  const double transverse =
      std::hypot(m.r_0plus / ctx.mx, m.r_0minus / ctx.my) / ctx.k;
  const double axial = m.r_minusplus / (ctx.k * m.ratio * ctx.mz);
  Eigen::VectorXd p(3);
  p << std::hypot(transverse, axial), std::atan2(transverse, axial), eta;
  return p;
}

double coupling_abs(const Vector3c& d, double ux, double uy, double uz) {
  return std::abs(ux * d(0) + uy * d(1) + uz * d(2));
}

// Residuals of the three Rabi equations in the parameters (B, zeta, eta).
// The low-frequency drive amplitude is eliminated via B_RF = ratio * B_MW.
ModelSpec make_model(const Measurements& m, const CouplingContext& ctx,
                     InversionModel model) {
  ModelSpec spec;
  spec.n_params = 3;
  spec.n_residuals = 3;
  if (model == InversionModel::single_axis) {
    spec.residual = [m, ctx](int i, const Eigen::VectorXd& p) {
      const double b = p(0);
      const double sz = std::abs(std::sin(p(1)));
      const double cz = std::abs(std::cos(p(1)));
      const double se = std::abs(std::sin(p(2)));
      const double ce = std::abs(std::cos(p(2)));
      switch (i) {
        case 0:
          return ctx.k * b * sz * ce * ctx.mx - m.r_0plus;
        case 1:
          return ctx.k * b * sz * se * ctx.my - m.r_0minus;
        default:
          return ctx.k * m.ratio * b * cz * ctx.mz - m.r_minusplus;
      }
    };
  } else {
    spec.residual = [m, ctx](int i, const Eigen::VectorXd& p) {
      const double b = p(0);
      const double ux = std::sin(p(1)) * std::cos(p(2));
      const double uy = std::sin(p(1)) * std::sin(p(2));
      const double uz = std::cos(p(1));
      switch (i) {
        case 0:
          return ctx.k * b * coupling_abs(ctx.d_0plus, ux, uy, uz) - m.r_0plus;
        case 1:
          return ctx.k * b * coupling_abs(ctx.d_0minus, ux, uy, uz) -
                 m.r_0minus;
        default:
          return ctx.k * m.ratio * b *
                     coupling_abs(ctx.d_minusplus, ux, uy, uz) -
                 m.r_minusplus;
      }
    };
  }
  return spec;
}

struct SolveResult {
  double b = 0.0;
  double zeta = 0.0;
  double eta = 0.0;
  double misfit_sigma = 0.0;
};

// One deterministic inversion: closed-form start, refinement, folding into
// the principal quadrant, and the noise-weighted misfit of the optimum.
SolveResult solve_one(const Measurements& m, const CouplingContext& ctx,
                      InversionModel model,
                      const std::array<double, 3>& sigmas) {
  const ModelSpec spec = make_model(m, ctx, model);
  const FitResult fit = least_squares(spec, closed_form_start(m, ctx));

  SolveResult out;
  out.b = std::abs(fit.params(0));
  out.zeta = std::atan2(std::abs(std::sin(fit.params(1))),
                        std::abs(std::cos(fit.params(1))));
  out.eta = std::atan2(std::abs(std::sin(fit.params(2))),
                       std::abs(std::cos(fit.params(2))));

  const std::array<double, 3> values{m.r_0plus, m.r_0minus, m.r_minusplus};
  double z2 = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double r = spec.residual(i, fit.params);
    const double floor = 1e-9 * std::max(1.0, std::abs(values[i]));
    const double s = std::max(sigmas[i], floor);
    z2 += (r / s) * (r / s);
  }
  out.misfit_sigma = std::sqrt(z2);
  return out;
}

void check_measured(const MeasuredValue& v, const char* name,
                    bool strictly_positive) {
  if (!std::isfinite(v.value) || !std::isfinite(v.sigma)) {
    throw ComputationError(std::string(name) + " must be finite");
  }
  if (v.sigma < 0.0) {
    throw ComputationError(std::string(name) +
                           " has a negative uncertainty");
  }
  if (strictly_positive ? !(v.value > 0.0) : v.value < 0.0) {
    throw ComputationError(std::string(name) +
                           (strictly_positive ? " must be positive"
                                              : " cannot be negative"));
  }
}

double draw_value(const MeasuredValue& v, std::mt19937_64& rng) {
  if (v.sigma <= 0.0) return v.value;
  std::normal_distribution<double> gauss(v.value, v.sigma);
  return gauss(rng);
}

// ---------------------------------------------------------------------------
// Static-field planning
// ---------------------------------------------------------------------------

// Closed-form frequency of the chosen transition as a function of field
// strength, on the orientation where that transition has a single branch.
double branch_frequency(double b_mt, TransitionChoice transition,
                        FieldOrientation orientation,
                        const PhysicalConstants& consts) {
  const double half_d = 0.5 * consts.D_MHz;
  const double b = consts.gamma_e_MHz_per_mT * b_mt;
  if (orientation == FieldOrientation::perpendicular) {
    const double delta = std::hypot(half_d, b);
    switch (transition) {
      case TransitionChoice::zero_minus:
        return half_d + delta;
      case TransitionChoice::zero_plus:
        return 2.0 * delta;
      case TransitionChoice::minus_beta:
        return delta - half_d;
    }
  }
  if (transition == TransitionChoice::zero_minus) {
    return consts.D_MHz - b;
  }
  throw ConfigError("only the zero<->minus transition has a single closed "
                    "branch in a parallel static field");
}

struct Bracket {
  double lo = 0.0;
  double hi = 0.0;
};

Bracket solver_bracket(TransitionChoice transition,
                       FieldOrientation orientation) {
  if (orientation == FieldOrientation::parallel) {
    // keep D - gamma*B positive with margin: 102.4 mT maps to ~0.25 MHz
    return {0.0, 102.4};
  }
  if (transition == TransitionChoice::minus_beta) {
    return {0.0, 300.0};
  }
  return {0.0, 60.0};
}

void check_constants(const PhysicalConstants& consts) {
  if (!(consts.D_MHz > 0.0) || !std::isfinite(consts.D_MHz) ||
      !(consts.gamma_e_MHz_per_mT > 0.0) ||
      !std::isfinite(consts.gamma_e_MHz_per_mT)) {
    throw ComputationError("physical constants must be finite and positive");
  }
}

// Probability of |0> character remaining in the zero-like state; below 0.95
// optical polarization and readout contrast degrade.
double zero_character(double b_mt, const PhysicalConstants& consts) {
  const double chi =
      0.5 * std::atan2(2.0 * consts.gamma_e_MHz_per_mT * b_mt, consts.D_MHz);
  const double c = std::cos(chi);
  return c * c;
}

}  // namespace

std::string to_string(QuadrantNote note) {
  switch (note) {
    case QuadrantNote::principal_quadrant:
      return "angles folded into [0, pi/2]: the measured magnitudes cannot "
             "distinguish quadrants";
  }
  return "unknown";
}

std::string to_string(TransitionChoice transition) {
  switch (transition) {
    case TransitionChoice::zero_minus:
      return "zero<->minus";
    case TransitionChoice::zero_plus:
      return "zero<->plus";
    case TransitionChoice::minus_beta:
      return "minus<->beta";
  }
  return "unknown";
}

std::string to_string(FieldOrientation orientation) {
  return orientation == FieldOrientation::perpendicular ? "perpendicular"
                                                        : "parallel";
}

ReconstructedField invert_field(const RabiMeasurementSet& meas,
                                const PhysicalConstants& consts,
                                const InversionOptions& options) {
  check_measured(meas.R_0plus_MHz, "R_0plus", false);
  check_measured(meas.R_0minus_MHz, "R_0minus", false);
  check_measured(meas.R_minusplus_MHz, "R_minusplus", false);
  check_measured(meas.amplitude_ratio, "amplitude_ratio", true);
  if (options.uncertainty == UncertaintyMethod::monte_carlo &&
      options.mc_samples < 1) {
    throw ComputationError("resampling needs at least one sample");
  }

  const CouplingContext ctx = coupling_context(meas, consts);
  const Measurements central{meas.R_0plus_MHz.value, meas.R_0minus_MHz.value,
                             meas.R_minusplus_MHz.value,
                             meas.amplitude_ratio.value};
  const std::array<double, 3> sigmas{meas.R_0plus_MHz.sigma,
                                     meas.R_0minus_MHz.sigma,
                                     meas.R_minusplus_MHz.sigma};

  const SolveResult sol = solve_one(central, ctx, options.model, sigmas);

  ReconstructedField out;
  out.B_MW_mT = sol.b;
  out.B_RF_mT = central.ratio * sol.b;
  out.zeta_rad = sol.zeta;
  out.eta_rad = sol.eta;
  out.misfit_sigma = sol.misfit_sigma;
  out.inconsistent = sol.misfit_sigma > 5.0;
  out.eta_indeterminate =
      central.r_0plus == 0.0 && central.r_0minus == 0.0;

  const auto solve_outputs =
      [&](const Measurements& m) -> std::array<double, 4> {
    const SolveResult s = solve_one(m, ctx, options.model, sigmas);
    return {s.b, m.ratio * s.b, s.zeta, s.eta};
  };

  if (options.uncertainty == UncertaintyMethod::monte_carlo &&
      options.mc_samples > 1) {
    std::array<double, 4> mean{};
    std::array<double, 4> m2{};
    for (int k = 0; k < options.mc_samples; ++k) {
      std::seed_seq seq{options.seed, static_cast<std::uint64_t>(k)};
      std::mt19937_64 rng(seq);
      Measurements d;
      d.r_0plus = std::max(0.0, draw_value(meas.R_0plus_MHz, rng));
      d.r_0minus = std::max(0.0, draw_value(meas.R_0minus_MHz, rng));
      d.r_minusplus = std::max(0.0, draw_value(meas.R_minusplus_MHz, rng));
      d.ratio = std::max(1e-12, draw_value(meas.amplitude_ratio, rng));
      const std::array<double, 4> x = solve_outputs(d);
      for (int c = 0; c < 4; ++c) {
        const double delta = x[c] - mean[c];
        mean[c] += delta / static_cast<double>(k + 1);
        m2[c] += delta * (x[c] - mean[c]);
      }
    }
    const double denom = static_cast<double>(options.mc_samples - 1);
    out.sigma_B_MW_mT = std::sqrt(m2[0] / denom);
    out.sigma_B_RF_mT = std::sqrt(m2[1] / denom);
    out.sigma_zeta_rad = std::sqrt(m2[2] / denom);
    out.sigma_eta_rad = std::sqrt(m2[3] / denom);
  } else if (options.uncertainty == UncertaintyMethod::linearized) {
    const std::array<const MeasuredValue*, 4> inputs{
        &meas.R_0plus_MHz, &meas.R_0minus_MHz, &meas.R_minusplus_MHz,
        &meas.amplitude_ratio};
    std::array<double, 4> var{};
    for (int j = 0; j < 4; ++j) {
      const double sigma = inputs[j]->sigma;
      if (sigma <= 0.0) continue;
      const double value = inputs[j]->value;
      const double h =
          std::max(1e-6 * std::max(1.0, std::abs(value)), 1e-3 * sigma);
      Measurements plus = central;
      Measurements minus = central;
      const auto nudge = [&](Measurements& m, double v) {
        switch (j) {
          case 0: m.r_0plus = std::max(0.0, v); break;
          case 1: m.r_0minus = std::max(0.0, v); break;
          case 2: m.r_minusplus = std::max(0.0, v); break;
          default: m.ratio = std::max(1e-12, v); break;
        }
      };
      nudge(plus, value + h);
      nudge(minus, value - h);
      const std::array<double, 4> xp = solve_outputs(plus);
      const std::array<double, 4> xm = solve_outputs(minus);
      for (int c = 0; c < 4; ++c) {
        const double grad = (xp[c] - xm[c]) / (2.0 * h);
        var[c] += grad * grad * sigma * sigma;
      }
    }
    out.sigma_B_MW_mT = std::sqrt(var[0]);
    out.sigma_B_RF_mT = std::sqrt(var[1]);
    out.sigma_zeta_rad = std::sqrt(var[2]);
    out.sigma_eta_rad = std::sqrt(var[3]);
  }
  return out;
}

ReconstructedField invert_field(const RabiMeasurementSet& meas,
                                const PhysicalConstants& consts) {
  return invert_field(meas, consts, InversionOptions{});
}

double plan_static_field(double target_freq_MHz, TransitionChoice transition,
                         FieldOrientation orientation,
                         const PhysicalConstants& consts) {
  check_constants(consts);
  if (!std::isfinite(target_freq_MHz)) {
    throw ComputationError("target frequency must be finite");
  }
  const Bracket br = solver_bracket(transition, orientation);
  const double f_lo = branch_frequency(br.lo, transition, orientation, consts);
  const double f_hi = branch_frequency(br.hi, transition, orientation, consts);
  const bool increasing = f_hi > f_lo;

  double prev = f_lo;
  for (int i = 1; i <= 100; ++i) {
    const double b = br.lo + (br.hi - br.lo) * i / 100.0;
    const double f = branch_frequency(b, transition, orientation, consts);
    if (increasing ? f <= prev : f >= prev) {
      throw ComputationError(
          "branch frequency is not monotonic on the solver bracket");
    }
    prev = f;
  }

  const double band_lo = std::min(f_lo, f_hi);
  const double band_hi = std::max(f_lo, f_hi);
  if (target_freq_MHz < band_lo - 1e-3 || target_freq_MHz > band_hi + 1e-3) {
    std::ostringstream msg;
    msg.setf(std::ios::fixed);
    msg.precision(3);
    msg << "target " << target_freq_MHz << " MHz is outside the "
        << to_string(transition) << " " << to_string(orientation) << " band ["
        << band_lo << ", " << band_hi << "] MHz";
    throw ComputationError(msg.str());
  }
  const double goal = std::clamp(target_freq_MHz, band_lo, band_hi);

  double lo = br.lo;
  double hi = br.hi;
  for (int i = 0; i < 200 && hi > lo; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double f = branch_frequency(mid, transition, orientation, consts);
    if ((f < goal) == increasing) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

ProtocolPlan single_frequency_protocol(double target_freq_MHz,
                                       const PhysicalConstants& consts) {
  check_constants(consts);
  if (!std::isfinite(target_freq_MHz)) {
    throw ConfigError("target frequency must be finite");
  }
  if (target_freq_MHz < 1.0) {
    throw ConfigError(
        "vector detection is specified for target frequencies of 1 MHz and "
        "above");
  }

  ProtocolPlan plan;
  plan.steps.reserve(3);
  const double d = consts.D_MHz;

  if (target_freq_MHz > d) {
    const double b_zero_minus =
        plan_static_field(target_freq_MHz, TransitionChoice::zero_minus,
                          FieldOrientation::perpendicular, consts);
    const double b_mixed =
        plan_static_field(target_freq_MHz, TransitionChoice::minus_beta,
                          FieldOrientation::perpendicular, consts);
    plan.steps.push_back(
        {{b_zero_minus, kPi / 2.0},
         TransitionChoice::zero_minus,
         target_freq_MHz,
         "drive azimuth: rotate the static field in the transverse plane and "
         "locate the extremes of the Rabi frequency"});
    plan.steps.push_back(
        {{b_zero_minus, kPi / 2.0},
         TransitionChoice::zero_minus,
         target_freq_MHz,
         "transverse amplitude B_AC*sin(zeta): Rabi frequency with the "
         "static field a quarter turn from the drive azimuth"});
    plan.steps.push_back(
        {{b_mixed, kPi / 2.0},
         TransitionChoice::minus_beta,
         target_freq_MHz,
         "axial amplitude B_AC*cos(zeta): Rabi frequency of the mixed-branch "
         "transition, which couples through the axial spin component"});
    plan.band_low_MHz = d;
    plan.band_high_MHz =
        branch_frequency(solver_bracket(TransitionChoice::zero_minus,
                                        FieldOrientation::perpendicular)
                             .hi,
                         TransitionChoice::zero_minus,
                         FieldOrientation::perpendicular, consts);
  } else {
    const double b_mixed =
        plan_static_field(target_freq_MHz, TransitionChoice::minus_beta,
                          FieldOrientation::perpendicular, consts);
    const double b_parallel =
        plan_static_field(target_freq_MHz, TransitionChoice::zero_minus,
                          FieldOrientation::parallel, consts);
    plan.steps.push_back(
        {{b_mixed, kPi / 2.0},
         TransitionChoice::minus_beta,
         target_freq_MHz,
         "drive azimuth: rotate the static field in the transverse plane and "
         "track the modulation of the mixed-branch Rabi frequency"});
    plan.steps.push_back(
        {{b_mixed, kPi / 2.0},
         TransitionChoice::minus_beta,
         target_freq_MHz,
         "axial amplitude B_AC*cos(zeta): Rabi frequency with the static "
         "field along the drive azimuth"});
    plan.steps.push_back(
        {{b_parallel, 0.0},
         TransitionChoice::zero_minus,
         target_freq_MHz,
         "transverse amplitude B_AC*sin(zeta): Rabi frequency of the "
         "zero<->minus transition in a parallel static field"});
    plan.band_low_MHz = 1.0;
    plan.band_high_MHz = d;
  }

  if (target_freq_MHz < 30.0) {
    plan.warnings.push_back(
        "targets below 30 MHz need only a weak static field, where the "
        "azimuthal modulation of the mixed-branch Rabi frequency is small "
        "and the drive azimuth is poorly determined");
  }
  for (const auto& step : plan.steps) {
    if (step.field.theta_rad == 0.0) continue;
    if (zero_character(step.field.B_mT, consts) < 0.95) {
      std::ostringstream msg;
      msg.setf(std::ios::fixed);
      msg.precision(1);
      msg << "the " << step.field.B_mT
          << " mT step strongly mixes the spin states, which reduces optical "
             "polarization and readout contrast";
      plan.warnings.push_back(msg.str());
      break;
    }
  }
  return plan;
}

AzimuthalScanResult azimuthal_scan_estimate(
    const std::vector<std::pair<double, double>>& rabi_vs_orientation,
    const PhysicalConstants& consts) {
  check_constants(consts);
  const int n = static_cast<int>(rabi_vs_orientation.size());
  if (n < 5) {
    throw ComputationError(
        "the orientation scan needs at least 5 static-field orientations");
  }
  double eta_lo = rabi_vs_orientation[0].first;
  double eta_hi = eta_lo;
  double r_min = rabi_vs_orientation[0].second;
  double r_max = r_min;
  int i_min = 0;
  for (int i = 0; i < n; ++i) {
    const auto& [eta_s, r] = rabi_vs_orientation[i];
    if (!std::isfinite(eta_s) || !std::isfinite(r) || r < 0.0) {
      throw ComputationError(
          "orientation-scan samples must be finite with non-negative Rabi "
          "frequencies");
    }
    eta_lo = std::min(eta_lo, eta_s);
    eta_hi = std::max(eta_hi, eta_s);
    if (r < r_min) {
      r_min = r;
      i_min = i;
    }
    r_max = std::max(r_max, r);
  }
  if (eta_hi - eta_lo < 0.5 * kPi - 1e-9) {
    throw ComputationError(
        "the orientation scan must span at least a quarter turn");
  }
  if (r_max - r_min <= 1e-9 * std::max(1.0, r_max)) {
    throw ComputationError(
        "the orientation scan is flat: the drive has no transverse "
        "component at this field, so its azimuth is indeterminate");
  }

  ModelSpec spec;
  spec.n_params = 3;
  spec.n_residuals = n;
  spec.residual = [&rabi_vs_orientation](int i, const Eigen::VectorXd& p) {
    const auto& [eta_s, r] = rabi_vs_orientation[i];
    return std::hypot(p(0), p(1) * std::sin(p(2) - eta_s)) - r;
  };
  Eigen::VectorXd init(3);
  init << r_min, std::sqrt(std::max(r_max * r_max - r_min * r_min, 0.0)),
      rabi_vs_orientation[i_min].first;
  FitResult fit = least_squares(spec, init);
  if (fit.degenerate) {
    throw FitError("the orientation-scan fit is singular");
  }

  AzimuthalScanResult out;
  const double a0 = std::abs(fit.params(0));
  const double a1 = std::abs(fit.params(1));
  double eta = std::fmod(fit.params(2), kPi);
  if (eta < 0.0) eta += kPi;
  out.eta_rad = eta;
  out.sigma_eta_rad = uncertainty(fit, 2);
  out.contrast_metric = a1 / std::hypot(a0, a1);
  out.low_contrast_warning = out.contrast_metric < 0.05;
  out.fit = std::move(fit);
  return out;
}

double sensitivity(double delta_B_uT, long n, double T_s) {
  if (!std::isfinite(delta_B_uT) || delta_B_uT < 0.0) {
    throw ComputationError(
        "the field uncertainty must be finite and non-negative");
  }
  if (n < 1) {
    throw ComputationError("the repetition count must be at least 1");
  }
  if (!std::isfinite(T_s) || !(T_s > 0.0)) {
    throw ComputationError("the sensing time must be positive");
  }
  return delta_B_uT * std::sqrt(static_cast<double>(n) * T_s);
}

}  // namespace nvac
