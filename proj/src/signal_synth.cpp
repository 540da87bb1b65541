#include "nvac/signal_synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>

namespace nvac {

namespace {

constexpr double kFourLn2 = 4.0 * std::numbers::ln2;

void validate_ac(const ACFieldVector& ac) {
  if (!std::isfinite(ac.B_AC_mT) || !std::isfinite(ac.zeta_rad) ||
      !std::isfinite(ac.eta_rad))
    throw ComputationError("AC field has non-finite components");
  if (ac.B_AC_mT < 0.0)
    throw ComputationError("AC amplitude must be >= 0 mT");
  if (ac.zeta_rad < 0.0 || ac.zeta_rad > std::numbers::pi)
    throw ComputationError("AC polar angle must lie in [0, pi] rad");
  if (ac.eta_rad < 0.0 || ac.eta_rad >= 2.0 * std::numbers::pi)
    throw ComputationError("AC azimuth must lie in [0, 2 pi) rad");
}

double coupling_magnitude(const Transition& tr, const Eigen::Vector3d& u) {
  const std::complex<double> sum =
      u(0) * tr.dipole(0) + u(1) * tr.dipole(1) + u(2) * tr.dipole(2);
  return std::abs(sum);
}

void validate_line(const LineShapeParams& line) {
  if (!(line.fwhm_MHz > 0.0))
    throw ComputationError("line width must be positive");
  if (!(line.contrast_scale > 0.0) || line.contrast_scale > 1.0)
    throw ComputationError("contrast scale must lie in (0, 1]");
  if (!(line.response_exponent > 0.0))
    throw ComputationError("response exponent must be positive");
}

}  // namespace

Eigen::Vector3d ac_unit_vector(const ACFieldVector& ac) {
  validate_ac(ac);
  const double sz = std::sin(ac.zeta_rad);
  return {sz * std::cos(ac.eta_rad), sz * std::sin(ac.eta_rad),
          std::cos(ac.zeta_rad)};
}

double rabi_frequency(const Transition& tr, const ACFieldVector& ac,
                      const PhysicalConstants& consts) {
  const Eigen::Vector3d u = ac_unit_vector(ac);
  return std::sqrt(2.0) * consts.gamma_e_MHz_per_mT * ac.B_AC_mT *
         coupling_magnitude(tr, u);
}

ProbabilityCurves transition_probability_vs_eta(
    const LabeledEigensystem& sys, const ACFieldVector& ac_template,
    const std::vector<double>& eta_grid) {
  if (eta_grid.empty())
    throw ComputationError("azimuth grid must be non-empty");
  const auto trs = transitions(sys);

  ProbabilityCurves out;
  out.eta_rad = eta_grid;
  out.p_zero_minus.reserve(eta_grid.size());
  out.p_zero_plus.reserve(eta_grid.size());
  for (double eta : eta_grid) {
    ACFieldVector ac = ac_template;
    ac.eta_rad = eta;
    const Eigen::Vector3d u = ac_unit_vector(ac);
    out.p_zero_minus.push_back(std::pow(coupling_magnitude(trs[0], u), 2.0));
    out.p_zero_plus.push_back(std::pow(coupling_magnitude(trs[1], u), 2.0));
  }
  for (auto* curve : {&out.p_zero_minus, &out.p_zero_plus}) {
    const double peak = *std::max_element(curve->begin(), curve->end());
    if (!(peak > 0.0))
      throw ComputationError(
          "transition probability curve is identically zero for this drive "
          "geometry");
    for (double& p : *curve) p /= peak;
  }
  return out;
}

ODMRSpectrum odmr_spectrum(const LabeledEigensystem& sys,
                           const ACFieldVector& ac,
                           const LineShapeParams& line,
                           const std::vector<double>& freq_grid) {
  validate_line(line);
  if (freq_grid.empty())
    throw ComputationError("frequency grid must be non-empty");
  if (!std::is_sorted(freq_grid.begin(), freq_grid.end()))
    throw ComputationError("frequency grid must be sorted ascending");

  ODMRSpectrum spec;
  spec.freq_MHz = freq_grid;
  spec.signal.assign(freq_grid.size(), 1.0);

  // depths depend only on the ratio R_k/R_max, so the sqrt(2)*gamma_e
  // prefactor cancels and raw couplings scaled by the amplitude suffice
  const Eigen::Vector3d u = ac_unit_vector(ac);
  const auto trs = transitions(sys);
  std::array<double, 3> r{};
  double rmax = 0.0;
  for (int k = 0; k < 3; ++k) {
    r[k] = ac.B_AC_mT * coupling_magnitude(trs[k], u);
    rmax = std::max(rmax, r[k]);
  }
  if (rmax == 0.0) return spec;  // no drive, flat baseline

  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      if (std::abs(trs[i].frequency_MHz - trs[j].frequency_MHz) <
          line.fwhm_MHz / 10.0)
        throw ComputationError(
            "two transition frequencies closer than fwhm/10: peaks are "
            "unresolvable at this line width");

  for (int k = 0; k < 3; ++k) {
    const double depth =
        line.contrast_scale * std::pow(r[k] / rmax, line.response_exponent);
    if (depth == 0.0) continue;
    for (std::size_t i = 0; i < freq_grid.size(); ++i) {
      const double df = freq_grid[i] - trs[k].frequency_MHz;
      spec.signal[i] -=
          depth * std::exp(-kFourLn2 * df * df / (line.fwhm_MHz * line.fwhm_MHz));
    }
  }
  for (double s : spec.signal)
    if (s <= 0.0)
      throw ComputationError(
          "overlapping dips drove the signal to zero or below; reduce the "
          "contrast scale");
  return spec;
}

std::vector<EtaRatioPoint> eta_ratio_curve(const LabeledEigensystem& sys,
                                           const ACFieldVector& ac_template,
                                           const std::vector<double>& eta_grid) {
  if (eta_grid.empty())
    throw ComputationError("azimuth grid must be non-empty");
  const auto trs = transitions(sys);
  std::vector<EtaRatioPoint> out;
  out.reserve(eta_grid.size());
  for (double eta : eta_grid) {
    ACFieldVector ac = ac_template;
    ac.eta_rad = eta;
    const Eigen::Vector3d u = ac_unit_vector(ac);
    const double num = std::pow(coupling_magnitude(trs[0], u), 2.0);
    const double den = std::pow(coupling_magnitude(trs[1], u), 2.0);
    double ratio = kRatioClamp;
    if (den > 0.0 && num < den * kRatioClamp) ratio = num / den;
    out.push_back({eta, ratio});
  }
  return out;
}

RabiTrace rabi_trace(double R_MHz, double T_R_us, double a, double c,
                     const std::vector<double>& times_us, double noise_sigma,
                     std::uint64_t seed) {
  if (!(T_R_us > 0.0))
    throw ComputationError("decay time must be positive");
  if (noise_sigma < 0.0)
    throw ComputationError("noise sigma must be >= 0");

  RabiTrace tr;
  tr.times_us = times_us;
  tr.params = {a, R_MHz, T_R_us, c};
  tr.signal.reserve(times_us.size());
  for (double t : times_us)
    tr.signal.push_back(a * std::cos(2.0 * std::numbers::pi * R_MHz * t) *
                            std::exp(-t / T_R_us) +
                        c);
  if (noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, noise_sigma);
    for (double& s : tr.signal) s += gauss(rng);
  }
  return tr;
}

}  // namespace nvac
