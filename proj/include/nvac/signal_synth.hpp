#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "nvac/constants.hpp"
#include "nvac/errors.hpp"
#include "nvac/spin_core.hpp"

namespace nvac {

// Linearly polarized AC field: amplitude, direction (polar angle from the NV
// axis, azimuth from the static field's transverse projection), frequency and
// phase. omega/phi ride along for bookkeeping; the weak-drive signal models
// depend only on amplitude and direction.
struct ACFieldVector {
  double B_AC_mT = 0.0;
  double zeta_rad = 0.0;
  double eta_rad = 0.0;
  double omega_rad_per_us = 0.0;
  double phi_rad = 0.0;
};

// (sin(zeta)cos(eta), sin(zeta)sin(eta), cos(zeta)); throws ComputationError
// when the field parameters are out of range (B >= 0, zeta in [0, pi],
// eta in [0, 2 pi)).
Eigen::Vector3d ac_unit_vector(const ACFieldVector& ac);

// R = sqrt(2) * gamma_e * B_AC * |ux<i|Sx|j> + uy<i|Sy|j> + uz<i|Sz|j>|, MHz.
// The modulus is taken of the complex (coherent) sum.
double rabi_frequency(const Transition& tr, const ACFieldVector& ac,
                      const PhysicalConstants& consts);

// Squared couplings of the zero-like state to the two mixed states as the
// drive azimuth scans, each curve normalized to its own maximum over the grid.
struct ProbabilityCurves {
  std::vector<double> eta_rad;
  std::vector<double> p_zero_minus;
  std::vector<double> p_zero_plus;
};

// Requires a theta = pi/2 eigensystem for the advertised cos^2/sin^2 shapes;
// the template's eta is overridden per grid point. Throws ComputationError if
// the grid is empty or a curve is identically zero (degenerate geometry).
ProbabilityCurves transition_probability_vs_eta(
    const LabeledEigensystem& sys, const ACFieldVector& ac_template,
    const std::vector<double>& eta_grid);

// Gaussian line shape and weak-drive response. Dip depth is
// contrast_scale * (R_k / R_max)^response_exponent, unit-peak Gaussian.
struct LineShapeParams {
  double fwhm_MHz = 8.0;
  double contrast_scale = 0.15;
  double response_exponent = 2.0;
};

// Normalized fluorescence vs drive frequency; 1 is the off-resonance baseline.
struct ODMRSpectrum {
  std::vector<double> freq_MHz;
  std::vector<double> signal;
};

// signal(f) = 1 - sum over transitions of depth_k * G(f; f_k, fwhm).
// Zero drive returns a flat unity baseline. Throws ComputationError when two
// transition frequencies fall within fwhm/10 (unresolvable), when the grid is
// empty or not ascending, when line-shape parameters are out of range, or when
// overlapping dips drive the signal to zero or below.
ODMRSpectrum odmr_spectrum(const LabeledEigensystem& sys,
                           const ACFieldVector& ac,
                           const LineShapeParams& line,
                           const std::vector<double>& freq_grid);

struct EtaRatioPoint {
  double eta_rad = 0.0;
  double ratio = 0.0;
};

// Reported ratios are clamped here when the reference dip underflows.
inline constexpr double kRatioClamp = 1e6;

// Ratio of the (zero-like <-> minus) dip depth to the (zero-like <-> plus-like)
// dip depth as the drive azimuth scans; template eta is overridden per point.
std::vector<EtaRatioPoint> eta_ratio_curve(const LabeledEigensystem& sys,
                                           const ACFieldVector& ac_template,
                                           const std::vector<double>& eta_grid);

// a * cos(2 pi nu t) * exp(-t / T_R) + c
struct DampedCosineParams {
  double a = 0.0;
  double nu_MHz = 0.0;
  double T_R_us = 0.0;
  double c = 0.0;
};

struct RabiTrace {
  std::vector<double> times_us;
  std::vector<double> signal;
  DampedCosineParams params;
};

// Exact evaluation of the damped cosine at the given times; Gaussian noise is
// opt-in (sigma > 0) and fully determined by the seed. Throws ComputationError
// for T_R <= 0 or sigma < 0.
RabiTrace rabi_trace(double R_MHz, double T_R_us, double a, double c,
                     const std::vector<double>& times_us,
                     double noise_sigma = 0.0, std::uint64_t seed = 0);

}  // namespace nvac
