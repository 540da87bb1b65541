#pragma once

// Inversion of measured Rabi frequencies into the drive-field vector,
// static-field planning for single-frequency vector detection, the azimuthal
// orientation-scan estimator, and the sensitivity formula.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nvac/constants.hpp"
#include "nvac/errors.hpp"
#include "nvac/fitting.hpp"

namespace nvac {

// A measured scalar with its one-sigma uncertainty.
struct MeasuredValue {
  double value = 0.0;
  double sigma = 0.0;
};

// The three on-resonance Rabi frequencies measured at one static-field
// setting, plus the known amplitude ratio of the low- and high-frequency
// drives (B_RF / B_MW).
struct RabiMeasurementSet {
  MeasuredValue R_0plus_MHz;
  MeasuredValue R_0minus_MHz;
  MeasuredValue R_minusplus_MHz;
  MeasuredValue amplitude_ratio;
  StaticField field_context;
};

enum class InversionModel {
  // Each transition responds to a single Cartesian drive component (the
  // published working approximation). Default.
  single_axis,
  // Each transition responds to the full complex sum over drive components;
  // matches the forward synthesis exactly, so noiseless round trips close.
  coherent_sum,
};

enum class UncertaintyMethod {
  monte_carlo,  // seeded resampling of the measurements (default)
  linearized,   // first-order propagation through the solve (fast path)
  none,         // skip uncertainty propagation entirely
};

struct InversionOptions {
  InversionModel model = InversionModel::single_axis;
  UncertaintyMethod uncertainty = UncertaintyMethod::monte_carlo;
  int mc_samples = 10000;
  std::uint64_t seed = 0;
};

// The measured Rabi magnitudes depend only on |sin|/|cos| of the angles, so
// the reconstruction cannot distinguish quadrants; outputs follow a fixed
// convention recorded here.
enum class QuadrantNote {
  principal_quadrant,  // zeta and eta folded into [0, pi/2]
};
std::string to_string(QuadrantNote note);

struct ReconstructedField {
  double B_MW_mT = 0.0;
  double B_RF_mT = 0.0;
  double zeta_rad = 0.0;
  double eta_rad = 0.0;
  double sigma_B_MW_mT = 0.0;
  double sigma_B_RF_mT = 0.0;
  double sigma_zeta_rad = 0.0;
  double sigma_eta_rad = 0.0;
  QuadrantNote quadrant_note = QuadrantNote::principal_quadrant;
  // Both transverse responses vanish, so the drive is axial and the azimuth
  // carries no signal; eta_rad is left at 0 as a placeholder, not an estimate.
  bool eta_indeterminate = false;
  // The best fit misses the measurements by more than five combined sigma.
  bool inconsistent = false;
  // Noise-weighted residual magnitude of the best fit (in sigma units).
  double misfit_sigma = 0.0;
};

// Solves the coupling equations plus the amplitude-ratio constraint for
// (B_MW, B_RF, zeta, eta) by nonlinear least squares, using the exact dipole
// matrix elements computed at meas.field_context. Throws ComputationError on
// malformed measurements (negative R, non-positive ratio, negative sigma,
// non-finite values).
ReconstructedField invert_field(const RabiMeasurementSet& meas,
                                const PhysicalConstants& consts,
                                const InversionOptions& options);
ReconstructedField invert_field(const RabiMeasurementSet& meas,
                                const PhysicalConstants& consts);

// Transitions the planner can target, named by the eigenstate pair in the
// perpendicular-field convention. minus_beta denotes the transition from the
// non-mixing state to the upper mixed branch whatever its label at the
// planned field; in a parallel field zero_minus denotes |0> <-> |-1>.
enum class TransitionChoice { zero_minus, zero_plus, minus_beta };
enum class FieldOrientation { perpendicular, parallel };
std::string to_string(TransitionChoice transition);
std::string to_string(FieldOrientation orientation);

// Finds the static field strength (mT) at which the chosen transition sits at
// target_freq_MHz, by bisection to 1 kHz after verifying the branch frequency
// is monotonic on the solver bracket. Out-of-band targets raise
// ComputationError naming the reachable band; transition/orientation pairs
// with no closed branch raise ConfigError.
double plan_static_field(double target_freq_MHz, TransitionChoice transition,
                         FieldOrientation orientation,
                         const PhysicalConstants& consts);

struct ProtocolStep {
  StaticField field;
  TransitionChoice transition;
  double drive_frequency_MHz = 0.0;
  std::string extracts;  // the quantity this step measures
};

struct ProtocolPlan {
  std::vector<ProtocolStep> steps;
  double band_low_MHz = 0.0;   // frequency coverage of the chosen branch
  double band_high_MHz = 0.0;
  std::vector<std::string> warnings;
};

// Plans the measurement sequence for vector detection of a drive at a single
// frequency. Targets above the zero-field splitting use two perpendicular
// static fields; targets from 1 MHz up to the splitting use a perpendicular
// field on the mixed branch plus a parallel field. Targets below 1 MHz raise
// ConfigError. Warnings record the low-frequency azimuth caveat (target
// below 30 MHz) and optical-contrast loss at strongly mixing fields.
ProtocolPlan single_frequency_protocol(double target_freq_MHz,
                                       const PhysicalConstants& consts);

struct AzimuthalScanResult {
  double eta_rad = 0.0;        // drive azimuth, in [0, pi)
  double sigma_eta_rad = 0.0;
  // Modulated fraction of the response, equal to the transverse dipole
  // weight when the drive sits at 45 degrees to the axis.
  double contrast_metric = 0.0;
  bool low_contrast_warning = false;  // metric below 0.05
  FitResult fit;
};

// Estimates the drive azimuth from Rabi frequencies of the mixed-branch
// transition measured at different static-field orientations eta_static
// (radians). Requires at least 5 orientations spanning at least 90 degrees;
// a flat scan (axial drive) raises ComputationError.
AzimuthalScanResult azimuthal_scan_estimate(
    const std::vector<std::pair<double, double>>& rabi_vs_orientation,
    const PhysicalConstants& consts);

// Field sensitivity delta_B * sqrt(n * T) in uT per sqrt(Hz), for a field
// uncertainty delta_B (uT), n repetitions, and sensing time T (seconds) per
// repetition. Throws ComputationError unless n >= 1, T > 0, delta_B >= 0.
double sensitivity(double delta_B_uT, long n, double T_s);

}  // namespace nvac
