#pragma once

namespace nvac {

// Ground-state constants of the NV- electron spin. Energies are expressed as
// frequencies (MHz), fields in mT, so gamma_e carries MHz/mT.
struct PhysicalConstants {
  double D_MHz = 2870.0;                  // zero-field splitting
  double gamma_e_MHz_per_mT = 28.02495;   // gyromagnetic ratio / 2pi
};

// Static bias field: magnitude and polar angle from the NV axis. The
// transverse projection of this field defines the X axis, so no azimuth.
struct StaticField {
  double B_mT = 0.0;
  double theta_rad = 0.0;
};

inline constexpr double kGaussPerMilliTesla = 10.0;

}  // namespace nvac
