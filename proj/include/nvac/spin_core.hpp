#pragma once

#include <array>
#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "nvac/constants.hpp"
#include "nvac/errors.hpp"

namespace nvac {

using Matrix3c = Eigen::Matrix3cd;
using Vector3c = Eigen::Vector3cd;

// Spin-1 operators in the m_s basis ordered (+1, 0, -1).
struct Spin1Operators {
  Matrix3c sx, sy, sz;
};

Spin1Operators spin1_operators();

enum class StateLabel { ZERO, MINUS, PLUS, ALPHA, BETA };

const char* to_string(StateLabel label);

// Eigensystem with physically meaningful names attached to the three states.
// ZERO/PLUS become ALPHA/BETA once high-field mixing erodes the |0> character
// of the zero-like state below 0.95 in probability.
struct LabeledEigensystem {
  std::array<double, 3> levels_MHz{};
  std::array<Vector3c, 3> states{};
  std::array<StateLabel, 3> labels{};

  // index lookups; index_of throws ComputationError if the label is absent
  int index_of(StateLabel label) const;
  int index_of_minus() const;       // always MINUS
  int index_of_zero_like() const;   // ZERO or ALPHA
  int index_of_plus_like() const;   // PLUS or BETA
};

// H = D*Sz^2 + gamma_e*B*(sin(theta)*Sx + cos(theta)*Sz), in MHz.
// Throws ComputationError on invalid field (B < 0, theta outside [0, pi], NaN).
Matrix3c ground_hamiltonian(const PhysicalConstants& consts,
                            const StaticField& field);

// Exact diagonalization plus labeling. The field is used only to dispatch the
// closed-form block solution at theta == pi/2; the matrix is what is solved.
// Throws ComputationError for a non-Hermitian input and LabelingAmbiguityError
// when the overlap rules tie within 1e-9.
LabeledEigensystem eigensystem(const Matrix3c& h,
                               const PhysicalConstants& consts,
                               const StaticField& field);

// Convenience: build the Hamiltonian from (consts, field) and solve it.
LabeledEigensystem eigensystem(const PhysicalConstants& consts,
                               const StaticField& field);

// General path for an arbitrary Hermitian matrix (no closed-form dispatch).
LabeledEigensystem eigensystem(const Matrix3c& h);

// One allowed pair: frequency and the three complex spin matrix elements
// (<from|Sx|to>, <from|Sy|to>, <from|Sz|to>), with `from` the lower level.
struct Transition {
  StateLabel from{};
  StateLabel to{};
  double frequency_MHz = 0.0;
  Vector3c dipole{};
};

// All three pairs in fixed slot order: (zero-like <-> minus),
// (zero-like <-> plus-like), (minus <-> plus-like).
std::array<Transition, 3> transitions(const LabeledEigensystem& sys);

// One theta sample of the level diagram; gap is between the upper two levels.
struct AnticrossingPoint {
  double theta_rad = 0.0;
  std::array<double, 3> levels_MHz{};  // ascending
  double gap_MHz = 0.0;
};

// Level scan over a polar-angle grid at fixed field strength.
// Throws ComputationError on an empty grid.
std::vector<AnticrossingPoint> anticrossing_scan(const PhysicalConstants& consts,
                                                 double B_mT,
                                                 const std::vector<double>& theta_grid);

}  // namespace nvac
