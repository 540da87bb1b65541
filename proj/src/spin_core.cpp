#include "nvac/spin_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace nvac {

namespace {

using cd = std::complex<double>;

constexpr double kOverlapTieTol = 1e-9;

// reference kets in the (+1, 0, -1) basis
Vector3c minus_reference() {
  return Vector3c(cd(-1, 0), cd(0, 0), cd(1, 0)) / std::sqrt(2.0);
}

Vector3c zero_reference() { return Vector3c(cd(0, 0), cd(1, 0), cd(0, 0)); }

void validate_field(const StaticField& field) {
  if (!std::isfinite(field.B_mT) || !std::isfinite(field.theta_rad))
    throw ComputationError("static field has non-finite components");
  if (field.B_mT < 0.0)
    throw ComputationError("static field magnitude must be >= 0 mT");
  if (field.theta_rad < 0.0 || field.theta_rad > std::numbers::pi)
    throw ComputationError("polar angle must lie in [0, pi] rad");
}

void validate_constants(const PhysicalConstants& consts) {
  if (!(consts.D_MHz > 0.0) || !(consts.gamma_e_MHz_per_mT > 0.0))
    throw ComputationError("physical constants must be positive");
}

// rotate a degenerate eigen-group so its first member is the normalized
// projection of `ref` into the group's span; remaining members are
// re-orthonormalized inside the span (energies unchanged)
void align_group_to(const std::vector<int>& group, const Vector3c& ref,
                    std::array<Vector3c, 3>& states) {
  Vector3c proj = Vector3c::Zero();
  for (int i : group) proj += states[i] * states[i].dot(ref);
  if (proj.norm() < 1e-9) return;  // ref has no weight here; nothing to align
  proj.normalize();
  // complete an orthonormal basis of the span, steering the old members away
  // from proj by always taking the largest orthogonal residual
  std::vector<Vector3c> basis{proj};
  while (basis.size() < group.size()) {
    double best = -1.0;
    Vector3c bestv = Vector3c::Zero();
    for (int i : group) {
      Vector3c v = states[i];
      for (const Vector3c& b : basis) v -= b * b.dot(v);
      if (v.norm() > best) {
        best = v.norm();
        bestv = v;
      }
    }
    basis.push_back(bestv.normalized());
  }
  for (std::size_t k = 0; k < group.size(); ++k) states[group[k]] = basis[k];
}

void fix_phase(Vector3c& v) {
  int big = 0;
  for (int c = 1; c < 3; ++c)
    if (std::abs(v(c)) > std::abs(v(big))) big = c;
  const cd c = v(big);
  if (std::abs(c) > 0.0) v *= std::conj(c) / std::abs(c);
}

LabeledEigensystem label_states(std::array<double, 3> energies,
                                std::array<Vector3c, 3> states) {
  const double escale =
      std::max({1.0, std::abs(energies[0]), std::abs(energies[1]),
                std::abs(energies[2])});
  const double degtol = 1e-9 * escale;

  // degenerate groups (energies ascending, so chains are contiguous)
  std::vector<std::vector<int>> groups;
  for (int i = 0; i < 3; ++i) {
    if (!groups.empty() &&
        energies[i] - energies[groups.back().back()] <= degtol)
      groups.back().push_back(i);
    else
      groups.push_back({i});
  }

  const Vector3c mref = minus_reference();
  const Vector3c zref = zero_reference();

  for (auto& g : groups)
    if (g.size() > 1) align_group_to(g, mref, states);

  // MINUS: maximal overlap with the antisymmetric reference; a tie between
  // states of different energy is broken toward the lower level (the branch
  // that continuously becomes (|-1>-|+1>)/sqrt(2) as theta leaves 0)
  std::array<double, 3> mo{};
  for (int i = 0; i < 3; ++i) mo[i] = std::abs(states[i].dot(mref));
  int im = 0;
  for (int i = 1; i < 3; ++i) {
    if (mo[i] > mo[im] + kOverlapTieTol) {
      im = i;
    } else if (std::abs(mo[i] - mo[im]) <= kOverlapTieTol) {
      if (std::abs(energies[i] - energies[im]) <= degtol)
        throw LabelingAmbiguityError(
            "antisymmetric-overlap rule ties inside a degenerate pair; "
            "perturb theta to lift the degeneracy");
      if (energies[i] < energies[im]) im = i;
    }
  }

  std::array<int, 2> rest{};
  for (int i = 0, k = 0; i < 3; ++i)
    if (i != im) rest[k++] = i;

  // if the two remaining states are degenerate, orient them toward |0>
  if (std::abs(energies[rest[0]] - energies[rest[1]]) <= degtol) {
    std::vector<int> pair{rest[0], rest[1]};
    align_group_to(pair, zref, states);
  }

  const double z0 = std::abs(states[rest[0]].dot(zref));
  const double z1 = std::abs(states[rest[1]].dot(zref));
  if (std::abs(z0 - z1) <= kOverlapTieTol)
    throw LabelingAmbiguityError(
        "zero-overlap rule cannot separate the remaining pair; "
        "perturb theta to lift the tie");
  const int iz = z0 > z1 ? rest[0] : rest[1];
  const int ip = z0 > z1 ? rest[1] : rest[0];

  // high-field mixing erodes the |0> character; switch to alpha/beta names
  const double zero_char = std::norm(states[iz].dot(zref));
  const bool mixed = zero_char < 0.95;

  LabeledEigensystem sys;
  sys.levels_MHz = energies;
  sys.states = states;
  sys.labels[im] = StateLabel::MINUS;
  sys.labels[iz] = mixed ? StateLabel::ALPHA : StateLabel::ZERO;
  sys.labels[ip] = mixed ? StateLabel::BETA : StateLabel::PLUS;
  for (auto& v : sys.states) fix_phase(v);
  return sys;
}

LabeledEigensystem solve_general(const Matrix3c& h) {
  const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
  if ((h - h.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ComputationError("matrix is not Hermitian");
  Eigen::SelfAdjointEigenSolver<Matrix3c> solver(h);
  if (solver.info() != Eigen::Success)
    throw ComputationError("eigendecomposition failed to converge");
  std::array<double, 3> energies;
  std::array<Vector3c, 3> states;
  for (int i = 0; i < 3; ++i) {
    energies[i] = solver.eigenvalues()(i);
    states[i] = solver.eigenvectors().col(i);
  }
  return label_states(energies, states);
}

// theta == pi/2 block solution: (|-1>-|+1>)/sqrt(2) decouples at energy D and
// the symmetric sector reduces to [[D, b],[b, 0]] with b = gamma_e * B
LabeledEigensystem solve_perpendicular(const PhysicalConstants& consts,
                                       const StaticField& field) {
  const double d = consts.D_MHz;
  const double b = consts.gamma_e_MHz_per_mT * field.B_mT;
  const double delta = std::hypot(0.5 * d, b);
  const double chi = 0.5 * std::atan2(2.0 * b, d);
  const double c = std::cos(chi), s = std::sin(chi);
  const double r = 1.0 / std::sqrt(2.0);

  std::array<double, 3> energies{0.5 * d - delta, d, 0.5 * d + delta};
  std::array<Vector3c, 3> states{
      Vector3c(cd(-s * r, 0), cd(c, 0), cd(-s * r, 0)),
      Vector3c(cd(r, 0), cd(0, 0), cd(-r, 0)),
      Vector3c(cd(c * r, 0), cd(s, 0), cd(c * r, 0))};
  return label_states(energies, states);
}

}  // namespace

Spin1Operators spin1_operators() {
  const double r = 1.0 / std::sqrt(2.0);
  Spin1Operators ops;
  ops.sx.setZero();
  ops.sx(0, 1) = ops.sx(1, 0) = ops.sx(1, 2) = ops.sx(2, 1) = cd(r, 0);
  ops.sy.setZero();
  ops.sy(0, 1) = ops.sy(1, 2) = cd(0, -r);
  ops.sy(1, 0) = ops.sy(2, 1) = cd(0, r);
  ops.sz.setZero();
  ops.sz(0, 0) = cd(1, 0);
  ops.sz(2, 2) = cd(-1, 0);
  return ops;
}

const char* to_string(StateLabel label) {
  switch (label) {
    case StateLabel::ZERO: return "zero";
    case StateLabel::MINUS: return "minus";
    case StateLabel::PLUS: return "plus";
    case StateLabel::ALPHA: return "alpha";
    case StateLabel::BETA: return "beta";
  }
  return "?";
}

int LabeledEigensystem::index_of(StateLabel label) const {
  for (int i = 0; i < 3; ++i)
    if (labels[i] == label) return i;
  std::ostringstream msg;
  msg << "no state labeled " << to_string(label) << " in this eigensystem";
  throw ComputationError(msg.str());
}

int LabeledEigensystem::index_of_minus() const {
  return index_of(StateLabel::MINUS);
}

int LabeledEigensystem::index_of_zero_like() const {
  for (int i = 0; i < 3; ++i)
    if (labels[i] == StateLabel::ZERO || labels[i] == StateLabel::ALPHA)
      return i;
  throw ComputationError("no zero-like state in this eigensystem");
}

int LabeledEigensystem::index_of_plus_like() const {
  for (int i = 0; i < 3; ++i)
    if (labels[i] == StateLabel::PLUS || labels[i] == StateLabel::BETA)
      return i;
  throw ComputationError("no plus-like state in this eigensystem");
}

Matrix3c ground_hamiltonian(const PhysicalConstants& consts,
                            const StaticField& field) {
  validate_constants(consts);
  validate_field(field);
  const auto ops = spin1_operators();
  const double b = consts.gamma_e_MHz_per_mT * field.B_mT;
  return consts.D_MHz * ops.sz * ops.sz +
         b * (std::sin(field.theta_rad) * ops.sx +
              std::cos(field.theta_rad) * ops.sz);
}

LabeledEigensystem eigensystem(const Matrix3c& h,
                               const PhysicalConstants& consts,
                               const StaticField& field) {
  validate_constants(consts);
  validate_field(field);
  // the closed form solves the constructed Hamiltonian; use it only when the
  // input is that matrix (window absorbs degree->radian conversion noise)
  if (std::abs(field.theta_rad - 0.5 * std::numbers::pi) < 1e-12) {
    const Matrix3c built = ground_hamiltonian(consts, field);
    const double scale = std::max(1.0, built.cwiseAbs().maxCoeff());
    if ((h - built).cwiseAbs().maxCoeff() <= 1e-12 * scale)
      return solve_perpendicular(consts, field);
  }
  return solve_general(h);
}

LabeledEigensystem eigensystem(const PhysicalConstants& consts,
                               const StaticField& field) {
  return eigensystem(ground_hamiltonian(consts, field), consts, field);
}

LabeledEigensystem eigensystem(const Matrix3c& h) { return solve_general(h); }

std::array<Transition, 3> transitions(const LabeledEigensystem& sys) {
  const auto ops = spin1_operators();
  const int iz = sys.index_of_zero_like();
  const int im = sys.index_of_minus();
  const int ip = sys.index_of_plus_like();

  std::array<Transition, 3> out;
  const std::array<std::pair<int, int>, 3> pairs{
      {{iz, im}, {iz, ip}, {im, ip}}};
  for (int k = 0; k < 3; ++k) {
    int lo = pairs[k].first, hi = pairs[k].second;
    if (sys.levels_MHz[lo] > sys.levels_MHz[hi]) std::swap(lo, hi);
    Transition tr;
    tr.from = sys.labels[lo];
    tr.to = sys.labels[hi];
    tr.frequency_MHz = sys.levels_MHz[hi] - sys.levels_MHz[lo];
    tr.dipole(0) = sys.states[lo].dot(ops.sx * sys.states[hi]);
    tr.dipole(1) = sys.states[lo].dot(ops.sy * sys.states[hi]);
    tr.dipole(2) = sys.states[lo].dot(ops.sz * sys.states[hi]);
    out[k] = tr;
  }
  return out;
}

std::vector<AnticrossingPoint> anticrossing_scan(
    const PhysicalConstants& consts, double B_mT,
    const std::vector<double>& theta_grid) {
  if (theta_grid.empty())
    throw ComputationError("anticrossing scan needs a non-empty angle grid");
  std::vector<AnticrossingPoint> out;
  out.reserve(theta_grid.size());
  for (double th : theta_grid) {
    const Matrix3c h = ground_hamiltonian(consts, {B_mT, th});
    Eigen::SelfAdjointEigenSolver<Matrix3c> solver(h);
    if (solver.info() != Eigen::Success)
      throw ComputationError("eigendecomposition failed to converge");
    AnticrossingPoint p;
    p.theta_rad = th;
    for (int i = 0; i < 3; ++i) p.levels_MHz[i] = solver.eigenvalues()(i);
    p.gap_MHz = p.levels_MHz[2] - p.levels_MHz[1];
    out.push_back(p);
  }
  return out;
}

}  // namespace nvac
