#include "leafkit/operator_core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace leafkit {

namespace {

std::atomic<int> g_dense_dim_limit{1 << 14};

void check_dense_budget(int dim) {
  if (dim > g_dense_dim_limit.load()) {
    std::ostringstream msg;
    msg << "dense allocation of dimension " << dim << " exceeds the limit "
        << g_dense_dim_limit.load() << " (raise it with set_dense_dim_limit)";
    throw InvalidParameter(msg.str());
  }
}

void check_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() < 1)
    throw InvalidParameter(std::string(what) + ": matrix must be square with dim >= 1");
}

}  // namespace

int dense_dim_limit() { return g_dense_dim_limit.load(); }
void set_dense_dim_limit(int limit) { g_dense_dim_limit.store(limit); }

// --- HermitianOperator -------------------------------------------------------

HermitianOperator::HermitianOperator(Matrix entries, double tol_herm)
    : entries_(std::move(entries)) {
  check_square(entries_, "HermitianOperator");
  check_dense_budget(dim());
  const double scale = entries_.cwiseAbs().maxCoeff();
  const double dev = (entries_ - entries_.adjoint()).cwiseAbs().maxCoeff();
  if (dev > tol_herm * scale) {
    std::ostringstream msg;
    msg << "matrix is not Hermitian: max |A - A^dagger| = " << dev
        << " exceeds " << tol_herm << " * max|entry| = " << tol_herm * scale;
    throw InvalidOperator(msg.str());
  }
}

HermitianOperator HermitianOperator::identity(int dim) {
  return HermitianOperator(Matrix::Identity(dim, dim));
}

// --- spectral decomposition --------------------------------------------------

void fix_eigenvector_phases(Matrix& v) {
  for (int c = 0; c < v.cols(); ++c) {
    int k = 0;
    double best = std::abs(v(0, c));
    for (int i = 1; i < v.rows(); ++i) {
      const double a = std::abs(v(i, c));
      if (a > best) {
        best = a;
        k = i;
      }
    }
    if (best > 0.0) v.col(c) *= std::conj(v(k, c)) / best;
  }
}

SpectralDecomposition spectral_decompose(const HermitianOperator& a, double /*tol_herm*/) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a.matrix());
  if (solver.info() != Eigen::Success)
    throw NumericalError("eigensolver failed to converge");
  SpectralDecomposition out;
  out.eigenvalues = solver.eigenvalues();
  out.eigenvectors = solver.eigenvectors();
  fix_eigenvector_phases(out.eigenvectors);
  return out;
}

// --- DensityMatrix -----------------------------------------------------------

DensityMatrix::DensityMatrix(Matrix entries, double rank_floor)
    : dim_(static_cast<int>(entries.rows())), rank_floor_(rank_floor) {
  // Route through HermitianOperator for the structural checks.
  HermitianOperator op(std::move(entries));
  const double trace = op.matrix().trace().real();
  if (std::abs(trace - 1.0) > tol::trace_abs) {
    std::ostringstream msg;
    msg << "density matrix trace " << trace << " deviates from 1 beyond " << tol::trace_abs;
    throw InvalidOperator(msg.str());
  }
  numeric_ = spectral_decompose(op);
  if (numeric_->eigenvalues(0) < -tol::positivity_abs) {
    std::ostringstream msg;
    msg << "density matrix has negative eigenvalue " << numeric_->eigenvalues(0);
    throw InvalidOperator(msg.str());
  }
  dense_ = op.matrix();
}

DensityMatrix::DensityMatrix(SpectralDecomposition analytic_form, double rank_floor)
    : dim_(analytic_form.dim()), rank_floor_(rank_floor) {
  const RealVector& p = analytic_form.eigenvalues;
  if (p.size() < 1 || analytic_form.eigenvectors.rows() != p.size() ||
      analytic_form.eigenvectors.cols() != p.size())
    throw InvalidParameter("analytic spectral form has inconsistent dimensions");
  if (p.minCoeff() < -tol::positivity_abs)
    throw InvalidOperator("analytic populations must be nonnegative");
  if (std::abs(p.sum() - 1.0) > tol::trace_abs)
    throw InvalidOperator("analytic populations must sum to 1");
  for (int i = 0; i + 1 < p.size(); ++i)
    if (p(i) > p(i + 1)) throw InvalidParameter("analytic populations must be ascending");
  analytic_ = std::move(analytic_form);
}

DensityMatrix DensityMatrix::maximally_mixed(int dim) {
  if (dim < 1) throw InvalidParameter("maximally_mixed: dim must be >= 1");
  check_dense_budget(dim);
  SpectralDecomposition s;
  s.eigenvalues = RealVector::Constant(dim, 1.0 / dim);
  s.eigenvectors = Matrix::Identity(dim, dim);
  return DensityMatrix(std::move(s));
}

const Matrix& DensityMatrix::matrix() const {
  if (!dense_) {
    Matrix m = analytic_->reconstruct();
    dense_ = 0.5 * (m + m.adjoint().eval());
  }
  return *dense_;
}

const SpectralDecomposition& DensityMatrix::spectral() const {
  return analytic_ ? *analytic_ : *numeric_;
}

bool DensityMatrix::full_rank() const {
  const RealVector& lam = spectral().eigenvalues;
  if (analytic_) return lam(0) > 0.0;  // analytic populations are exact
  const double lmax = lam(lam.size() - 1);
  if (lmax <= 0.0) return false;
  return lam(0) / lmax > rank_floor_;
}

// --- PureState ---------------------------------------------------------------

PureState::PureState(Vector amplitudes) : amplitudes_(std::move(amplitudes)) {
  if (amplitudes_.size() < 1) throw InvalidParameter("PureState: dim must be >= 1");
  const double norm = amplitudes_.norm();
  if (std::abs(norm - 1.0) > tol::unit_norm_abs) {
    std::ostringstream msg;
    msg << "pure state norm " << norm << " deviates from 1 beyond " << tol::unit_norm_abs;
    throw InvalidParameter(msg.str());
  }
}

// --- ScalarMap / matrix_function ----------------------------------------------

ScalarMap ScalarMap::exp_neg_beta(double beta) {
  if (!std::isfinite(beta)) throw InvalidParameter("exp_neg_beta: beta must be finite");
  ScalarMap m(Kind::ExpNegBeta);
  m.beta_ = beta;
  return m;
}

ScalarMap ScalarMap::projector(double window_lo, double window_hi) {
  if (!(window_lo <= window_hi))
    throw InvalidParameter("projector: window must satisfy lo <= hi");
  ScalarMap m(Kind::Projector);
  m.lo_ = window_lo;
  m.hi_ = window_hi;
  return m;
}

double ScalarMap::operator()(double x) const {
  switch (kind_) {
    case Kind::Sqrt:
      return std::sqrt(x);
    case Kind::ExpNegBeta:
      return std::exp(-beta_ * x);
    case Kind::Log:
      return std::log(x);
    case Kind::Projector:
      return (x >= lo_ && x <= hi_) ? 1.0 : 0.0;
  }
  return 0.0;
}

HermitianOperator matrix_function(const SpectralDecomposition& s, const ScalarMap& f) {
  if (f.requires_positive_spectrum() && s.eigenvalues(0) <= 0.0) {
    std::ostringstream msg;
    msg << "scalar map requires a positive spectrum but min eigenvalue is "
        << s.eigenvalues(0);
    throw DomainError(msg.str());
  }
  RealVector mapped(s.dim());
  for (int i = 0; i < s.dim(); ++i) mapped(i) = f(s.eigenvalues(i));
  Matrix m = s.eigenvectors * mapped.asDiagonal() * s.eigenvectors.adjoint();
  return HermitianOperator(0.5 * (m + m.adjoint().eval()));
}

// --- Boltzmann states ---------------------------------------------------------

RealVector gibbs_weights(const RealVector& energies, double beta) {
  if (!std::isfinite(beta)) throw InvalidParameter("gibbs_weights: beta must be finite");
  // Shift so all exponents are <= 0: reference at E_min for beta >= 0, E_max otherwise.
  const double e_ref = beta >= 0.0 ? energies.minCoeff() : energies.maxCoeff();
  RealVector w(energies.size());
  double z = 0.0;
  for (int i = 0; i < energies.size(); ++i) {
    w(i) = std::exp(-beta * (energies(i) - e_ref));
    z += w(i);
  }
  return w / z;
}

DensityMatrix boltzmann_state(const HermitianOperator& h0, double beta) {
  if (!std::isfinite(beta)) throw InvalidParameter("boltzmann_state: beta must be finite");
  return boltzmann_state(spectral_decompose(h0), beta);
}

DensityMatrix boltzmann_state(const SpectralDecomposition& h0_spec, double beta,
                              double rank_floor) {
  if (!std::isfinite(beta)) throw InvalidParameter("boltzmann_state: beta must be finite");
  const RealVector pops = gibbs_weights(h0_spec.eigenvalues, beta);
  // Reorder ascending in population (stable, so degenerate levels keep the
  // deterministic order inherited from the energy decomposition).
  std::vector<int> idx(pops.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return pops(a) < pops(b); });
  SpectralDecomposition form;
  form.eigenvalues.resize(pops.size());
  form.eigenvectors.resize(h0_spec.eigenvectors.rows(), h0_spec.eigenvectors.cols());
  for (int i = 0; i < pops.size(); ++i) {
    form.eigenvalues(i) = pops(idx[i]);
    form.eigenvectors.col(i) = h0_spec.eigenvectors.col(idx[i]);
  }
  return DensityMatrix(std::move(form), rank_floor);
}

// --- Pauli strings -------------------------------------------------------------

namespace {

void check_pauli_args(int length, const PauliFactors& factors) {
  if (length < 1) throw InvalidParameter("pauli_string: length must be >= 1");
  if (length > 30) throw InvalidParameter("pauli_string: length too large");
  for (const auto& [site, axis] : factors) {
    (void)axis;
    if (site < 1 || site > length) {
      std::ostringstream msg;
      msg << "pauli_string: site " << site << " out of range 1.." << length;
      throw InvalidParameter(msg.str());
    }
  }
}

}  // namespace

void add_pauli_string(Matrix& acc, int length, const PauliFactors& factors, double coeff) {
  check_pauli_args(length, factors);
  const long d = 1L << length;
  if (acc.rows() != d || acc.cols() != d)
    throw InvalidParameter("add_pauli_string: accumulator has wrong dimension");
  // Site l acts on bit (length - l): site 1 is the most significant bit, so the
  // matrix equals the Kronecker product ordered site 1 (x) site 2 (x) ...
  long flip_mask = 0;
  long y_mask = 0, z_mask = 0;
  for (const auto& [site, axis] : factors) {
    const long bit = 1L << (length - site);
    if (axis != PauliAxis::Z) flip_mask |= bit;
    if (axis == PauliAxis::Y) y_mask |= bit;
    if (axis == PauliAxis::Z) z_mask |= bit;
  }
  for (long col = 0; col < d; ++col) {
    const long row = col ^ flip_mask;
    // sign from z factors: product of (1 - 2*bit)
    int negs = __builtin_popcountll(col & z_mask);
    // y factors contribute i * (1 - 2*bit)
    const int ny = __builtin_popcountll(static_cast<unsigned long long>(y_mask));
    negs += __builtin_popcountll(col & y_mask);
    Complex val(coeff, 0.0);
    switch (ny & 3) {  // i^ny
      case 0: break;
      case 1: val *= Complex(0.0, 1.0); break;
      case 2: val *= -1.0; break;
      case 3: val *= Complex(0.0, -1.0); break;
    }
    if (negs & 1) val = -val;
    acc(row, col) += val;
  }
}

HermitianOperator pauli_string(int length, const PauliFactors& factors) {
  check_pauli_args(length, factors);
  const long d = 1L << length;
  check_dense_budget(static_cast<int>(d));
  Matrix m = Matrix::Zero(d, d);
  add_pauli_string(m, length, factors, 1.0);
  return HermitianOperator(std::move(m));
}

Matrix apply_pauli(int length, const PauliFactors& factors, const Matrix& in) {
  check_pauli_args(length, factors);
  const long d = 1L << length;
  if (in.rows() != d) throw InvalidParameter("apply_pauli: dimension mismatch");
  long flip_mask = 0, y_mask = 0, z_mask = 0;
  for (const auto& [site, axis] : factors) {
    const long bit = 1L << (length - site);
    if (axis != PauliAxis::Z) flip_mask |= bit;
    if (axis == PauliAxis::Y) y_mask |= bit;
    if (axis == PauliAxis::Z) z_mask |= bit;
  }
  const int ny = __builtin_popcountll(static_cast<unsigned long long>(y_mask));
  Matrix out(in.rows(), in.cols());
  for (long col = 0; col < d; ++col) {
    // out_row = P_{row,col} in_col with row = col ^ flip_mask; P has one nonzero per column
    const long row = col ^ flip_mask;
    int negs = __builtin_popcountll(col & z_mask) + __builtin_popcountll(col & y_mask);
    Complex val(1.0, 0.0);
    switch (ny & 3) {
      case 0: break;
      case 1: val = Complex(0.0, 1.0); break;
      case 2: val = -1.0; break;
      case 3: val = Complex(0.0, -1.0); break;
    }
    if (negs & 1) val = -val;
    out.row(row) = val * in.row(col);
  }
  return out;
}

// --- Gell-Mann matrices ---------------------------------------------------------

HermitianOperator gell_mann(int j) {
  if (j < 1 || j > 8) throw InvalidParameter("gell_mann: index must be in 1..8");
  Matrix m = Matrix::Zero(3, 3);
  const Complex i(0.0, 1.0);
  switch (j) {
    case 1: m(0, 1) = 1; m(1, 0) = 1; break;
    case 2: m(0, 1) = -i; m(1, 0) = i; break;
    case 3: m(0, 0) = 1; m(1, 1) = -1; break;
    case 4: m(0, 2) = 1; m(2, 0) = 1; break;
    case 5: m(0, 2) = -i; m(2, 0) = i; break;
    case 6: m(1, 2) = 1; m(2, 1) = 1; break;
    case 7: m(1, 2) = -i; m(2, 1) = i; break;
    case 8:
      m(0, 0) = 1; m(1, 1) = 1; m(2, 2) = -2;
      m /= std::sqrt(3.0);
      break;
  }
  return HermitianOperator(std::move(m));
}

// --- expectation values -----------------------------------------------------------

namespace {

double take_real(Complex value, double scale, const char* what) {
  const double bound = tol::imag_residue * std::max(1.0, scale);
  if (std::abs(value.imag()) > bound) {
    std::ostringstream msg;
    msg << what << ": imaginary residue " << value.imag() << " exceeds " << bound;
    throw NumericalError(msg.str());
  }
  return value.real();
}

}  // namespace

double expectation(const HermitianOperator& o, const DensityMatrix& rho) {
  if (o.dim() != rho.dim()) throw InvalidParameter("expectation: dimension mismatch");
  // tr[rho O] = sum_ik rho_ik O_ki
  const Complex tr = (rho.matrix().transpose().cwiseProduct(o.matrix())).sum();
  return take_real(tr, o.frobenius_norm(), "expectation");
}

double expectation(const HermitianOperator& o, const PureState& psi) {
  if (o.dim() != psi.dim()) throw InvalidParameter("expectation: dimension mismatch");
  const Complex val = psi.amplitudes().dot(o.matrix() * psi.amplitudes());
  return take_real(val, o.frobenius_norm(), "expectation");
}

double variance(const HermitianOperator& h, const PureState& psi) {
  if (h.dim() != psi.dim()) throw InvalidParameter("variance: dimension mismatch");
  const Vector hpsi = h.matrix() * psi.amplitudes();
  const double mean = take_real(psi.amplitudes().dot(hpsi), h.frobenius_norm(), "variance");
  double var = hpsi.squaredNorm() - mean * mean;
  if (var < 0.0) {
    if (var < -tol::variance_clamp * std::max(1.0, mean * mean))
      throw NumericalError("variance: negative beyond clamp window");
    var = 0.0;
  }
  return var;
}

}  // namespace leafkit
