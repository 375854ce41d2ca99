#pragma once

#include <complex>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "leafkit/errors.hpp"

namespace leafkit {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

// Default tolerances. All of them can be overridden at the call or type level;
// the values here are the library-wide defaults.
namespace tol {
inline constexpr double herm_rel = 1e-12;        // hermiticity, relative to max |entry|
inline constexpr double trace_abs = 1e-12;       // density-matrix trace
inline constexpr double positivity_abs = 1e-12;  // density-matrix eigenvalue floor
inline constexpr double rank_floor = 1e-14;      // full-rank threshold on lambda_min/lambda_max
inline constexpr double unit_norm_abs = 1e-12;   // pure-state normalization
inline constexpr double imag_residue = 1e-10;    // expectation-value imaginary part
inline constexpr double variance_clamp = 1e-12;  // negative-variance clamp window
inline constexpr double gap_rel = 1e-10;         // state-Hamiltonian nondegeneracy gap
inline constexpr double population_floor = 1e-300;  // below this a leaf member is unreliable
}  // namespace tol

// Dense allocations above this dimension are refused unless the override is set.
int dense_dim_limit();
void set_dense_dim_limit(int limit);

// Dense complex matrix with enforced Hermiticity.
class HermitianOperator {
 public:
  explicit HermitianOperator(Matrix entries, double tol_herm = tol::herm_rel);

  int dim() const { return static_cast<int>(entries_.rows()); }
  const Matrix& matrix() const { return entries_; }
  double frobenius_norm() const { return entries_.norm(); }

  static HermitianOperator identity(int dim);

 private:
  Matrix entries_;
};

// Ascending eigenvalues with orthonormal eigenvector columns.
struct SpectralDecomposition {
  RealVector eigenvalues;
  Matrix eigenvectors;

  int dim() const { return static_cast<int>(eigenvalues.size()); }
  Matrix reconstruct() const {
    return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.adjoint();
  }
};

// Positive unit-trace Hermitian operator. Two construction paths:
//  - numeric: a dense matrix, eagerly decomposed to validate trace/positivity;
//  - analytic: a trusted spectral form (populations ascending + eigenvectors),
//    e.g. derived from a Hamiltonian decomposition for Boltzmann states. The
//    analytic eigenvalues are exact by construction, so tiny populations far
//    below the numeric rank floor remain meaningful.
class DensityMatrix {
 public:
  explicit DensityMatrix(Matrix entries, double rank_floor = tol::rank_floor);
  explicit DensityMatrix(SpectralDecomposition analytic_form,
                         double rank_floor = tol::rank_floor);

  static DensityMatrix maximally_mixed(int dim);

  int dim() const { return dim_; }
  // Dense entries; materialized from the spectral form on first use.
  const Matrix& matrix() const;
  const SpectralDecomposition& spectral() const;
  bool has_analytic_form() const { return analytic_.has_value(); }
  bool full_rank() const;
  double rank_floor() const { return rank_floor_; }

 private:
  int dim_;
  double rank_floor_;
  std::optional<SpectralDecomposition> analytic_;
  std::optional<SpectralDecomposition> numeric_;
  mutable std::optional<Matrix> dense_;
};

class PureState {
 public:
  explicit PureState(Vector amplitudes);

  int dim() const { return static_cast<int>(amplitudes_.size()); }
  const Vector& amplitudes() const { return amplitudes_; }

 private:
  Vector amplitudes_;
};

// Scalar map applied to a spectrum through matrix_function.
class ScalarMap {
 public:
  enum class Kind { Sqrt, ExpNegBeta, Log, Projector };

  static ScalarMap sqrt() { return ScalarMap(Kind::Sqrt); }
  static ScalarMap exp_neg_beta(double beta);
  static ScalarMap log() { return ScalarMap(Kind::Log); }
  static ScalarMap projector(double window_lo, double window_hi);

  Kind kind() const { return kind_; }
  bool requires_positive_spectrum() const {
    return kind_ == Kind::Sqrt || kind_ == Kind::Log;
  }
  double operator()(double x) const;

 private:
  explicit ScalarMap(Kind kind) : kind_(kind) {}
  Kind kind_;
  double beta_ = 0.0;
  double lo_ = 0.0;
  double hi_ = 0.0;
};

enum class PauliAxis { X, Y, Z };

// site -> axis assignment of a Pauli string; empty means identity
using PauliFactors = std::map<int, PauliAxis>;

// --- operations -------------------------------------------------------------

// Eigendecomposition with a deterministic phase convention: the largest-magnitude
// component of each eigenvector is made real and positive (ties: lowest index).
SpectralDecomposition spectral_decompose(const HermitianOperator& a,
                                         double tol_herm = tol::herm_rel);

// Applies the phase convention above to every column of v, in place.
void fix_eigenvector_phases(Matrix& v);

// V f(Lambda) V^dagger
HermitianOperator matrix_function(const SpectralDecomposition& s, const ScalarMap& f);

// exp(-beta H0)/Z with the spectral form carried analytically from H0's
// decomposition; log-sum-exp stabilized.
DensityMatrix boltzmann_state(const HermitianOperator& h0, double beta);
DensityMatrix boltzmann_state(const SpectralDecomposition& h0_spec, double beta,
                              double rank_floor = tol::rank_floor);

// Gibbs weights exp(-beta e_i)/Z for an energy list, log-sum-exp stabilized.
RealVector gibbs_weights(const RealVector& energies, double beta);

// Tensor-product embedding of single-site Pauli matrices on a chain of `length`
// sites. Site 1 is the leftmost (most significant) tensor factor.
HermitianOperator pauli_string(int length, const PauliFactors& factors);

// acc += coeff * (Pauli string); touches only the d nonzero entries.
void add_pauli_string(Matrix& acc, int length, const PauliFactors& factors, double coeff);

// in -> (Pauli string) * in without materializing the operator.
Matrix apply_pauli(int length, const PauliFactors& factors, const Matrix& in);

HermitianOperator gell_mann(int j);

double expectation(const HermitianOperator& o, const DensityMatrix& rho);
double expectation(const HermitianOperator& o, const PureState& psi);

double variance(const HermitianOperator& h, const PureState& psi);

}  // namespace leafkit
