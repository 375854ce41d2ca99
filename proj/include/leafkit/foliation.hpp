#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "leafkit/operator_core.hpp"

namespace leafkit {

struct FoliationOptions {
  // Minimum relative gap of the state Hamiltonian below which the optimal
  // family is treated as non-unique.
  double gap_tol = tol::gap_rel;
  // false: throw DegenerateStateHamiltonian; true: proceed with the
  // decomposer's basis choice and mark the leaf non-unique.
  bool allow_degenerate = false;
  // Members with population below this are flagged unreliable (their state
  // vector would be a quotient of vanishing quantities) and masked from
  // typicality statistics.
  double population_floor = tol::population_floor;
};

// The optimal minimum-variance ensemble of a density matrix together with the
// state Hamiltonian that generates it. Members are ordered by ascending energy.
class Leaf {
 public:
  Leaf(Matrix h_rho, RealVector energies, RealVector populations, Matrix states,
       Matrix psi, double source_energy, bool unique, std::vector<int> unreliable);

  int dim() const { return static_cast<int>(energies_.size()); }
  // The state Hamiltonian H_rho in the original basis.
  const Matrix& h_rho() const { return h_rho_; }
  const RealVector& energies() const { return energies_; }
  const RealVector& populations() const { return populations_; }
  // Columns are the optimal family members (generally non-orthogonal).
  const Matrix& states() const { return states_; }
  PureState state(int i) const;
  // Columns are the eigenvectors of H_rho.
  const Matrix& psi() const { return psi_; }
  double source_energy() const { return source_energy_; }
  bool unique() const { return unique_; }
  const std::vector<int>& unreliable() const { return unreliable_; }
  bool reliable(int i) const;

  // Same family with new populations (normalized); the populations of the
  // returned leaf are q, not re-derived from a density matrix.
  Leaf with_populations(const RealVector& q) const;

 private:
  Matrix h_rho_;
  RealVector energies_;
  RealVector populations_;
  Matrix states_;
  Matrix psi_;
  double source_energy_;
  bool unique_;
  std::vector<int> unreliable_;
};

// Analytic description of a qubit leaf: a chord of the Bloch ball parallel to
// the z axis, specified by the unit Bloch vector of one endpoint.
struct QubitLeafGeometry {
  Eigen::Vector3d n_hat;
  Eigen::Vector3d endpoint_plus;   // endpoint with nonnegative z component
  Eigen::Vector3d endpoint_minus;  // its reflection through the xy plane
  double transverse_norm;          // |n x z|
  double barycenter_entropy;       // nats
};

// --- operations -------------------------------------------------------------

// H_rho solving (1/2){H_rho, rho} = sqrt(rho) H sqrt(rho). Solved entrywise in
// the eigenbasis of rho where the equation decouples with a bounded prefactor.
HermitianOperator state_hamiltonian(const DensityMatrix& rho, const HermitianOperator& h);

Leaf optimal_ensemble(const DensityMatrix& rho, const HermitianOperator& h,
                      const FoliationOptions& opt = {});

// Commuting-leaf fast path: the optimal family of rho = I/d is the eigenbasis
// of H itself, so no second decomposition is needed.
Leaf commuting_leaf(const SpectralDecomposition& h_spec, const FoliationOptions& opt = {});

// Quantum Fisher information of rho with respect to H, closed spectral form
// 2 sum_{kl} (l_k - l_l)^2/(l_k + l_l) |<k|H|l>|^2. Tolerates rank deficiency.
double qfi(const DensityMatrix& rho, const HermitianOperator& h);

// sum_i p_i Var_{phi_i}(H); equals qfi/4 on the source state's leaf.
double average_variance(const Leaf& leaf, const HermitianOperator& h);

// Brute-force minimum of the ensemble-averaged variance over `samples` random
// pure-state decompositions (Haar mixing of the optimal decomposition).
// Test-scale only (d <= 8).
double decomposition_variance_oracle(const DensityMatrix& rho, const HermitianOperator& h,
                                     int samples, std::uint64_t seed);

// Uniform-population state of the leaf, (1/d) sum_i |phi_i><phi_i|.
DensityMatrix barycenter(const Leaf& leaf);

// Von Neumann entropy of the barycenter, nats; in [0, log d], maximal exactly
// on the commuting leaf.
double incoherence(const Leaf& leaf);

// Shannon entropy of the populations, nats.
double leaf_entropy(const Leaf& leaf);

// Gibbs-weighted state on the leaf, populations ~ exp(-beta E_i).
DensityMatrix leaf_canonical(const Leaf& leaf, double beta);

// Uniform weights on the members with energy inside [e_lo, e_hi].
DensityMatrix leaf_microcanonical(const Leaf& leaf, double e_lo, double e_hi);

// sum_i q_i |phi_i><phi_i| with q = normalized new_populations.
DensityMatrix leaf_transport(const Leaf& leaf, const RealVector& new_populations);

// Minimum consecutive eigenvalue gap divided by the spectral width (0 if the
// width is 0).
double nondegeneracy_gap(const HermitianOperator& h_rho);
double nondegeneracy_gap(const RealVector& ascending_eigenvalues);

QubitLeafGeometry qubit_leaf_geometry(const Eigen::Vector3d& n_hat);

// Binary entropy -x log x - (1-x) log(1-x) in nats, with H1(0) = H1(1) = 0.
double binary_entropy(double x);

// Shannon entropy of a nonnegative vector summing to ~1, nats (0 log 0 = 0).
double shannon_entropy(const RealVector& p);

// --- serialization ----------------------------------------------------------

// Writes <prefix>leaf.json plus QMAT1 blobs <prefix>h_rho.qmat and
// <prefix>states.qmat; `extra` is merged into the JSON manifest (may be empty).
void write_leaf(const Leaf& leaf, const std::string& prefix, const std::string& extra_json);

}  // namespace leafkit
