#include "leafkit/foliation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "leafkit/qmat.hpp"
#include "leafkit/random.hpp"

namespace leafkit {

namespace {

void check_dims(int a, int b, const char* what) {
  if (a != b) {
    std::ostringstream msg;
    msg << what << ": dimension mismatch (" << a << " vs " << b << ")";
    throw InvalidParameter(msg.str());
  }
}

void require_full_rank(const DensityMatrix& rho, const char* what) {
  if (!rho.full_rank()) {
    std::ostringstream msg;
    msg << what << ": density matrix is rank deficient (lambda_min/lambda_max <= "
        << rho.rank_floor() << ")";
    throw RankDeficient(msg.str());
  }
}

// (H_rho)_{kl} = 2 sqrt(l_k l_l)/(l_k + l_l) H_{kl} in the eigenbasis of rho.
// The square roots are taken individually so extreme population ratios cannot
// underflow the product.
Matrix state_hamiltonian_in_eigenbasis(const RealVector& lam, const Matrix& h_tilde) {
  const int d = static_cast<int>(lam.size());
  RealVector sq(d);
  for (int i = 0; i < d; ++i) sq(i) = std::sqrt(std::max(lam(i), 0.0));
  Matrix out(d, d);
  for (int l = 0; l < d; ++l) {
    for (int k = 0; k < d; ++k) {
      const double denom = lam(k) + lam(l);
      const double factor = denom > 0.0 ? 2.0 * sq(k) * sq(l) / denom : 0.0;
      out(k, l) = factor * h_tilde(k, l);
    }
  }
  return 0.5 * (out + out.adjoint().eval());
}

}  // namespace

// --- Leaf ---------------------------------------------------------------------

Leaf::Leaf(Matrix h_rho, RealVector energies, RealVector populations, Matrix states,
           Matrix psi, double source_energy, bool unique, std::vector<int> unreliable)
    : h_rho_(std::move(h_rho)),
      energies_(std::move(energies)),
      populations_(std::move(populations)),
      states_(std::move(states)),
      psi_(std::move(psi)),
      source_energy_(source_energy),
      unique_(unique),
      unreliable_(std::move(unreliable)) {}

PureState Leaf::state(int i) const {
  if (i < 0 || i >= dim()) throw InvalidParameter("Leaf::state: index out of range");
  if (!reliable(i))
    throw InvalidParameter("Leaf::state: member " + std::to_string(i) +
                           " is flagged unreliable (population underflow)");
  return PureState(states_.col(i));
}

bool Leaf::reliable(int i) const {
  return std::find(unreliable_.begin(), unreliable_.end(), i) == unreliable_.end();
}

Leaf Leaf::with_populations(const RealVector& q) const {
  check_dims(static_cast<int>(q.size()), dim(), "with_populations");
  if (q.minCoeff() < 0.0) throw InvalidParameter("with_populations: negative population");
  const double total = q.sum();
  if (!(total > 0.0)) throw InvalidParameter("with_populations: populations sum to zero");
  for (int i : unreliable_)
    if (q(i) > 0.0)
      throw InvalidParameter("with_populations: nonzero weight on unreliable member");
  RealVector qn = q / total;
  double energy = 0.0;
  for (int i = 0; i < dim(); ++i) energy += qn(i) * energies_(i);
  return Leaf(h_rho_, energies_, std::move(qn), states_, psi_, energy, unique_, unreliable_);
}

// --- state Hamiltonian ----------------------------------------------------------

HermitianOperator state_hamiltonian(const DensityMatrix& rho, const HermitianOperator& h) {
  check_dims(rho.dim(), h.dim(), "state_hamiltonian");
  require_full_rank(rho, "state_hamiltonian");
  const SpectralDecomposition& s = rho.spectral();
  const Matrix h_tilde = s.eigenvectors.adjoint() * h.matrix() * s.eigenvectors;
  const Matrix h_rho_tilde = state_hamiltonian_in_eigenbasis(s.eigenvalues, h_tilde);
  Matrix back = s.eigenvectors * h_rho_tilde * s.eigenvectors.adjoint();
  return HermitianOperator(0.5 * (back + back.adjoint().eval()));
}

// --- optimal ensemble -----------------------------------------------------------

Leaf optimal_ensemble(const DensityMatrix& rho, const HermitianOperator& h,
                      const FoliationOptions& opt) {
  check_dims(rho.dim(), h.dim(), "optimal_ensemble");
  require_full_rank(rho, "optimal_ensemble");
  const int d = rho.dim();
  const SpectralDecomposition& s = rho.spectral();
  const RealVector& lam = s.eigenvalues;
  const Matrix& v = s.eigenvectors;

  const Matrix h_tilde = v.adjoint() * h.matrix() * v;
  const Matrix h_rho_tilde = state_hamiltonian_in_eigenbasis(lam, h_tilde);

  Eigen::SelfAdjointEigenSolver<Matrix> solver(h_rho_tilde);
  if (solver.info() != Eigen::Success)
    throw NumericalError("optimal_ensemble: eigensolver failed");
  const RealVector energies = solver.eigenvalues();
  Matrix w = solver.eigenvectors();

  const double gap = nondegeneracy_gap(energies);
  bool unique = gap >= opt.gap_tol;
  if (!unique && !opt.allow_degenerate) {
    std::ostringstream msg;
    msg << "state Hamiltonian is (near-)degenerate: relative gap " << gap << " < "
        << opt.gap_tol << "; the optimal family is not unique";
    throw DegenerateStateHamiltonian(msg.str());
  }

  // populations p_i = <Psi_i|rho|Psi_i> = sum_k lam_k |w_{ki}|^2
  RealVector populations(d);
  for (int i = 0; i < d; ++i) {
    double p = 0.0;
    for (int k = 0; k < d; ++k) p += lam(k) * std::norm(w(k, i));
    populations(i) = p;
  }

  // family members |phi_i> = sqrt(rho)|Psi_i>/sqrt(p_i), assembled in the
  // eigenbasis of rho where sqrt(rho) is diagonal
  RealVector sq(d);
  for (int k = 0; k < d; ++k) sq(k) = std::sqrt(std::max(lam(k), 0.0));
  Matrix phi_tilde(d, d);
  std::vector<int> unreliable;
  for (int i = 0; i < d; ++i) {
    if (populations(i) < opt.population_floor) {
      unreliable.push_back(i);
      phi_tilde.col(i).setZero();
      continue;
    }
    phi_tilde.col(i) = sq.asDiagonal() * w.col(i);
    phi_tilde.col(i) /= phi_tilde.col(i).norm();
  }

  Matrix states = v * phi_tilde;
  Matrix psi = v * w;
  fix_eigenvector_phases(states);
  fix_eigenvector_phases(psi);

  Matrix h_rho = v * h_rho_tilde * v.adjoint();
  h_rho = 0.5 * (h_rho + h_rho.adjoint().eval());

  // tr[rho H] = sum_k lam_k (h_tilde)_{kk}
  double source_energy = 0.0;
  for (int k = 0; k < d; ++k) source_energy += lam(k) * h_tilde(k, k).real();

  return Leaf(std::move(h_rho), energies, std::move(populations), std::move(states),
              std::move(psi), source_energy, unique, std::move(unreliable));
}

Leaf commuting_leaf(const SpectralDecomposition& h_spec, const FoliationOptions& opt) {
  const int d = h_spec.dim();
  const double gap = nondegeneracy_gap(h_spec.eigenvalues);
  const bool unique = gap >= opt.gap_tol;
  if (!unique && !opt.allow_degenerate) {
    std::ostringstream msg;
    msg << "commuting_leaf: Hamiltonian spectrum relative gap " << gap << " < " << opt.gap_tol;
    throw DegenerateStateHamiltonian(msg.str());
  }
  const RealVector populations = RealVector::Constant(d, 1.0 / d);
  const double source_energy = h_spec.eigenvalues.mean();
  return Leaf(h_spec.reconstruct(), h_spec.eigenvalues, populations, h_spec.eigenvectors,
              h_spec.eigenvectors, source_energy, unique, {});
}

// --- quantum Fisher information ---------------------------------------------------

double qfi(const DensityMatrix& rho, const HermitianOperator& h) {
  check_dims(rho.dim(), h.dim(), "qfi");
  const SpectralDecomposition& s = rho.spectral();
  const int d = rho.dim();
  const Matrix h_tilde = s.eigenvectors.adjoint() * h.matrix() * s.eigenvectors;
  double total = 0.0;
  for (int k = 0; k < d; ++k) {
    for (int l = 0; l < d; ++l) {
      const double lk = std::max(s.eigenvalues(k), 0.0);
      const double ll = std::max(s.eigenvalues(l), 0.0);
      const double denom = lk + ll;
      if (denom < tol::population_floor) continue;  // underflow floor
      const double diff = lk - ll;
      total += diff * diff / denom * std::norm(h_tilde(k, l));
    }
  }
  return 2.0 * total;
}

double average_variance(const Leaf& leaf, const HermitianOperator& h) {
  check_dims(leaf.dim(), h.dim(), "average_variance");
  const Matrix h_states = h.matrix() * leaf.states();
  double total = 0.0;
  for (int i = 0; i < leaf.dim(); ++i) {
    if (!leaf.reliable(i)) continue;  // contribution below the population floor
    const Complex mean = leaf.states().col(i).dot(h_states.col(i));
    const double var = h_states.col(i).squaredNorm() - mean.real() * mean.real();
    total += leaf.populations()(i) * std::max(var, 0.0);
  }
  return total;
}

double decomposition_variance_oracle(const DensityMatrix& rho, const HermitianOperator& h,
                                     int samples, std::uint64_t seed) {
  check_dims(rho.dim(), h.dim(), "decomposition_variance_oracle");
  const int d = rho.dim();
  if (d > 8) throw InvalidParameter("decomposition_variance_oracle: d must be <= 8");
  if (samples < 1) throw InvalidParameter("decomposition_variance_oracle: samples >= 1");

  // Reference decomposition: columns a_i = sqrt(p_i) |phi_i> of the optimal
  // ensemble. Every same-cardinality decomposition of rho is A U^T for a
  // unitary U, so Haar sampling U explores the full decomposition space.
  const Leaf leaf = optimal_ensemble(rho, h);
  Matrix a(d, d);
  for (int i = 0; i < d; ++i)
    a.col(i) = std::sqrt(leaf.populations()(i)) * leaf.states().col(i);

  Rng rng(seed);
  const Matrix& hm = h.matrix();
  double best = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    const Matrix u = haar_unitary(d, rng);
    const Matrix b = a * u.transpose();
    double avg = 0.0;
    for (int j = 0; j < d; ++j) {
      const double q = b.col(j).squaredNorm();
      if (q < 1e-30) continue;
      const Vector hb = hm * b.col(j);
      const double mean = b.col(j).dot(hb).real() / q;
      const double var = hb.squaredNorm() / q - mean * mean;
      avg += q * std::max(var, 0.0);
    }
    best = std::min(best, avg);
  }
  return best;
}

// --- barycenter and entropies -------------------------------------------------------

DensityMatrix barycenter(const Leaf& leaf) {
  if (!leaf.unreliable().empty())
    throw RankDeficient("barycenter: leaf has unreliable members");
  const int d = leaf.dim();
  Matrix m = leaf.states() * leaf.states().adjoint() / static_cast<double>(d);
  m = 0.5 * (m + m.adjoint().eval());
  // trace = sum_i |phi_i|^2 / d = 1 up to roundoff; renormalize exactly
  m /= m.trace().real();
  return DensityMatrix(std::move(m));
}

double shannon_entropy(const RealVector& p) {
  double s = 0.0;
  for (int i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) s -= p(i) * std::log(p(i));
  return s;
}

double incoherence(const Leaf& leaf) {
  if (!leaf.unreliable().empty())
    throw RankDeficient("incoherence: leaf has unreliable members");
  const int d = leaf.dim();
  // Eigenvalues of the barycenter only; skip the dense DensityMatrix checks.
  Matrix m = leaf.states() * leaf.states().adjoint() / static_cast<double>(d);
  m = 0.5 * (m + m.adjoint().eval());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("incoherence: eigensolver failed");
  RealVector mu = solver.eigenvalues().cwiseMax(0.0);
  mu /= mu.sum();
  return shannon_entropy(mu);
}

double leaf_entropy(const Leaf& leaf) { return shannon_entropy(leaf.populations()); }

// --- transport and leaf ensembles -----------------------------------------------------

DensityMatrix leaf_transport(const Leaf& leaf, const RealVector& new_populations) {
  check_dims(static_cast<int>(new_populations.size()), leaf.dim(), "leaf_transport");
  if (new_populations.minCoeff() < 0.0)
    throw InvalidParameter("leaf_transport: negative population");
  const double total = new_populations.sum();
  if (!(total > 0.0)) throw InvalidParameter("leaf_transport: populations all zero");
  for (int i : leaf.unreliable())
    if (new_populations(i) > 0.0)
      throw InvalidParameter("leaf_transport: nonzero weight on unreliable member");
  const RealVector q = new_populations / total;
  Matrix m = leaf.states() * q.asDiagonal() * leaf.states().adjoint();
  m = 0.5 * (m + m.adjoint().eval());
  m /= m.trace().real();
  return DensityMatrix(std::move(m));
}

DensityMatrix leaf_canonical(const Leaf& leaf, double beta) {
  if (!std::isfinite(beta)) throw InvalidParameter("leaf_canonical: beta must be finite");
  return leaf_transport(leaf, gibbs_weights(leaf.energies(), beta));
}

DensityMatrix leaf_microcanonical(const Leaf& leaf, double e_lo, double e_hi) {
  if (!(e_lo <= e_hi)) throw InvalidParameter("leaf_microcanonical: window lo > hi");
  RealVector q = RealVector::Zero(leaf.dim());
  int hits = 0;
  for (int i = 0; i < leaf.dim(); ++i) {
    if (leaf.energies()(i) >= e_lo && leaf.energies()(i) <= e_hi) {
      q(i) = 1.0;
      ++hits;
    }
  }
  if (hits == 0) {
    std::ostringstream msg;
    msg << "leaf_microcanonical: window [" << e_lo << ", " << e_hi
        << "] contains no leaf energies";
    throw EmptyShell(msg.str());
  }
  return leaf_transport(leaf, q);
}

// --- diagnostics helpers ------------------------------------------------------------

double nondegeneracy_gap(const RealVector& ascending_eigenvalues) {
  const int d = static_cast<int>(ascending_eigenvalues.size());
  if (d < 2) return 0.0;
  const double width = ascending_eigenvalues(d - 1) - ascending_eigenvalues(0);
  if (!(width > 0.0)) return 0.0;
  double min_gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i + 1 < d; ++i)
    min_gap = std::min(min_gap, ascending_eigenvalues(i + 1) - ascending_eigenvalues(i));
  return min_gap / width;
}

double nondegeneracy_gap(const HermitianOperator& h_rho) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(h_rho.matrix(), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success)
    throw NumericalError("nondegeneracy_gap: eigensolver failed");
  return nondegeneracy_gap(RealVector(solver.eigenvalues()));
}

double binary_entropy(double x) {
  double s = 0.0;
  if (x > 0.0) s -= x * std::log(x);
  if (x < 1.0) s -= (1.0 - x) * std::log(1.0 - x);
  return s;
}

QubitLeafGeometry qubit_leaf_geometry(const Eigen::Vector3d& n_hat) {
  if (std::abs(n_hat.norm() - 1.0) > 1e-10)
    throw InvalidParameter("qubit_leaf_geometry: n_hat must be a unit vector");
  QubitLeafGeometry g;
  g.n_hat = n_hat;
  const double nz = n_hat.z();
  g.endpoint_plus = {n_hat.x(), n_hat.y(), std::abs(nz)};
  g.endpoint_minus = {n_hat.x(), n_hat.y(), -std::abs(nz)};
  g.transverse_norm = std::hypot(n_hat.x(), n_hat.y());
  g.barycenter_entropy = binary_entropy(0.5 * (1.0 - g.transverse_norm));
  return g;
}

// --- serialization --------------------------------------------------------------------

void write_leaf(const Leaf& leaf, const std::string& prefix, const std::string& extra_json) {
  nlohmann::json manifest;
  manifest["dim"] = leaf.dim();
  manifest["energies"] = std::vector<double>(leaf.energies().data(),
                                             leaf.energies().data() + leaf.dim());
  manifest["populations"] = std::vector<double>(leaf.populations().data(),
                                                leaf.populations().data() + leaf.dim());
  manifest["source_energy"] = leaf.source_energy();
  manifest["flags"] = {{"unique", leaf.unique()}, {"unreliable_indices", leaf.unreliable()}};
  manifest["files"] = {{"h_rho", prefix + "h_rho.qmat"}, {"states", prefix + "states.qmat"}};
  if (!extra_json.empty()) {
    const nlohmann::json extra = nlohmann::json::parse(extra_json);
    for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  }
  qmat::write_file(prefix + "h_rho.qmat", leaf.h_rho(), qmat::Kind::Hermitian);
  qmat::write_file(prefix + "states.qmat", leaf.states(), qmat::Kind::Unitary);
  std::ofstream out(prefix + "leaf.json");
  if (!out) throw IoError("cannot open " + prefix + "leaf.json for writing");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + prefix + "leaf.json");
}

}  // namespace leafkit
