#include "leafkit/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace leafkit {

namespace {

Vector phase_factors(const RealVector& energies, double t) {
  Vector phases(energies.size());
  for (int i = 0; i < energies.size(); ++i) {
    const double a = -energies(i) * t;
    phases(i) = Complex(std::cos(a), std::sin(a));
  }
  return phases;
}

}  // namespace

PureState evolve_pure(const SpectralDecomposition& h_spec, const PureState& psi, double t) {
  if (h_spec.dim() != psi.dim()) throw InvalidParameter("evolve_pure: dimension mismatch");
  if (!std::isfinite(t)) throw InvalidParameter("evolve_pure: t must be finite");
  Vector coeff = h_spec.eigenvectors.adjoint() * psi.amplitudes();
  coeff = coeff.cwiseProduct(phase_factors(h_spec.eigenvalues, t));
  Vector out = h_spec.eigenvectors * coeff;
  out /= out.norm();
  return PureState(std::move(out));
}

DensityMatrix evolve_density(const SpectralDecomposition& h_spec, const DensityMatrix& rho,
                             double t) {
  if (h_spec.dim() != rho.dim()) throw InvalidParameter("evolve_density: dimension mismatch");
  if (!std::isfinite(t)) throw InvalidParameter("evolve_density: t must be finite");
  const Vector phases = phase_factors(h_spec.eigenvalues, t);
  const Matrix u = h_spec.eigenvectors * phases.asDiagonal() * h_spec.eigenvectors.adjoint();
  Matrix out = u * rho.matrix() * u.adjoint();
  out = 0.5 * (out + out.adjoint().eval());
  out /= out.trace().real();
  return DensityMatrix(std::move(out), rho.rank_floor());
}

std::pair<int, PureState> representative_state(const Leaf& leaf) {
  return representative_state(leaf, leaf.source_energy());
}

std::pair<int, PureState> representative_state(const Leaf& leaf, double target_energy) {
  int best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < leaf.dim(); ++i) {
    if (!leaf.reliable(i)) continue;
    const double dist = std::abs(leaf.energies()(i) - target_energy);
    if (dist < best_dist) {  // strict: ties keep the smaller index
      best_dist = dist;
      best = i;
    }
  }
  if (best < 0) throw NumericalError("representative_state: no reliable members");
  return {best, leaf.state(best)};
}

std::vector<EvolutionComparison> compare_evolutions(
    const Leaf& leaf, const DensityMatrix& rho, const SpectralDecomposition& h_spec,
    const ObservableCatalog& catalog, const std::vector<double>& times,
    const ShellReport& shells) {
  const int d = leaf.dim();
  if (rho.dim() != d || h_spec.dim() != d)
    throw InvalidParameter("compare_evolutions: dimension mismatch");
  if (shells.dim != d)
    throw InvalidParameter("compare_evolutions: shell report has wrong dimension");
  if ((1 << catalog.length()) != d)
    throw InvalidParameter("compare_evolutions: catalog length does not match leaf");

  const auto [rep_index, rep_state] = representative_state(leaf);
  const int rep_shell = shells.shell_of(rep_index);
  const auto [shell_begin, shell_end] = shells.shell_bounds[rep_shell];

  // rho in the eigenbasis of H; the analytic form avoids materializing rho.
  const Matrix& vh = h_spec.eigenvectors;
  Matrix rho_tilde;
  if (rho.has_analytic_form()) {
    const Matrix q = vh.adjoint() * rho.spectral().eigenvectors;
    rho_tilde = q * rho.spectral().eigenvalues.asDiagonal() * q.adjoint();
  } else {
    rho_tilde = vh.adjoint() * rho.matrix() * vh;
  }
  const Vector rep_tilde = vh.adjoint() * rep_state.amplitudes();

  std::vector<EvolutionComparison> out;
  for (int oi = 0; oi < catalog.size(); ++oi) {
    EvolutionComparison cmp;
    cmp.observable_label = catalog.label(oi);
    cmp.times = times;
    cmp.representative_index = rep_index;
    cmp.representative_energy = leaf.energies()(rep_index);

    const Matrix o_tilde =
        vh.adjoint() * apply_pauli(catalog.length(), catalog.factors(oi), vh);

    // exact curve: tr[rho(t) O] = sum_{jk} e^{-i(E_j-E_k)t} rho~_{jk} O~_{kj}
    const Matrix weights = rho_tilde.cwiseProduct(o_tilde.transpose());

    // static band: 16th-84th percentile of the shell's t=0 values
    std::vector<double> shell_sample;
    const auto& stats = shells.per_observable.at(cmp.observable_label);
    for (int i = shell_begin; i < shell_end; ++i)
      if (!std::isnan(stats.values[i])) shell_sample.push_back(stats.values[i]);
    const double lo = percentile(shell_sample, 0.16);
    const double hi = percentile(shell_sample, 0.84);

    for (double t : times) {
      const Vector phases = phase_factors(h_spec.eigenvalues, t);
      Complex exact(0.0, 0.0);
      for (int k = 0; k < d; ++k) {
        Complex col(0.0, 0.0);
        for (int j = 0; j < d; ++j) col += phases(j) * weights(j, k);
        exact += std::conj(phases(k)) * col;
      }
      cmp.exact.push_back(exact.real());

      const Vector rep_t = rep_tilde.cwiseProduct(phases);
      const Complex rep_val = rep_t.dot(o_tilde * rep_t);
      cmp.representative.push_back(rep_val.real());

      cmp.band_low.push_back(lo);
      cmp.band_high.push_back(hi);
    }
    out.push_back(std::move(cmp));
  }
  return out;
}

std::vector<EvolutionComparison> compare_evolutions(
    const Leaf& leaf, const DensityMatrix& rho, const HermitianOperator& h,
    const ObservableCatalog& catalog, const std::vector<double>& times,
    const ShellReport& shells) {
  return compare_evolutions(leaf, rho, spectral_decompose(h), catalog, times, shells);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidParameter("percentile: empty sample");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  const double pos = q * (values.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const double frac = pos - lo;
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

void write_evolution_csv(const EvolutionComparison& cmp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "t,exact,representative,band_low,band_high\n";
  char buf[64];
  auto put = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    out << buf;
  };
  for (size_t i = 0; i < cmp.times.size(); ++i) {
    put(cmp.times[i]); out << ",";
    put(cmp.exact[i]); out << ",";
    put(cmp.representative[i]); out << ",";
    put(cmp.band_low[i]); out << ",";
    put(cmp.band_high[i]); out << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace leafkit
