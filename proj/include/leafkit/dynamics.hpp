#pragma once

#include <string>
#include <utility>
#include <vector>

#include "leafkit/foliation.hpp"
#include "leafkit/spinchain.hpp"
#include "leafkit/typicality.hpp"

namespace leafkit {

// Exact vs representative-state expectation values for one observable, plus a
// static error band taken from the representative's energy shell at t = 0.
struct EvolutionComparison {
  std::vector<double> times;
  std::string observable_label;
  std::vector<double> exact;           // tr[rho(t) O]
  std::vector<double> representative;  // <phi(t)|O|phi(t)>
  std::vector<double> band_low;
  std::vector<double> band_high;
  int representative_index = -1;
  double representative_energy = 0.0;
};

// e^{-iHt} psi via the eigenbasis of H.
PureState evolve_pure(const SpectralDecomposition& h_spec, const PureState& psi, double t);

// U rho U^dagger.
DensityMatrix evolve_density(const SpectralDecomposition& h_spec, const DensityMatrix& rho,
                             double t);

// Index (and member) minimizing |E_i - target|; ties resolve to the smaller
// index; default target is the leaf's source energy. Unreliable members are
// skipped.
std::pair<int, PureState> representative_state(const Leaf& leaf);
std::pair<int, PureState> representative_state(const Leaf& leaf, double target_energy);

// One comparison per catalog entry, in catalog order. `shells` must come from
// the same leaf (same dimension and shell layout as diagnostics would build).
std::vector<EvolutionComparison> compare_evolutions(
    const Leaf& leaf, const DensityMatrix& rho, const SpectralDecomposition& h_spec,
    const ObservableCatalog& catalog, const std::vector<double>& times,
    const ShellReport& shells);

std::vector<EvolutionComparison> compare_evolutions(
    const Leaf& leaf, const DensityMatrix& rho, const HermitianOperator& h,
    const ObservableCatalog& catalog, const std::vector<double>& times,
    const ShellReport& shells);

// CSV with columns t,exact,representative,band_low,band_high.
void write_evolution_csv(const EvolutionComparison& cmp, const std::string& path);

// Linear-interpolation percentile of an unsorted sample, q in [0, 1].
double percentile(std::vector<double> values, double q);

}  // namespace leafkit
