#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "leafkit/foliation.hpp"
#include "leafkit/spinchain.hpp"

namespace leafkit {

// Energy shells over the energy-sorted leaf plus per-observable shell averages
// f_O and deviations |<phi_i|O|phi_i> - f_O(shell(i))|. Masked (unreliable)
// indices carry NaN values and are excluded from f and the counts.
struct ShellReport {
  int dim = 0;
  int shell_size = 0;
  std::vector<std::pair<int, int>> shell_bounds;  // half-open [begin, end)
  std::vector<double> shell_mean_energy;
  struct ObservableStats {
    std::vector<double> values;      // <phi_i|O|phi_i>, ascending-energy order
    std::vector<double> f;           // one entry per shell
    std::vector<double> deviations;  // per state, NaN where masked
  };
  std::vector<std::string> labels;
  std::map<std::string, ObservableStats> per_observable;
  int mask_count = 0;

  int shell_of(int index) const;
};

// Outlier counts N_Delta over a Delta grid, with log_d N (NaN where N = 0).
struct DiagnosticsCurve {
  std::vector<double> deltas;
  std::vector<long> counts;
  std::vector<double> log_d_counts;
  std::string observable_label;
  int chain_length = 0;  // filled by the caller when known
  double beta = std::numeric_limits<double>::quiet_NaN();
  double incoherence_ratio = std::numeric_limits<double>::quiet_NaN();
};

// Consecutive blocks of shell_size; the remainder forms the final smaller shell.
std::vector<std::pair<int, int>> shell_partition(int d, int shell_size);

// <phi_i|O|phi_i> ordered by ascending leaf energy; NaN at masked indices.
std::vector<double> shell_values(const Leaf& leaf, const HermitianOperator& o);
// Same, for a Pauli observable without materializing the dense operator.
std::vector<double> shell_values(const Leaf& leaf, int length, const PauliFactors& factors);

// Full diagnostics for a catalog. If delta_grid is empty, each observable gets
// the default grid: `delta_points` uniform points from 0 to its own maximum
// deviation. A non-empty grid must be ascending and start at 0.
std::pair<ShellReport, std::vector<DiagnosticsCurve>> diagnostics(
    const Leaf& leaf, const ObservableCatalog& catalog, int shell_size,
    const std::vector<double>& delta_grid, int delta_points = 201);

double incoherence_ratio(const Leaf& leaf);

// round(sqrt(d)), the default shell size.
int default_shell_size(int d);

// CSV with columns delta,N,log_d_N (log column empty where N = 0).
void write_curve_csv(const DiagnosticsCurve& curve, const std::string& path);

}  // namespace leafkit
