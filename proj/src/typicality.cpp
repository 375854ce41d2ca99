#include "leafkit/typicality.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace leafkit {

int ShellReport::shell_of(int index) const {
  for (int s = 0; s < static_cast<int>(shell_bounds.size()); ++s)
    if (index >= shell_bounds[s].first && index < shell_bounds[s].second) return s;
  throw InvalidParameter("shell_of: index outside all shells");
}

int default_shell_size(int d) {
  return std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(d)))));
}

std::vector<std::pair<int, int>> shell_partition(int d, int shell_size) {
  if (d < 1) throw InvalidParameter("shell_partition: d must be >= 1");
  if (shell_size < 1 || shell_size > d)
    throw InvalidParameter("shell_partition: shell_size must be in 1..d");
  std::vector<std::pair<int, int>> shells;
  for (int begin = 0; begin < d; begin += shell_size)
    shells.emplace_back(begin, std::min(begin + shell_size, d));
  return shells;
}

namespace {

std::vector<double> values_from_columns(const Leaf& leaf, const Matrix& o_states) {
  std::vector<double> values(leaf.dim());
  for (int i = 0; i < leaf.dim(); ++i) {
    if (!leaf.reliable(i)) {
      values[i] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    values[i] = leaf.states().col(i).dot(o_states.col(i)).real();
  }
  return values;
}

}  // namespace

std::vector<double> shell_values(const Leaf& leaf, const HermitianOperator& o) {
  if (o.dim() != leaf.dim()) throw InvalidParameter("shell_values: dimension mismatch");
  return values_from_columns(leaf, o.matrix() * leaf.states());
}

std::vector<double> shell_values(const Leaf& leaf, int length, const PauliFactors& factors) {
  if ((1 << length) != leaf.dim())
    throw InvalidParameter("shell_values: chain length does not match leaf dimension");
  return values_from_columns(leaf, apply_pauli(length, factors, leaf.states()));
}

std::pair<ShellReport, std::vector<DiagnosticsCurve>> diagnostics(
    const Leaf& leaf, const ObservableCatalog& catalog, int shell_size,
    const std::vector<double>& delta_grid, int delta_points) {
  if (!delta_grid.empty()) {
    if (delta_grid.front() != 0.0)
      throw InvalidParameter("diagnostics: delta grid must start at 0");
    for (size_t i = 0; i + 1 < delta_grid.size(); ++i)
      if (delta_grid[i] > delta_grid[i + 1])
        throw InvalidParameter("diagnostics: delta grid must be ascending");
  }
  if (delta_points < 2) throw InvalidParameter("diagnostics: delta_points must be >= 2");

  const int d = leaf.dim();
  ShellReport report;
  report.dim = d;
  report.shell_size = shell_size;
  report.shell_bounds = shell_partition(d, shell_size);
  report.mask_count = static_cast<int>(leaf.unreliable().size());
  report.shell_mean_energy.resize(report.shell_bounds.size());
  for (size_t s = 0; s < report.shell_bounds.size(); ++s) {
    const auto [begin, end] = report.shell_bounds[s];
    report.shell_mean_energy[s] =
        leaf.energies().segment(begin, end - begin).mean();
  }

  const double ratio = incoherence_ratio(leaf);
  const double log_d = std::log(static_cast<double>(d));

  std::vector<DiagnosticsCurve> curves;
  for (int oi = 0; oi < catalog.size(); ++oi) {
    const std::string& label = catalog.label(oi);
    ShellReport::ObservableStats stats;
    stats.values = shell_values(leaf, catalog.length(), catalog.factors(oi));

    stats.f.resize(report.shell_bounds.size());
    stats.deviations.assign(d, std::numeric_limits<double>::quiet_NaN());
    for (size_t s = 0; s < report.shell_bounds.size(); ++s) {
      const auto [begin, end] = report.shell_bounds[s];
      double sum = 0.0;
      int n = 0;
      for (int i = begin; i < end; ++i) {
        if (std::isnan(stats.values[i])) continue;
        sum += stats.values[i];
        ++n;
      }
      stats.f[s] = n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
      for (int i = begin; i < end; ++i)
        if (!std::isnan(stats.values[i]))
          stats.deviations[i] = std::abs(stats.values[i] - stats.f[s]);
    }

    DiagnosticsCurve curve;
    curve.observable_label = label;
    curve.incoherence_ratio = ratio;
    if (delta_grid.empty()) {
      double max_dev = 0.0;
      for (double dev : stats.deviations)
        if (!std::isnan(dev)) max_dev = std::max(max_dev, dev);
      curve.deltas.resize(delta_points);
      for (int k = 0; k < delta_points; ++k)
        curve.deltas[k] = max_dev * k / (delta_points - 1);
    } else {
      curve.deltas = delta_grid;
    }
    curve.counts.resize(curve.deltas.size());
    curve.log_d_counts.resize(curve.deltas.size());
    for (size_t k = 0; k < curve.deltas.size(); ++k) {
      long n = 0;
      for (double dev : stats.deviations)
        if (!std::isnan(dev) && dev > curve.deltas[k]) ++n;
      curve.counts[k] = n;
      curve.log_d_counts[k] = n > 0 ? std::log(static_cast<double>(n)) / log_d
                                    : std::numeric_limits<double>::quiet_NaN();
    }
    curves.push_back(std::move(curve));

    report.labels.push_back(label);
    report.per_observable[label] = std::move(stats);
  }
  return {std::move(report), std::move(curves)};
}

double incoherence_ratio(const Leaf& leaf) {
  if (leaf.dim() == 1) return 1.0;
  return incoherence(leaf) / std::log(static_cast<double>(leaf.dim()));
}

void write_curve_csv(const DiagnosticsCurve& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "delta,N,log_d_N\n";
  char buf[64];
  for (size_t k = 0; k < curve.deltas.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.17g", curve.deltas[k]);
    out << buf << "," << curve.counts[k] << ",";
    if (curve.counts[k] > 0) {
      std::snprintf(buf, sizeof(buf), "%.17g", curve.log_d_counts[k]);
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace leafkit
