#pragma once

#include <string>
#include <vector>

#include "leafkit/operator_core.hpp"

namespace leafkit {

enum class Boundary { Periodic, Open };

// Spin-1/2 chain H = sum_l [ sx_l sx_{l+1} + g sx_l + h sz_l
//                            + D (sz_l sy_{l+1} - sy_l sz_{l+1}) ]
// in units of the xx coupling. Periodic boundaries identify site L+1 with 1;
// open boundaries drop the wrap-around bond.
struct ChainSpec {
  int length = 0;
  double g = 0.0;
  double h = 0.0;
  double d = 0.0;  // Dzyaloshinskii-type coupling
  Boundary boundary = Boundary::Periodic;

  void validate() const;
  int hilbert_dim() const { return 1 << length; }
  // Canonical content string (hexfloat), used as the cache key source.
  std::string content_key() const;
};

// Labeled local observables, stored as Pauli factor assignments and
// materialized to dense operators on demand.
class ObservableCatalog {
 public:
  ObservableCatalog(int length) : length_(length) {}

  void add(std::string label, PauliFactors factors);
  int size() const { return static_cast<int>(entries_.size()); }
  int length() const { return length_; }
  const std::string& label(int i) const { return entries_[i].label; }
  const PauliFactors& factors(int i) const { return entries_[i].factors; }
  HermitianOperator make_operator(int i) const;

 private:
  struct Entry {
    std::string label;
    PauliFactors factors;
  };
  int length_;
  std::vector<Entry> entries_;
};

HermitianOperator build_hamiltonian(const ChainSpec& spec);

// The 12 observables supported on `site` and the bond (site, site+1):
// sigma^a at site (3) and sigma^a (x) sigma^b on the bond (9). Site L wraps to
// 1 under periodic convention.
ObservableCatalog local_observables(int length, int site);

DensityMatrix thermal_state(const ChainSpec& spec0, double beta);

}  // namespace leafkit
