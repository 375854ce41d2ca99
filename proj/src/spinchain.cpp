#include "leafkit/spinchain.hpp"

#include <cmath>
#include <sstream>

namespace leafkit {

void ChainSpec::validate() const {
  if (length < 2 || length > 14) {
    std::ostringstream msg;
    msg << "ChainSpec: length " << length << " outside the dense-method guard 2..14";
    throw InvalidParameter(msg.str());
  }
  if (!std::isfinite(g) || !std::isfinite(h) || !std::isfinite(d))
    throw InvalidParameter("ChainSpec: couplings must be finite");
}

std::string ChainSpec::content_key() const {
  std::ostringstream key;
  key << std::hexfloat;
  key << "l=" << length << ";g=" << g << ";h=" << h << ";d=" << d
      << ";b=" << (boundary == Boundary::Periodic ? "p" : "o");
  return key.str();
}

void ObservableCatalog::add(std::string label, PauliFactors factors) {
  entries_.push_back({std::move(label), std::move(factors)});
}

HermitianOperator ObservableCatalog::make_operator(int i) const {
  if (i < 0 || i >= size()) throw InvalidParameter("ObservableCatalog: index out of range");
  return pauli_string(length_, entries_[i].factors);
}

HermitianOperator build_hamiltonian(const ChainSpec& spec) {
  spec.validate();
  const int L = spec.length;
  const long dim = spec.hilbert_dim();
  Matrix m = Matrix::Zero(dim, dim);

  for (int site = 1; site <= L; ++site) {
    if (spec.g != 0.0) add_pauli_string(m, L, {{site, PauliAxis::X}}, spec.g);
    if (spec.h != 0.0) add_pauli_string(m, L, {{site, PauliAxis::Z}}, spec.h);
  }
  const int bonds = spec.boundary == Boundary::Periodic ? L : L - 1;
  for (int b = 1; b <= bonds; ++b) {
    const int next = b % L + 1;
    add_pauli_string(m, L, {{b, PauliAxis::X}, {next, PauliAxis::X}}, 1.0);
    if (spec.d != 0.0) {
      add_pauli_string(m, L, {{b, PauliAxis::Z}, {next, PauliAxis::Y}}, spec.d);
      add_pauli_string(m, L, {{b, PauliAxis::Y}, {next, PauliAxis::Z}}, -spec.d);
    }
  }
  return HermitianOperator(std::move(m));
}

namespace {

constexpr const char* kAxisNames = "xyz";
constexpr PauliAxis kAxes[3] = {PauliAxis::X, PauliAxis::Y, PauliAxis::Z};

}  // namespace

ObservableCatalog local_observables(int length, int site) {
  if (length < 2 || length > 14)
    throw InvalidParameter("local_observables: length outside 2..14");
  if (site < 1 || site > length) {
    std::ostringstream msg;
    msg << "local_observables: site " << site << " out of range 1.." << length;
    throw InvalidParameter(msg.str());
  }
  const int partner = site % length + 1;
  ObservableCatalog catalog(length);
  for (int a = 0; a < 3; ++a) {
    std::ostringstream label;
    label << kAxisNames[a] << "@" << site;
    catalog.add(label.str(), {{site, kAxes[a]}});
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      std::ostringstream label;
      label << kAxisNames[a] << kAxisNames[b] << "@" << site << "," << partner;
      catalog.add(label.str(), {{site, kAxes[a]}, {partner, kAxes[b]}});
    }
  }
  return catalog;
}

DensityMatrix thermal_state(const ChainSpec& spec0, double beta) {
  return boltzmann_state(build_hamiltonian(spec0), beta);
}

}  // namespace leafkit
