#pragma once

#include <stdexcept>
#include <string>

namespace leafkit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input matrix violates a structural invariant (hermiticity, trace, positivity).
class InvalidOperator : public Error {
 public:
  using Error::Error;
};

// Argument outside the operation's domain (dimension mismatch, bad range, non-finite).
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

// Scalar map applied outside its mathematical domain (sqrt/log of non-positive spectrum).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A result failed a numerical sanity check (e.g. imaginary residue too large).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Density matrix is not full rank where the construction requires it.
class RankDeficient : public Error {
 public:
  using Error::Error;
};

// Relative spectral gap of the state Hamiltonian fell below the configured threshold.
class DegenerateStateHamiltonian : public Error {
 public:
  using Error::Error;
};

// Microcanonical window contains no leaf energies.
class EmptyShell : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace leafkit
