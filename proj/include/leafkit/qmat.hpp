#pragma once

#include <iosfwd>
#include <string>

#include "leafkit/operator_core.hpp"

namespace leafkit::qmat {

// Binary matrix container "QMAT1".
// One ASCII header line:  QMAT1 d=<int> kind=<hermitian|density|unitary|state>\n
// followed by d*d entries (d entries for kind=state), row-major, each entry two
// IEEE-754 binary64 little-endian values (real, imaginary), no padding.

enum class Kind { Hermitian, Density, Unitary, State };

std::string kind_name(Kind kind);

void write(std::ostream& out, const Matrix& m, Kind kind);
void write_file(const std::string& path, const Matrix& m, Kind kind);

// Vectors are written as kind=state payloads (d entries).
void write(std::ostream& out, const Vector& v);
void write_file(const std::string& path, const Vector& v);

struct Loaded {
  Kind kind;
  Matrix matrix;  // d x d, or d x 1 for kind=state
};

Loaded read(std::istream& in, const std::string& name);
Loaded read_file(const std::string& path);

}  // namespace leafkit::qmat
