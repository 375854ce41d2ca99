#include "leafkit/qmat.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "leafkit/errors.hpp"

namespace leafkit::qmat {

namespace {

std::uint64_t to_le_bits(double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof(bits));
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return bits;
}

double from_le_bits(std::uint64_t bits) {
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  double x;
  std::memcpy(&x, &bits, sizeof(x));
  return x;
}

void put_entry(std::ostream& out, Complex z) {
  const std::uint64_t re = to_le_bits(z.real());
  const std::uint64_t im = to_le_bits(z.imag());
  out.write(reinterpret_cast<const char*>(&re), 8);
  out.write(reinterpret_cast<const char*>(&im), 8);
}

Complex get_entry(std::istream& in, const std::string& name) {
  std::uint64_t re, im;
  in.read(reinterpret_cast<char*>(&re), 8);
  in.read(reinterpret_cast<char*>(&im), 8);
  if (!in) throw IoError("QMAT1 payload truncated in " + name);
  return {from_le_bits(re), from_le_bits(im)};
}

}  // namespace

std::string kind_name(Kind kind) {
  switch (kind) {
    case Kind::Hermitian: return "hermitian";
    case Kind::Density: return "density";
    case Kind::Unitary: return "unitary";
    case Kind::State: return "state";
  }
  return "?";
}

void write(std::ostream& out, const Matrix& m, Kind kind) {
  if (m.rows() != m.cols())
    throw InvalidParameter("QMAT1 matrix payloads must be square");
  out << "QMAT1 d=" << m.rows() << " kind=" << kind_name(kind) << "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_entry(out, m(i, j));
  if (!out) throw IoError("QMAT1 write failed");
}

void write(std::ostream& out, const Vector& v) {
  out << "QMAT1 d=" << v.size() << " kind=state\n";
  for (Eigen::Index i = 0; i < v.size(); ++i) put_entry(out, v(i));
  if (!out) throw IoError("QMAT1 write failed");
}

void write_file(const std::string& path, const Matrix& m, Kind kind) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write(out, m, kind);
  if (!out) throw IoError("write failed for " + path);
}

void write_file(const std::string& path, const Vector& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write(out, v);
  if (!out) throw IoError("write failed for " + path);
}

Loaded read(std::istream& in, const std::string& name) {
  std::string header;
  if (!std::getline(in, header)) throw IoError("missing QMAT1 header in " + name);
  std::istringstream hs(header);
  std::string magic, dtok, ktok;
  hs >> magic >> dtok >> ktok;
  if (magic != "QMAT1" || dtok.rfind("d=", 0) != 0 || ktok.rfind("kind=", 0) != 0)
    throw IoError("malformed QMAT1 header in " + name + ": '" + header + "'");
  long d = 0;
  try {
    d = std::stol(dtok.substr(2));
  } catch (const std::exception&) {
    throw IoError("malformed QMAT1 dimension in " + name);
  }
  if (d < 1 || d > (1L << 20)) throw IoError("QMAT1 dimension out of range in " + name);
  const std::string kname = ktok.substr(5);
  Loaded out;
  if (kname == "hermitian") out.kind = Kind::Hermitian;
  else if (kname == "density") out.kind = Kind::Density;
  else if (kname == "unitary") out.kind = Kind::Unitary;
  else if (kname == "state") out.kind = Kind::State;
  else throw IoError("unknown QMAT1 kind '" + kname + "' in " + name);

  const long cols = out.kind == Kind::State ? 1 : d;
  out.matrix.resize(d, cols);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < cols; ++j) out.matrix(i, j) = get_entry(in, name);
  // The payload must end exactly here.
  char extra;
  if (in.read(&extra, 1)) throw IoError("trailing bytes after QMAT1 payload in " + name);
  return out;
}

Loaded read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read(in, path);
}

}  // namespace leafkit::qmat
