#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "flowreg/errors.hpp"
#include "flowreg/tensor.hpp"

namespace flowreg::detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw StructuralError("model file truncated (u64)");
  return v;
}

inline void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline double read_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw StructuralError("model file truncated (f64)");
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  if (n > (1ULL << 32)) throw StructuralError("model file corrupt (string size)");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw StructuralError("model file truncated (string)");
  return s;
}

inline void write_tensor(std::ostream& out, const Tensor& t) {
  write_u64(out, t.shape().size());
  for (std::size_t d : t.shape()) write_u64(out, d);
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_tensor(std::istream& in) {
  const std::uint64_t rank = read_u64(in);
  if (rank > 4) throw StructuralError("model file corrupt (tensor rank)");
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = read_u64(in);
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw StructuralError("model file truncated (tensor)");
  return t;
}

}  // namespace flowreg::detail
