#include "flowreg/rng.hpp"

#include <cmath>

namespace flowreg {

namespace {

// SplitMix64 finalizer; full avalanche on 64 bits.
std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng Rng::stream(std::uint64_t substream) const {
  return Rng(seed_, mix64(stream_ ^ mix64(substream)));
}

Rng Rng::stream(std::string_view name) const {
  return stream(fnv1a(name));
}

std::uint64_t Rng::next_u64() {
  return mix64(seed_ ^ mix64(stream_ ^ mix64(counter_++)));
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) {
    next_u64();
    return 0;
  }
  // Rejection sampling on the top range to avoid modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]; keeps log finite
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * M_PI * u2);
}

std::vector<double> Rng::normals(std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = normal();
  return out;
}

}  // namespace flowreg
