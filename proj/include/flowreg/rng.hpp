#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace flowreg {

//! Counter-based splittable PRNG. A draw is a pure function of
//! (seed, stream, counter), so independent streams can be derived for data
//! splits, initialization, dropout and sampling without coordinating state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  //! Derived generator with an independent stream and a fresh counter.
  Rng stream(std::uint64_t substream) const;
  Rng stream(std::string_view name) const;

  std::uint64_t next_u64();
  //! Uniform in [0, 1).
  double uniform();
  //! Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  //! Standard normal draw (Box-Muller; consumes two counter steps).
  double normal();
  std::vector<double> normals(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace flowreg
