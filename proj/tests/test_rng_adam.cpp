#include <cmath>

#include "doctest.h"
#include "flowreg/adam.hpp"
#include "flowreg/errors.hpp"
#include "flowreg/rng.hpp"
#include "oracles.hpp"

using namespace flowreg;

TEST_CASE("rng determinism and stream independence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng s1 = Rng(42).stream(1);
  Rng s2 = Rng(42).stream(2);
  bool all_equal = true;
  for (int i = 0; i < 20; ++i) all_equal &= s1.next_u64() == s2.next_u64();
  CHECK_FALSE(all_equal);
  Rng n1 = Rng(42).stream("dropout");
  Rng n2 = Rng(42).stream("dropout");
  CHECK(n1.next_u64() == n2.next_u64());
}

TEST_CASE("rng normals: empty draw and moment bounds") {
  Rng rng(123);
  CHECK(rng.normals(0).empty());
  std::vector<double> draws = Rng(7).stream("normal-test").normals(1000000);
  CHECK(std::abs(oracles::mean(draws)) < 0.01);
  CHECK(std::abs(oracles::sample_std(draws) - 1.0) < 0.01);
}

TEST_CASE("rng uniform below is in range and deterministic") {
  Rng a(5), b(5);
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.below(17);
    CHECK(x < 17);
    CHECK(x == b.below(17));
  }
  std::vector<int> v1{1, 2, 3, 4, 5}, v2{1, 2, 3, 4, 5};
  Rng s1(9), s2(9);
  s1.shuffle(v1);
  s2.shuffle(v2);
  CHECK(v1 == v2);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  Tensor p({1, 3}, {1.0, -2.0, 0.5});
  Tensor g = Tensor::zeros(1, 3);
  AdamState st = AdamState::create({&p}, 0.1);
  adam_step({&p}, {&g}, st);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);
  CHECK(p[2] == 0.5);
  CHECK(st.step_count == 1);
}

TEST_CASE("adam: first step moves by about the learning rate") {
  Tensor p = Tensor::scalar(0.0);
  Tensor g = Tensor::scalar(1.0);
  AdamState st = AdamState::create({&p}, 0.1);
  adam_step({&p}, {&g}, st);
  // bias correction gives mhat = 1, vhat = 1 on the first step
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: identical gradients keep moving the same direction") {
  Tensor p = Tensor::scalar(1.0);
  Tensor g = Tensor::scalar(0.5);
  AdamState st = AdamState::create({&p}, 0.01);
  const double before = p[0];
  adam_step({&p}, {&g}, st);
  const double mid = p[0];
  adam_step({&p}, {&g}, st);
  CHECK(mid < before);
  CHECK(p[0] < mid);
}

TEST_CASE("adam: non-finite gradient applies no update") {
  Tensor p = Tensor::scalar(1.0);
  Tensor g = Tensor::scalar(std::nan(""));
  AdamState st = AdamState::create({&p}, 0.1);
  CHECK_THROWS_AS(adam_step({&p}, {&g}, st), NumericError);
  CHECK(p[0] == 1.0);
  CHECK(st.step_count == 0);
}

TEST_CASE("adam: shape mismatch is structural") {
  Tensor p = Tensor::scalar(1.0);
  Tensor g = Tensor::zeros(1, 2);
  AdamState st = AdamState::create({&p}, 0.1);
  CHECK_THROWS_AS(adam_step({&p}, {&g}, st), StructuralError);
}
