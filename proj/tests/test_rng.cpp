#include <doctest.h>

#include "laddersim/rng.hpp"

using laddersim::Rng;

TEST_CASE("same seed gives the same stream") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  for (int i = 0; i < 100; ++i) CHECK(a.integer(17) == b.integer(17));
}

TEST_CASE("uniform stays in range") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-2.0, 3.0);
    CHECK(u >= -2.0);
    CHECK(u < 3.0);
  }
}

TEST_CASE("integer stays in range and hits every value") {
  Rng rng(5);
  std::vector<int> seen(6, 0);
  for (int i = 0; i < 600; ++i) ++seen[rng.integer(6)];
  for (int c : seen) CHECK(c > 0);
}

TEST_CASE("dirichlet is a probability vector") {
  Rng rng(11);
  const auto v = rng.dirichlet(8);
  double sum = 0.0;
  for (double x : v) {
    CHECK(x > 0.0);
    sum += x;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("shuffle is a permutation") {
  Rng rng(3);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
}
