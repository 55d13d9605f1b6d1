#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "mfbranch/rng.hpp"

using namespace mfbranch;

TEST_CASE("streams are reproducible and keyed") {
  Stream a(42, {1, 2}), b(42, {1, 2}), c(42, {1, 3});
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
  }
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) != derive_seed(1, {2, 0}));
}

TEST_CASE("uniform moments") {
  Stream s(7);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sq += u * u;
  }
  CHECK(std::abs(sum / n - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::abs(sq / n - 1.0 / 3.0) < 0.005);
}

TEST_CASE("normal moments") {
  Stream s(9);
  const int n = 200000;
  double m1 = 0.0, m2 = 0.0, m4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = s.normal();
    m1 += z;
    m2 += z * z;
    m4 += z * z * z * z;
  }
  CHECK(std::abs(m1 / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(m2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(m4 / n - 3.0) < 0.1);
}

TEST_CASE("exponential and poisson means") {
  Stream s(11);
  const int n = 100000;
  double e = 0.0, p = 0.0;
  for (int i = 0; i < n; ++i) {
    e += s.exponential(2.0);
    p += static_cast<double>(s.poisson(3.5));
  }
  CHECK(std::abs(e / n - 0.5) < 4.0 * 0.5 / std::sqrt(n));
  CHECK(std::abs(p / n - 3.5) < 4.0 * std::sqrt(3.5 / n));
}

TEST_CASE("philox known-answer") {
  // Random123 KAT: philox4x32-10 with zero counter and key.
  const auto out = philox4x32({0, 0, 0, 0}, {0, 0});
  CHECK(out[0] == 0x6627e8d5u);
  CHECK(out[1] == 0xe169c58du);
  CHECK(out[2] == 0xbc57ac4cu);
  CHECK(out[3] == 0x9b00dbd8u);
}

TEST_CASE("philox known-answer, all ones and pi digits") {
  const auto ones = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  CHECK(ones == std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  const auto pi = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  CHECK(pi == std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}
