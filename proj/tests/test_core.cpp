#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "rdsmall/core.hpp"

using namespace rdsmall;
using Catch::Approx;

TEST_CASE("validate splits by side with ties at the cutoff treated") {
  RDSample s({-1.0, 0.0, 1.0}, {1.0, 2.0, 3.0}, 0.0);
  const auto split = validate(s);
  CHECK(split.below == std::vector<std::size_t>{0});
  CHECK(split.above == std::vector<std::size_t>{1, 2});
  CHECK_FALSE(split.empty_side());
  CHECK(s.treated(1));
}

TEST_CASE("validate rejects non-finite values and length mismatch") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  RDSample bad_x({-1.0, nan}, {0.0, 0.0}, 0.0);
  REQUIRE_THROWS_AS(validate(bad_x), Error);
  try {
    validate(bad_x);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFinite);
  }
  RDSample bad_y({-1.0, 1.0}, {0.0, INFINITY}, 0.0);
  CHECK_THROWS_MATCHES(validate(bad_y), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::NonFinite;
                       }));
  RDSample short_y({-1.0, 1.0}, {0.0}, 0.0);
  CHECK_THROWS_MATCHES(validate(short_y), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::LengthMismatch;
                       }));
}

TEST_CASE("an empty side is flagged, not thrown") {
  RDSample s({1.0, 2.0, 3.0}, {0.0, 0.0, 0.0}, 0.0);
  const auto split = validate(s);
  CHECK(split.below.empty());
  CHECK(split.above.size() == 3);
  CHECK(split.empty_side());
}

TEST_CASE("affine_transform maps x and the cutoff") {
  RDSample s({0.0, 0.5, 1.0}, {1.0, 2.0, 3.0}, 0.5);
  const auto t = affine_transform(s, 2.0, -1.0);
  CHECK(t.x() == std::vector<double>{-1.0, 0.0, 1.0});
  CHECK(t.cutoff() == 0.0);
  CHECK(t.y() == s.y());

  const auto id = affine_transform(s, 1.0, 0.0);
  CHECK(id.x() == s.x());
  CHECK(id.cutoff() == s.cutoff());

  CHECK_THROWS_MATCHES(affine_transform(s, 0.0, 1.0), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::ZeroScale;
                       }));
}

TEST_CASE("affine_transform round trip and side preservation on random samples") {
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> x(30);
    std::vector<double> y(30);
    for (auto& v : x) v = u(gen);
    for (auto& v : y) v = u(gen);
    RDSample s(x, y, u(gen));
    const double a = scale(gen);
    const double b = u(gen);
    const auto t = affine_transform(s, a, b);
    const auto back = affine_transform(t, 1.0 / a, -b / a);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(back.x()[i] == Approx(x[i]).epsilon(1e-12).margin(1e-10));
    }
    CHECK(back.cutoff() == Approx(s.cutoff()).epsilon(1e-12).margin(1e-10));
    // Points exactly representable relative to the cutoff keep their side.
    const auto s1 = validate(s);
    const auto s2 = validate(t);
    std::size_t agree = 0;
    for (auto i : s1.above) agree += std::count(s2.above.begin(), s2.above.end(), i);
    CHECK(agree + 1 >= s1.above.size());  // at most a rounding flip at the cutoff itself
  }
}

TEST_CASE("EffectEstimate width and coverage") {
  EffectEstimate e;
  e.tau_hat = 0.1;
  e.ci_lower = -0.2;
  e.ci_upper = 0.4;
  CHECK(e.width() == Approx(0.6));
  CHECK(e.covers(0.1));
  CHECK(e.covers(0.4));
  CHECK_FALSE(e.covers(0.41));
}
