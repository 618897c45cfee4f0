#include <cmath>
#include <limits>

#include "doctest.h"

#include "actgrad/gradcheck.hpp"

using namespace actgrad;

TEST_CASE("central differences") {
  SUBCASE("quadratic") {
    const ScalarFn f = [](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; };
    const std::vector<double> at{1.0, 2.0};
    const auto g = finite_diff(f, at);
    CHECK(std::abs(g[0] - 2.0) < 1e-8);
    CHECK(std::abs(g[1] - 4.0) < 1e-8);
  }
  SUBCASE("constant") {
    const ScalarFn f = [](std::span<const double>) { return 3.0; };
    const std::vector<double> at{0.5, -1.0, 7.0};
    for (double v : finite_diff(f, at)) CHECK(v == 0.0);
  }
  SUBCASE("sine") {
    const ScalarFn f = [](std::span<const double> x) { return std::sin(x[0]); };
    for (double x0 : {-2.0, 0.0, 0.7, 3.0}) {
      const std::vector<double> at{x0};
      CHECK(std::abs(finite_diff(f, at)[0] - std::cos(x0)) < 1e-8);
    }
  }
  SUBCASE("non-finite probe") {
    const ScalarFn f = [](std::span<const double> x) { return x[1] > 0.0 ? std::log(-1.0) : 0.0; };
    const std::vector<double> at{0.0, 0.0};
    CHECK_THROWS_AS(finite_diff(f, at), ValueError);
    const ScalarFn inf = [](std::span<const double>) { return std::numeric_limits<double>::infinity(); };
    CHECK_THROWS_AS(finite_diff(inf, at), ValueError);
  }
}

TEST_CASE("relative error") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == 0.5);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(0.1));
}

TEST_CASE("component names") {
  CHECK(all_check_components().size() == 6);
  for (auto c : all_check_components()) CHECK(parse_check_component(to_string(c)) == c);
  CHECK_THROWS_AS(parse_check_component("pool"), ValueError);
}

// Returning the cosine-coefficient gradient twice over must be caught.
TEST_CASE("a broken Fourier backward fails the check") {
  const FourierBackwardFn doubled = [](const FourierParams& p, const FourierCache& c, const Tensor& u) {
    auto g = fourier_backward(p, c, u);
    for (auto& v : g.params.cos_coeffs()) v *= 2.0;
    return g;
  };
  const auto report = check_fourier(1, 20, doubled);
  CHECK_FALSE(report.passed);
  for (const auto& group : report.groups) {
    if (group.name == "cos") CHECK(std::abs(group.max_error - 0.5) < 1e-3);
  }
  const auto good = check_fourier(1, 20, fourier_backward);
  CHECK(good.passed);
}

TEST_CASE("every component passes") {
  for (auto c : all_check_components()) {
    const auto report = check_report(c, 17, c == CheckComponent::end2end ? 20 : 100);
    INFO(report.summary());
    CHECK(report.passed);
    CHECK(report.max_error < kGradTolerance);
    CHECK_FALSE(report.groups.empty());
  }
}
