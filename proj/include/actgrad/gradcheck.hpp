#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "actgrad/activations.hpp"

namespace actgrad {

inline constexpr double kFiniteDiffStep = 1e-5;
inline constexpr double kRelativeErrorFloor = 1e-8;
inline constexpr double kGradTolerance = 1e-4;
/// Inputs closer than this to a ReLU kink (or pooling tie) are redrawn.
inline constexpr double kKinkExclusion = 1e-3;

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
/// Throws ValueError naming the coordinate if f is not finite at a probe.
std::vector<double> finite_diff(const ScalarFn& f, std::span<const double> at,
                                double step = kFiniteDiffStep);

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

enum class CheckComponent { fourier, lc, conv, dense, loss, end2end };

std::string_view to_string(CheckComponent component);
CheckComponent parse_check_component(std::string_view name);
std::span<const CheckComponent> all_check_components();

struct GroupError {
  std::string name;
  double max_error = 0.0;
  std::size_t coordinates = 0;
};

struct CheckReport {
  CheckComponent component = CheckComponent::fourier;
  std::uint64_t seed = 0;
  std::size_t draws = 0;
  /// Candidate draws thrown away by the exclusion rules (kinks, clamp band,
  /// oracle resolution) before the accepted ones.
  std::size_t rejected = 0;
  std::vector<GroupError> groups;
  double max_error = 0.0;
  bool passed = false;

  std::string summary() const;
};

CheckReport check_report(CheckComponent component, std::uint64_t seed, std::size_t draws = 100);

using FourierBackwardFn =
    std::function<FourierBackward(const FourierParams&, const FourierCache&, const Tensor&)>;

/// The fourier check with a replaceable backward pass, so that a broken
/// implementation can be shown to fail.
CheckReport check_fourier(std::uint64_t seed, std::size_t draws, const FourierBackwardFn& backward);

}  // namespace actgrad
