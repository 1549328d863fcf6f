#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vbcom::oracles {

// Pinned tolerances.
inline constexpr double kLambdaReturnTol = 1e-9;
inline constexpr int kLambdaReturnCases = 1000;
inline constexpr double kGaeTol = 1e-9;
inline constexpr double kGradStep = 1e-5;
inline constexpr double kGradRelTol = 1e-4;
inline constexpr double kGradFloor = 1e-6;  // denominator floor for the relative error
inline constexpr int kGradConfigs = 20;
inline constexpr double kSoftmaxTol = 1e-12;

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Independent references, each checked against the library implementation.
Check lambda_return(std::uint64_t seed);
Check gae(std::uint64_t seed);
Check gradients(std::uint64_t seed);
Check noise_identities(std::uint64_t seed);
Check switch_rule(std::uint64_t seed);
Check softmax(std::uint64_t seed);
Check metrics();

/// All seven, in acceptance order.
std::vector<Check> run_all(std::uint64_t seed);

/// Relative error used by the gradient check: |a - n| / max(|a|, |n|, kGradFloor).
double relative_error(double analytic, double numeric);

}  // namespace vbcom::oracles
