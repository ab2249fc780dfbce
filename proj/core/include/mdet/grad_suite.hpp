#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mdet {

inline constexpr double kGradTolerance = 1e-6;

struct GradSuiteEntry {
  std::string module;
  std::string op;
  double max_rel_error = 0.0;
  std::size_t cases = 0;
  std::string worst_case;  // e.g. "seed 3 shape [2,4,5,6] param x[17]"
};

// Modules: "tensor", "dbcasa", "fsfm", "loss", or "all". Each op is checked on
// `seeds` random cases derived from `seed`, shapes up to 2x8x6x6.
std::vector<GradSuiteEntry> run_grad_suite(std::string_view module, std::uint64_t seed = 0,
                                           std::size_t seeds = 10);

bool suite_passes(const std::vector<GradSuiteEntry>& entries, double tol = kGradTolerance);

}  // namespace mdet
