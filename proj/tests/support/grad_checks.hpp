#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace obf::testing {

struct GradCheck {
  std::string name;
  double err64 = 0;  // 64-bit analytic vs 64-bit central differences
  double err32 = 0;  // 32-bit analytic vs 64-bit central differences
};

/// Every differentiable primitive (and the two composed helpers) on a few
/// random small shapes.
std::vector<GradCheck> primitive_gradient_checks(std::uint64_t seed);

/// Gradient of the adversarial loss with respect to the inserted embedding
/// row, 32-bit analytic against 64-bit central differences (h = 1e-3), for
/// one random model/sentence configuration. Returns the max relative error.
double adversarial_gradient_error(std::uint64_t seed);

}  // namespace obf::testing
