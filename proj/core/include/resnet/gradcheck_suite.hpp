#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resnet/autodiff.hpp"

namespace resnet {

struct GradCheckCase {
  std::string name;
  GradCheckResult result;
};

/// Central-difference checks in float64 for every layer type (conv, batch norm
/// in both modes, relu, max pool, global pooling, linear, softmax cross-entropy,
/// broadcast add) and for basic and bottleneck blocks with identity, zero-pad
/// and projection shortcuts. Each loss is a fixed random weighting of the
/// output so no gradient vanishes by symmetry.
std::vector<GradCheckCase> run_standard_grad_checks(double eps = 1e-5, std::uint64_t seed = 7);

}  // namespace resnet
