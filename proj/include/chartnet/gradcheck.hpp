#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "chartnet/nn/graph.hpp"

namespace chartnet {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

// Builds the scalar (1 x 1) objective on the given graph, reading the current
// parameter values. Called once with gradients enabled and twice per
// coordinate with gradients disabled.
using ScalarFn = std::function<nn::Var<double>(nn::Graph<double>&)>;

// Compares reverse-mode gradients with central differences for every scalar
// in every trainable parameter. Relative error per coordinate is
// |ga - gn| / max(1e-8, |ga| + |gn|).
//
// With extrapolate set, the numeric gradient is the Richardson combination
// (4 D(eps/2) - D(eps)) / 3 of two central differences, whose truncation error
// is O(eps^4). That permits a larger step, which keeps rounding noise in the
// objective below the 1e-8 floor for near-zero gradients.
GradCheckReport gradient_check(const ScalarFn& scalar_fn, nn::ParameterStore<double>& params, double epsilon = 1e-5,
                               bool extrapolate = false);

}  // namespace chartnet
