// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command-line front end. Exit codes: 0 success, 2 configuration or usage
// error, 3 data or compatibility error, 4 internal invariant violation.

#include "atmv/conditioning.hpp"
#include "atmv/tensor.hpp"

namespace atmv {

int run_cli(int argc, const char* const* argv);

// Scene guess for sampling from a bare image: centroid, mass, and peak of
// the bright blob; class square, velocity zero.
SemanticCondition estimate_condition(const Tensor& image);

}  // namespace atmv
