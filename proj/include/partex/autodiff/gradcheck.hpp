#pragma once

#include <string>
#include <vector>

#include "partex/autodiff/ops.hpp"

namespace partex::ad {

/// Names accepted by grad_check.
const std::vector<std::string>& gradcheck_ops();

/// Compares analytic gradients with central finite differences (h = 1e-3, in
/// double precision) for `op_name` on random inputs of the given shapes and
/// returns max |analytic - fd| / (|fd| + 1e-6). Empty `shapes` selects small
/// defaults. Non-scalar outputs are reduced with a fixed random projection.
/// For stop_gradient and straight_through the blocked or passed-through input
/// is checked against the gradient contract instead (0 when exact, +inf otherwise).
/// Throws Error on an unknown op.
double grad_check(const std::string& op_name, const std::vector<Shape>& shapes, Rng& rng);

}  // namespace partex::ad
