#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "actdiff/tensor.hpp"

namespace actdiff {

/// Largest |analytic - numeric| / max(1e-8, |numeric|) over every entry of
/// `leaves`, where numeric gradients come from central differences of
/// `loss_fn` with the given step. `loss_fn` must rebuild the graph from the
/// current leaf values on every call.
double finite_difference_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                               double step = 1e-5);

/// Gradient check of a single op kind on random inputs drawn from `seed`.
/// Non-scalar outputs are reduced with a fixed random weighting so every
/// output entry contributes. See `grad_check_kinds()` for the accepted
/// kinds and `default_grad_check_shapes()` for the shape conventions.
double grad_check(std::string_view kind, const std::vector<Shape>& shapes, std::uint64_t seed, double step = 1e-5);

std::vector<std::string> grad_check_kinds();
std::vector<Shape> default_grad_check_shapes(std::string_view kind);

}  // namespace actdiff
