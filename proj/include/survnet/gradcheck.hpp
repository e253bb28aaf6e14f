#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "survnet/tensor.hpp"

namespace survnet {

struct GradCheckResult {
    std::string name;
    /// Worst relative error per input tensor, in input order.
    std::vector<double> max_rel_err_per_input;
    double max_rel_err = 0.0;
    bool pass = false;
    /// Sample points rejected by the kink guard or retried after a failure.
    int resamples = 0;
};

/// Builds the expression under test from freshly sampled inputs.
using OpBuilder = std::function<TensorPtr(const std::vector<TensorPtr>&)>;

/// Returns true when the sampled point is safely away from kinks
/// (relu / maxpool / abs need |preactivation| above ~1e-3).
using PointGuard = std::function<bool(const std::vector<TensorPtr>&)>;

/// Central-difference verification of reverse-mode gradients.
///
/// Inputs are sampled from a seeded standard normal, the output is reduced
/// to a scalar through a fixed random projection, and every input element is
/// perturbed by +-h. The relative error uses a unit floor:
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
/// Points rejected by `safe_point` are resampled; `retry_on_fail` additionally
/// allows a deterministic resample after a failed check, for composite
/// expressions whose interior kinks cannot be guarded from the outside.
/// A positive `max_fd_per_input` caps the differenced elements per input to
/// an evenly spaced subset (analytic gradients are still computed in full).
GradCheckResult grad_check(const std::string& name, const OpBuilder& op,
                           const std::vector<Shape>& input_shapes, std::uint64_t seed,
                           double tol = 1e-4, const PointGuard& safe_point = {},
                           double h = 1e-5, int retry_on_fail = 0, int max_fd_per_input = 0);

/// Fixed verification suite covering every differentiable op plus the
/// conditioning pathway and a tiny end-to-end model.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double tol);

} // namespace survnet
