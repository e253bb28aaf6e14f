#include "survnet/gradcheck.hpp"

#include <cmath>

#include "survnet/rng.hpp"

namespace survnet {

namespace {

std::vector<TensorPtr> sample_inputs(const std::vector<Shape>& shapes, std::uint64_t seed,
                                     int attempt) {
    std::mt19937_64 rng(mix_seed(seed, 0x1000u + static_cast<std::uint64_t>(attempt)));
    std::vector<TensorPtr> inputs;
    inputs.reserve(shapes.size());
    for (const Shape& s : shapes) inputs.push_back(Tensor::randn(s, rng, 1.0, true));
    return inputs;
}

std::vector<double> projection(std::size_t n, std::uint64_t seed, int attempt) {
    std::mt19937_64 rng(mix_seed(seed, 0x2000u + static_cast<std::uint64_t>(attempt)));
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> r(n);
    for (double& v : r) v = dist(rng);
    return r;
}

double project_value(const TensorPtr& out, const std::vector<double>& r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out->data.size(); ++i) acc += out->data[i] * r[i];
    return acc;
}

TensorPtr project_node(const TensorPtr& out, std::vector<double> r) {
    auto scalar = Tensor::zeros({1});
    scalar->data[0] = project_value(out, r);
    scalar->requires_grad = out->requires_grad;
    if (scalar->requires_grad) {
        scalar->parents = {out};
        TensorPtr op = out;
        scalar->backprop = [op, r = std::move(r)](Tensor& self) {
            if (!op->requires_grad) return;
            op->ensure_grad();
            const double g = self.grad[0];
            for (std::size_t i = 0; i < op->grad.size(); ++i) op->grad[i] += r[i] * g;
        };
    }
    return scalar;
}

} // namespace

GradCheckResult grad_check(const std::string& name, const OpBuilder& op,
                           const std::vector<Shape>& input_shapes, std::uint64_t seed, double tol,
                           const PointGuard& safe_point, double h, int retry_on_fail,
                           int max_fd_per_input) {
    constexpr int kMaxAttempts = 64;
    GradCheckResult result;
    result.name = name;

    int fail_retries = 0;
    bool evaluated = false;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        auto inputs = sample_inputs(input_shapes, seed, attempt);
        if (safe_point && !safe_point(inputs)) {
            ++result.resamples;
            continue;
        }

        TensorPtr out = op(inputs);
        const std::vector<double> r = projection(out->data.size(), seed, attempt);
        TensorPtr scalar = project_node(out, r);
        backward(scalar);

        std::vector<std::vector<double>> analytic;
        analytic.reserve(inputs.size());
        for (const auto& in : inputs) {
            if (in->grad.size() == in->data.size()) {
                analytic.push_back(in->grad);
            } else {
                analytic.emplace_back(in->data.size(), 0.0);
            }
        }

        // Forward-only finite differencing; disable gradient tracking so the
        // rebuilt graphs carry no closures.
        for (auto& in : inputs) in->requires_grad = false;
        result.max_rel_err_per_input.assign(inputs.size(), 0.0);
        result.max_rel_err = 0.0;
        for (std::size_t ii = 0; ii < inputs.size(); ++ii) {
            Tensor& in = *inputs[ii];
            const std::size_t count = in.data.size();
            std::size_t step = 1;
            if (max_fd_per_input > 0 && count > static_cast<std::size_t>(max_fd_per_input)) {
                step = (count + static_cast<std::size_t>(max_fd_per_input) - 1) /
                       static_cast<std::size_t>(max_fd_per_input);
            }
            for (std::size_t e = 0; e < count; e += step) {
                const double orig = in.data[e];
                in.data[e] = orig + h;
                const double splus = project_value(op(inputs), r);
                in.data[e] = orig - h;
                const double sminus = project_value(op(inputs), r);
                in.data[e] = orig;
                const double fd = (splus - sminus) / (2.0 * h);
                const double a = analytic[ii][e];
                const double scale = std::max({1.0, std::abs(a), std::abs(fd)});
                const double rel = std::abs(a - fd) / scale;
                if (rel > result.max_rel_err_per_input[ii]) result.max_rel_err_per_input[ii] = rel;
                if (rel > result.max_rel_err) result.max_rel_err = rel;
            }
        }
        result.pass = result.max_rel_err < tol;
        evaluated = true;
        if (result.pass || fail_retries >= retry_on_fail) break;
        ++fail_retries;
        ++result.resamples;
    }
    if (!evaluated) {
        throw NumericError("grad_check(" + name + "): no kink-free sample point found");
    }
    return result;
}

} // namespace survnet
