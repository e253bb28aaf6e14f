#include <cmath>

#include "survnet/gradcheck.hpp"
#include "survnet/model.hpp"
#include "survnet/rng.hpp"

namespace survnet {

namespace {

// Kink guards keep the sampled point away from non-differentiable spots so
// the central difference sees a locally linear function.

bool away_from_zero(const TensorPtr& t, double margin = 1e-3) {
    for (double v : t->data) {
        if (std::abs(v) < margin) return false;
    }
    return true;
}

bool pool_windows_untied(const TensorPtr& x, int window, double margin = 1e-3) {
    const int n = x->shape[0], c = x->shape[1];
    const int d = x->shape[2], h = x->shape[3], w = x->shape[4];
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            for (int zd = 0; zd < d; zd += window) {
                for (int zh = 0; zh < h; zh += window) {
                    for (int zw = 0; zw < w; zw += window) {
                        double best = -1e300, second = -1e300;
                        for (int kd = 0; kd < window; ++kd) {
                            for (int kh = 0; kh < window; ++kh) {
                                for (int kw = 0; kw < window; ++kw) {
                                    const std::size_t idx =
                                        (((static_cast<std::size_t>(ni) * c + ci) * d + zd + kd) *
                                             h +
                                         zh + kh) *
                                            w +
                                        zw + kw;
                                    const double v = x->data[idx];
                                    if (v > best) {
                                        second = best;
                                        best = v;
                                    } else if (v > second) {
                                        second = v;
                                    }
                                }
                            }
                        }
                        if (best - second < margin) return false;
                    }
                }
            }
        }
    }
    return true;
}

// Plain re-evaluation of the mapping preactivations, used to reject sample
// points that would put a leaky-relu input near its kink.
bool mapping_preacts_clear(const std::vector<TensorPtr>& in, double margin = 1e-3) {
    const auto& w1 = in[0];
    const auto& b1 = in[1];
    const auto& w2 = in[2];
    const auto& b2 = in[3];
    const int l = w1->shape[0];
    std::vector<double> h1(static_cast<std::size_t>(l));
    for (int o = 0; o < l; ++o) {
        // fixed GTR one-hot: only column 0 contributes
        const double pre = w1->data[static_cast<std::size_t>(o) * kNumTreatments] + b1->data[o];
        if (std::abs(pre) < margin) return false;
        h1[static_cast<std::size_t>(o)] = pre > 0.0 ? pre : kMappingLeakySlope * pre;
    }
    for (int o = 0; o < l; ++o) {
        double pre = b2->data[o];
        for (int j = 0; j < l; ++j) pre += w2->data[static_cast<std::size_t>(o) * l + j] * h1[j];
        if (std::abs(pre) < margin) return false;
    }
    return true;
}

GradCheckResult check_conv(const std::string& name, Conv3dKernel kernel, int stride, int padding,
                           const Shape& xs, const Shape& ws, std::uint64_t seed, double tol) {
    return grad_check(
        name,
        [kernel, stride, padding](const std::vector<TensorPtr>& in) {
            Conv3dKernel prev = conv3d_kernel();
            conv3d_kernel() = kernel;
            auto out = conv3d(in[0], in[1], in[2], stride, padding);
            conv3d_kernel() = prev;
            return out;
        },
        {xs, ws, {ws[0]}}, seed, tol);
}

} // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double tol) {
    std::vector<GradCheckResult> results;
    auto s = [seed](std::uint64_t salt) { return mix_seed(seed, salt); };

    results.push_back(check_conv("conv3d[fast]", Conv3dKernel::Fast, 1, 1, {1, 2, 4, 4, 4},
                                 {3, 2, 3, 3, 3}, s(1), tol));
    results.push_back(check_conv("conv3d[naive]", Conv3dKernel::Naive, 1, 1, {1, 2, 4, 4, 4},
                                 {3, 2, 3, 3, 3}, s(2), tol));
    results.push_back(check_conv("conv3d[stride2]", Conv3dKernel::Fast, 2, 1, {1, 1, 5, 5, 5},
                                 {2, 1, 3, 3, 3}, s(3), tol));

    results.push_back(grad_check(
        "linear", [](const std::vector<TensorPtr>& in) { return linear(in[0], in[1], in[2]); },
        {{3, 4}, {2, 4}, {2}}, s(4), tol));

    results.push_back(grad_check(
        "relu", [](const std::vector<TensorPtr>& in) { return relu(in[0]); }, {{2, 7}}, s(5), tol,
        [](const std::vector<TensorPtr>& in) { return away_from_zero(in[0]); }));

    results.push_back(grad_check(
        "leaky_relu",
        [](const std::vector<TensorPtr>& in) { return leaky_relu(in[0], kMappingLeakySlope); },
        {{2, 7}}, s(6), tol,
        [](const std::vector<TensorPtr>& in) { return away_from_zero(in[0]); }));

    results.push_back(grad_check(
        "maxpool3d", [](const std::vector<TensorPtr>& in) { return maxpool3d(in[0], 2); },
        {{1, 2, 4, 4, 4}}, s(7), tol,
        [](const std::vector<TensorPtr>& in) { return pool_windows_untied(in[0], 2); }));

    results.push_back(grad_check(
        "global_avg_pool",
        [](const std::vector<TensorPtr>& in) { return global_avg_pool(in[0]); }, {{2, 3, 2, 2, 2}},
        s(8), tol));

    results.push_back(grad_check(
        "flatten", [](const std::vector<TensorPtr>& in) { return flatten(in[0]); },
        {{2, 3, 2, 2, 2}}, s(9), tol));

    results.push_back(grad_check(
        "concat", [](const std::vector<TensorPtr>& in) { return concat(in[0], in[1], 1); },
        {{2, 3}, {2, 4}}, s(10), tol));

    results.push_back(grad_check(
        "slice", [](const std::vector<TensorPtr>& in) { return slice(in[0], 1, 2, 3); }, {{2, 6}},
        s(11), tol));

    results.push_back(grad_check(
        "instance_stats",
        [](const std::vector<TensorPtr>& in) {
            auto [mu, sigma] = instance_stats(in[0]);
            return concat(mu, sigma, 1);
        },
        {{1, 2, 3, 3, 3}}, s(12), tol));

    results.push_back(grad_check(
        "adain", [](const std::vector<TensorPtr>& in) { return adain(in[0], in[1], in[2]); },
        {{1, 2, 3, 3, 3}, {1, 2}, {1, 2}}, s(13), tol));

    results.push_back(grad_check(
        "mae", [](const std::vector<TensorPtr>& in) { return mae(in[0], in[1]); },
        {{4, 1}, {4, 1}}, s(14), tol,
        [](const std::vector<TensorPtr>& in) {
            for (std::size_t i = 0; i < in[0]->data.size(); ++i) {
                if (std::abs(in[0]->data[i] - in[1]->data[i]) < 1e-3) return false;
            }
            return true;
        }));

    // Conditioning pathway: mapping network feeding one affine head.
    results.push_back(grad_check(
        "map+specialize",
        [](const std::vector<TensorPtr>& in) {
            MappingNetwork m;
            m.latent_width = in[0]->shape[0];
            m.w1 = in[0];
            m.b1 = in[1];
            m.w2 = in[2];
            m.b2 = in[3];
            m.w3 = in[4];
            m.b3 = in[5];
            AffineSpecializer spec;
            spec.latent_width = m.latent_width;
            spec.weights = {in[6]};
            spec.biases = {in[7]};
            auto z = map_treatment(one_hot(Treatment::GTR), m);
            auto [scale, bias] = specialize(z, 0, spec);
            return concat(scale, bias, 1);
        },
        {{8, 3}, {8}, {8, 8}, {8}, {8, 8}, {8}, {6, 8}, {6}}, s(15), tol,
        [](const std::vector<TensorPtr>& in) { return mapping_preacts_clear(in); }));

    // End-to-end: every parameter of a tiny model plus its input volume.
    // Interior relu/pool kinks cannot be guarded from outside, so a failed
    // check is retried at a fresh deterministic point.
    {
        SurvivalNetConfig cfg;
        cfg.in_channels = 4;
        cfg.conv_channels = {2, 2, 2, 2};
        cfg.fc_widths = {4, 3, 1};
        cfg.fusion = Fusion::AdaIN;
        cfg.latent_width = 4;
        cfg.input_extent = 16;
        cfg.seed = seed;
        SurvivalNet net = build(cfg);
        auto params = net.parameters();
        std::vector<Shape> shapes;
        shapes.push_back({1, cfg.in_channels, 16, 16, 16});
        for (const auto& [name, p] : params) shapes.push_back(p->shape);

        results.push_back(grad_check(
            "model[end-to-end]",
            [&net](const std::vector<TensorPtr>& in) {
                // Rebind the forward graph onto the sampled tensors so their
                // grads are the ones populated by backward().
                SurvivalNet probe = net;
                probe.conv_w.clear();
                probe.conv_b.clear();
                probe.fc_w.clear();
                probe.fc_b.clear();
                std::size_t idx = 1;
                for (int i = 0; i < 4; ++i) {
                    probe.conv_w.push_back(in[idx++]);
                    probe.conv_b.push_back(in[idx++]);
                }
                for (int i = 0; i < 3; ++i) {
                    probe.fc_w.push_back(in[idx++]);
                    probe.fc_b.push_back(in[idx++]);
                }
                probe.mapping.w1 = in[idx++];
                probe.mapping.b1 = in[idx++];
                probe.mapping.w2 = in[idx++];
                probe.mapping.b2 = in[idx++];
                probe.mapping.w3 = in[idx++];
                probe.mapping.b3 = in[idx++];
                probe.specializer.weights.clear();
                probe.specializer.biases.clear();
                for (int i = 0; i < 4; ++i) {
                    probe.specializer.weights.push_back(in[idx++]);
                    probe.specializer.biases.push_back(in[idx++]);
                }
                return forward(probe, in[0], one_hot(Treatment::GTR));
            },
            shapes, s(16), tol, {}, 1e-5, 3, 256));
    }

    return results;
}

} // namespace survnet
