#include "survnet/conditioning.hpp"

#include <cmath>

namespace survnet {

const char* to_string(Treatment t) {
    switch (t) {
        case Treatment::GTR: return "GTR";
        case Treatment::STR: return "STR";
        case Treatment::NA: return "NA";
    }
    throw ConfigError("unknown treatment code");
}

Treatment treatment_from_string(const std::string& s) {
    if (s == "GTR") return Treatment::GTR;
    if (s == "STR") return Treatment::STR;
    if (s == "NA") return Treatment::NA;
    throw ConfigError("unknown treatment '" + s + "' (expected GTR, STR or NA)");
}

TensorPtr one_hot(const std::vector<Treatment>& ts) {
    if (ts.empty()) throw ShapeError("one_hot: empty treatment list");
    auto out = Tensor::zeros({static_cast<int>(ts.size()), kNumTreatments});
    for (std::size_t i = 0; i < ts.size(); ++i) {
        out->data[i * kNumTreatments + static_cast<std::size_t>(ts[i])] = 1.0;
    }
    return out;
}

TensorPtr one_hot(Treatment t) { return one_hot(std::vector<Treatment>{t}); }

MappingNetwork MappingNetwork::init(int latent_width, std::mt19937_64& rng) {
    if (latent_width < 1) {
        throw ConfigError("latent width must be >= 1, got " + std::to_string(latent_width));
    }
    MappingNetwork net;
    net.latent_width = latent_width;
    auto he = [&rng](int fout, int fin) {
        return Tensor::randn({fout, fin}, rng, std::sqrt(2.0 / fin), true);
    };
    net.w1 = he(latent_width, kNumTreatments);
    net.b1 = Tensor::zeros({latent_width}, true);
    net.w2 = he(latent_width, latent_width);
    net.b2 = Tensor::zeros({latent_width}, true);
    net.w3 = he(latent_width, latent_width);
    net.b3 = Tensor::zeros({latent_width}, true);
    return net;
}

std::vector<std::pair<std::string, TensorPtr>> MappingNetwork::parameters(
    const std::string& prefix) const {
    return {{prefix + ".fc1.weight", w1}, {prefix + ".fc1.bias", b1},
            {prefix + ".fc2.weight", w2}, {prefix + ".fc2.bias", b2},
            {prefix + ".fc3.weight", w3}, {prefix + ".fc3.bias", b3}};
}

TensorPtr map_treatment(const TensorPtr& onehot, const MappingNetwork& net) {
    if (onehot->shape.size() != 2 || onehot->shape[1] != kNumTreatments) {
        throw ShapeError("treatment encoding must be [N, 3], got " + shape_str(onehot->shape));
    }
    for (int r = 0; r < onehot->shape[0]; ++r) {
        double sum = 0.0;
        for (int c = 0; c < kNumTreatments; ++c) {
            const double v = onehot->data[static_cast<std::size_t>(r) * kNumTreatments + c];
            if (v != 0.0 && v != 1.0) {
                throw ValidationError("malformed one-hot in row " + std::to_string(r) +
                                      ": entries must be 0 or 1");
            }
            sum += v;
        }
        if (sum != 1.0) {
            throw ValidationError("malformed one-hot in row " + std::to_string(r) +
                                  ": row sum must be 1");
        }
    }
    auto h1 = leaky_relu(linear(onehot, net.w1, net.b1), kMappingLeakySlope);
    auto h2 = leaky_relu(linear(h1, net.w2, net.b2), kMappingLeakySlope);
    return linear(h2, net.w3, net.b3);
}

AffineSpecializer AffineSpecializer::init(const std::vector<int>& conv_channels,
                                          int latent_width, std::mt19937_64& rng) {
    AffineSpecializer spec;
    spec.latent_width = latent_width;
    for (int c : conv_channels) {
        if (c < 1) throw ConfigError("conv channel counts must be >= 1");
        spec.weights.push_back(Tensor::randn({2 * c, latent_width}, rng, 0.01, true));
        auto b = Tensor::zeros({2 * c}, true);
        for (int i = 0; i < c; ++i) b->data[static_cast<std::size_t>(i)] = 1.0;
        spec.biases.push_back(b);
    }
    return spec;
}

std::vector<std::pair<std::string, TensorPtr>> AffineSpecializer::parameters(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.emplace_back(prefix + std::to_string(i + 1) + ".weight", weights[i]);
        out.emplace_back(prefix + std::to_string(i + 1) + ".bias", biases[i]);
    }
    return out;
}

std::pair<TensorPtr, TensorPtr> specialize(const TensorPtr& z, int layer_index,
                                           const AffineSpecializer& spec) {
    if (layer_index < 0 || layer_index >= static_cast<int>(spec.weights.size())) {
        throw ConfigError("specialize layer index " + std::to_string(layer_index) +
                          " out of range (have " + std::to_string(spec.weights.size()) +
                          " heads)");
    }
    auto coeffs = linear(z, spec.weights[static_cast<std::size_t>(layer_index)],
                         spec.biases[static_cast<std::size_t>(layer_index)]);
    const int c = coeffs->shape[1] / 2;
    return {slice(coeffs, 1, 0, c), slice(coeffs, 1, c, c)};
}

TensorPtr adain(const TensorPtr& x, const TensorPtr& scale, const TensorPtr& bias) {
    if (x->shape.size() != 5) {
        throw ShapeError("adain input must be [N, C, D, H, W], got " + shape_str(x->shape));
    }
    const int n = x->shape[0], c = x->shape[1];
    const Shape nc{n, c};
    if (scale->shape != nc || bias->shape != nc) {
        throw ShapeError("adain modulation must be [N, C] = " + shape_str(nc) + ", got scale " +
                         shape_str(scale->shape) + " and bias " + shape_str(bias->shape));
    }
    const std::size_t v = static_cast<std::size_t>(x->shape[2]) * x->shape[3] * x->shape[4];

    auto out = Tensor::zeros(x->shape);
    out->requires_grad = x->requires_grad || scale->requires_grad || bias->requires_grad;

    // Forward caches the normalized input and the deviation for the backward
    // sweep; sigma uses the population variance with the epsilon floor.
    auto xhat = std::make_shared<std::vector<double>>(x->data.size());
    auto sd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * c);
    const double* xd = x->data.data();
    for (int i = 0; i < n * c; ++i) {
        const double* p = xd + static_cast<std::size_t>(i) * v;
        double mean = 0.0;
        for (std::size_t j = 0; j < v; ++j) mean += p[j];
        mean /= static_cast<double>(v);
        double var = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            const double d = p[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(v);
        const double s = std::sqrt(var + kInstanceNormEpsilon);
        (*sd)[static_cast<std::size_t>(i)] = s;
        const double sv = scale->data[static_cast<std::size_t>(i)];
        const double bv = bias->data[static_cast<std::size_t>(i)];
        double* xh = xhat->data() + static_cast<std::size_t>(i) * v;
        double* od = out->data.data() + static_cast<std::size_t>(i) * v;
        for (std::size_t j = 0; j < v; ++j) {
            xh[j] = (p[j] - mean) / s;
            od[j] = sv * xh[j] + bv;
        }
    }

    if (out->requires_grad) {
        out->parents = {x, scale, bias};
        TensorPtr xp = x, sp = scale, bp = bias;
        out->backprop = [xp, sp, bp, xhat, sd, n, c, v](Tensor& self) {
            const double* g = self.grad.data();
            const bool wx = xp->requires_grad, ws = sp->requires_grad, wb = bp->requires_grad;
            if (wx) xp->ensure_grad();
            if (ws) sp->ensure_grad();
            if (wb) bp->ensure_grad();
            for (int i = 0; i < n * c; ++i) {
                const double* gi = g + static_cast<std::size_t>(i) * v;
                const double* xh = xhat->data() + static_cast<std::size_t>(i) * v;
                double gsum = 0.0, gxhsum = 0.0;
                for (std::size_t j = 0; j < v; ++j) {
                    gsum += gi[j];
                    gxhsum += gi[j] * xh[j];
                }
                if (wb) bp->grad[static_cast<std::size_t>(i)] += gsum;
                if (ws) sp->grad[static_cast<std::size_t>(i)] += gxhsum;
                if (wx) {
                    // d/dx of scale * xhat + bias through the shared statistics:
                    // (scale / sd) * (g - mean(g) - xhat * mean(g * xhat))
                    const double sv = sp->data[static_cast<std::size_t>(i)];
                    const double k = sv / (*sd)[static_cast<std::size_t>(i)];
                    const double gmean = gsum / static_cast<double>(v);
                    const double gxhmean = gxhsum / static_cast<double>(v);
                    double* gx = xp->grad.data() + static_cast<std::size_t>(i) * v;
                    for (std::size_t j = 0; j < v; ++j) {
                        gx[j] += k * (gi[j] - gmean - xh[j] * gxhmean);
                    }
                }
            }
        };
    }
    return out;
}

} // namespace survnet
