#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "survnet/ops.hpp"
#include "survnet/tensor.hpp"

namespace survnet {

/// Resection status attached to every subject. One-hot order: (GTR, STR, NA).
enum class Treatment { GTR = 0, STR = 1, NA = 2 };

inline constexpr int kNumTreatments = 3;

const char* to_string(Treatment t);
Treatment treatment_from_string(const std::string& s);

/// [N, 3] one-hot rows in enum order.
TensorPtr one_hot(const std::vector<Treatment>& ts);
TensorPtr one_hot(Treatment t);

inline constexpr double kMappingLeakySlope = 0.2;

/// Three affine layers, all `latent_width` wide, with leaky-ReLU (slope 0.2)
/// between them and no activation after the last.
struct MappingNetwork {
    int latent_width = 16;
    TensorPtr w1, b1, w2, b2, w3, b3;

    static MappingNetwork init(int latent_width, std::mt19937_64& rng);
    std::vector<std::pair<std::string, TensorPtr>> parameters(const std::string& prefix) const;
};

/// Latent code for a batch of one-hot treatments: [N, 3] -> [N, latent_width].
/// Rows must be exact one-hots (entries in {0, 1}, summing to 1).
TensorPtr map_treatment(const TensorPtr& onehot, const MappingNetwork& net);

/// One affine head per conv layer, mapping the latent code to that layer's
/// 2*C_i modulation coefficients: the first C_i are the scale, the last C_i
/// the bias. Weights start near zero (std 0.01); the bias vector starts at
/// (1,...,1, 0,...,0) so modulation begins as plain instance normalization.
struct AffineSpecializer {
    int latent_width = 16;
    std::vector<TensorPtr> weights; // layer i: [2*C_i, latent_width]
    std::vector<TensorPtr> biases;  // layer i: [2*C_i]

    static AffineSpecializer init(const std::vector<int>& conv_channels, int latent_width,
                                  std::mt19937_64& rng);
    std::vector<std::pair<std::string, TensorPtr>> parameters(const std::string& prefix) const;
};

/// (scale, bias) pair for conv layer `layer_index`, each [N, C_i].
std::pair<TensorPtr, TensorPtr> specialize(const TensorPtr& z, int layer_index,
                                           const AffineSpecializer& spec);

/// Adaptive instance normalization:
///   out = scale * (x - mean(x)) / sqrt(var(x) + 1e-5) + bias
/// with per-(sample, channel) spatial statistics. x: [N, C, D, H, W];
/// scale, bias: [N, C].
TensorPtr adain(const TensorPtr& x, const TensorPtr& scale, const TensorPtr& bias);

} // namespace survnet
