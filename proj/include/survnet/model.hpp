#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "survnet/conditioning.hpp"
#include "survnet/ops.hpp"

namespace survnet {

/// How the treatment code enters the network.
enum class Fusion { None, Concat, AdaIN };

const char* to_string(Fusion f);
Fusion fusion_from_string(const std::string& s);

struct SurvivalNetConfig {
    int in_channels = 5;
    std::array<int, 4> conv_channels{8, 16, 32, 64};
    std::array<int, 3> fc_widths{64, 32, 1};
    Fusion fusion = Fusion::AdaIN;
    int latent_width = 16;
    int input_extent = 16;
    std::uint64_t seed = 0;

    /// Throws ConfigError on any violation; names the offending field.
    void validate() const;
};

/// Volumetric regression backbone: four conv stages (3x3x3, stride 1,
/// padding 1), each followed by optional AdaIN modulation, ReLU and 2x max
/// pooling; then global average pooling and three fully connected layers
/// ending in a single raw-days output.
struct SurvivalNet {
    SurvivalNetConfig config;
    std::vector<TensorPtr> conv_w, conv_b; // 4 stages
    std::vector<TensorPtr> fc_w, fc_b;     // 3 layers
    MappingNetwork mapping;                // fusion == AdaIN only
    AffineSpecializer specializer;         // fusion == AdaIN only

    /// Parameters in fixed declaration order (conv, fc, then conditioning).
    std::vector<std::pair<std::string, TensorPtr>> parameters() const;
};

/// Deterministic seeded construction: He fan-in initialization for conv and
/// fc weights, zero biases, near-identity affine heads.
SurvivalNet build(const SurvivalNetConfig& config);

/// Batched forward pass. volume: [N, in_channels, e, e, e]; onehot: [N, 3]
/// (ignored when fusion == None, required otherwise). Returns [N, 1] raw
/// survival-day estimates; no output clamping.
TensorPtr forward(const SurvivalNet& net, const TensorPtr& volume, const TensorPtr& onehot);
TensorPtr forward(const SurvivalNet& net, const TensorPtr& volume,
                  const std::vector<Treatment>& treatments);

struct ManifestEntry {
    std::string name;
    Shape shape;
    std::string checksum; // FNV-1a 64 over the little-endian value bytes
};

std::vector<ManifestEntry> param_manifest(const SurvivalNet& net);

/// FNV-1a 64 of a double buffer, fed byte-wise little-endian.
std::string checksum_hex(const std::vector<double>& values);

} // namespace survnet
