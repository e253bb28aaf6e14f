#include "survnet/model.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <sstream>

namespace survnet {

const char* to_string(Fusion f) {
    switch (f) {
        case Fusion::None: return "none";
        case Fusion::Concat: return "concat";
        case Fusion::AdaIN: return "adain";
    }
    throw ConfigError("unknown fusion mode");
}

Fusion fusion_from_string(const std::string& s) {
    if (s == "none") return Fusion::None;
    if (s == "concat") return Fusion::Concat;
    if (s == "adain") return Fusion::AdaIN;
    throw ConfigError("unknown fusion mode '" + s + "' (expected none, concat or adain)");
}

void SurvivalNetConfig::validate() const {
    if (in_channels != 4 && in_channels != 5) {
        throw ConfigError("in_channels must be 4 or 5, got " + std::to_string(in_channels));
    }
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
        if (conv_channels[i] < 1) {
            throw ConfigError("conv_channels[" + std::to_string(i) + "] must be >= 1, got " +
                              std::to_string(conv_channels[i]));
        }
    }
    for (std::size_t i = 0; i < fc_widths.size(); ++i) {
        if (fc_widths[i] < 1) {
            throw ConfigError("fc_widths[" + std::to_string(i) + "] must be >= 1, got " +
                              std::to_string(fc_widths[i]));
        }
    }
    if (fc_widths.back() != 1) {
        throw ConfigError("the final fc width must be 1, got " + std::to_string(fc_widths.back()));
    }
    if (latent_width < 1) {
        throw ConfigError("latent_width must be >= 1, got " + std::to_string(latent_width));
    }
    if (input_extent < 1) {
        throw ConfigError("input_extent must be >= 1, got " + std::to_string(input_extent));
    }
    int extent = input_extent;
    for (int stage = 1; stage <= 4; ++stage) {
        if (extent % 2 != 0) {
            throw ConfigError("input_extent " + std::to_string(input_extent) +
                              " leaves an odd extent of " + std::to_string(extent) +
                              " at pooling stage " + std::to_string(stage));
        }
        extent /= 2;
    }
}

SurvivalNet build(const SurvivalNetConfig& config) {
    config.validate();
    SurvivalNet net;
    net.config = config;
    std::mt19937_64 rng(config.seed);

    auto he = [&rng](const Shape& shape, int fan_in) {
        return Tensor::randn(shape, rng, std::sqrt(2.0 / fan_in), true);
    };

    int cin = config.in_channels;
    for (int i = 0; i < 4; ++i) {
        const int cout = config.conv_channels[static_cast<std::size_t>(i)];
        net.conv_w.push_back(he({cout, cin, 3, 3, 3}, cin * 27));
        net.conv_b.push_back(Tensor::zeros({cout}, true));
        cin = cout;
    }

    int fin = config.conv_channels.back();
    if (config.fusion == Fusion::Concat) fin += kNumTreatments;
    for (int i = 0; i < 3; ++i) {
        const int fout = config.fc_widths[static_cast<std::size_t>(i)];
        net.fc_w.push_back(he({fout, fin}, fin));
        net.fc_b.push_back(Tensor::zeros({fout}, true));
        fin = fout;
    }

    if (config.fusion == Fusion::AdaIN) {
        net.mapping = MappingNetwork::init(config.latent_width, rng);
        net.specializer = AffineSpecializer::init(
            {config.conv_channels.begin(), config.conv_channels.end()}, config.latent_width, rng);
    }
    return net;
}

std::vector<std::pair<std::string, TensorPtr>> SurvivalNet::parameters() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
        out.emplace_back("conv" + std::to_string(i + 1) + ".weight", conv_w[i]);
        out.emplace_back("conv" + std::to_string(i + 1) + ".bias", conv_b[i]);
    }
    for (std::size_t i = 0; i < fc_w.size(); ++i) {
        out.emplace_back("fc" + std::to_string(i + 1) + ".weight", fc_w[i]);
        out.emplace_back("fc" + std::to_string(i + 1) + ".bias", fc_b[i]);
    }
    if (config.fusion == Fusion::AdaIN) {
        for (auto& p : mapping.parameters("mapping")) out.push_back(std::move(p));
        for (auto& p : specializer.parameters("adain_head")) out.push_back(std::move(p));
    }
    return out;
}

TensorPtr forward(const SurvivalNet& net, const TensorPtr& volume, const TensorPtr& onehot) {
    const auto& cfg = net.config;
    const int e = cfg.input_extent;
    if (volume->shape.size() != 5 || volume->shape[1] != cfg.in_channels ||
        volume->shape[2] != e || volume->shape[3] != e || volume->shape[4] != e) {
        throw ShapeError("expected volume [N, " + std::to_string(cfg.in_channels) + ", " +
                         std::to_string(e) + ", " + std::to_string(e) + ", " + std::to_string(e) +
                         "], got " + shape_str(volume->shape));
    }
    const int n = volume->shape[0];
    if (cfg.fusion != Fusion::None) {
        if (!onehot) throw ShapeError("fusion mode requires a treatment encoding");
        if (onehot->shape.size() != 2 || onehot->shape[0] != n ||
            onehot->shape[1] != kNumTreatments) {
            throw ShapeError("treatment encoding must be [" + std::to_string(n) + ", 3], got " +
                             shape_str(onehot->shape));
        }
    }

    TensorPtr z;
    if (cfg.fusion == Fusion::AdaIN) z = map_treatment(onehot, net.mapping);

    TensorPtr h = volume;
    for (int i = 0; i < 4; ++i) {
        h = conv3d(h, net.conv_w[static_cast<std::size_t>(i)],
                   net.conv_b[static_cast<std::size_t>(i)], 1, 1);
        if (cfg.fusion == Fusion::AdaIN) {
            auto [scale, bias] = specialize(z, i, net.specializer);
            h = adain(h, scale, bias);
        }
        h = relu(h);
        h = maxpool3d(h, 2);
    }

    TensorPtr f = flatten(global_avg_pool(h));
    if (cfg.fusion == Fusion::Concat) f = concat(f, onehot, 1);
    for (int i = 0; i < 3; ++i) {
        f = linear(f, net.fc_w[static_cast<std::size_t>(i)], net.fc_b[static_cast<std::size_t>(i)]);
        if (i < 2) f = relu(f);
    }
    return f;
}

TensorPtr forward(const SurvivalNet& net, const TensorPtr& volume,
                  const std::vector<Treatment>& treatments) {
    TensorPtr oh;
    if (net.config.fusion != Fusion::None) {
        if (static_cast<int>(treatments.size()) != volume->shape[0]) {
            throw ShapeError("treatment count " + std::to_string(treatments.size()) +
                             " does not match batch size " + std::to_string(volume->shape[0]));
        }
        oh = one_hot(treatments);
    }
    return forward(net, volume, oh);
}

std::string checksum_hex(const std::vector<double>& values) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : values) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 0x100000001b3ULL;
        }
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

std::vector<ManifestEntry> param_manifest(const SurvivalNet& net) {
    std::vector<ManifestEntry> entries;
    for (const auto& [name, tensor] : net.parameters()) {
        entries.push_back({name, tensor->shape, checksum_hex(tensor->data)});
    }
    return entries;
}

} // namespace survnet
