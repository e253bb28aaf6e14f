#include "survnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "survnet/bytes.hpp"
#include "survnet/rng.hpp"

namespace survnet {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

double clamp_days(double days) { return std::clamp(days, kSurvivalMinDays, kSurvivalMaxDays); }

void SyntheticConfig::validate() const {
    if (n_subjects < 1) {
        throw ConfigError("n_subjects must be >= 1, got " + std::to_string(n_subjects));
    }
    if (extent < 8) throw ConfigError("extent must be >= 8, got " + std::to_string(extent));
    double sum = 0.0;
    for (double p : treatment_probs) {
        if (p < 0.0) throw ConfigError("treatment_probs must be non-negative");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("treatment_probs must sum to 1");
    if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
    if (nu0 <= 0.0) throw ConfigError("nu0 must be > 0");
    if (background_noise_std < 0.0) throw ConfigError("background_noise_std must be >= 0");
}

double treatment_effect(Treatment t, double nu, const SyntheticConfig& cfg) {
    switch (t) {
        case Treatment::GTR: return cfg.effect_gtr * std::exp(-nu / cfg.nu0);
        case Treatment::STR: return cfg.effect_str * std::exp(-nu / cfg.nu0);
        case Treatment::NA: return 0.0;
    }
    throw ConfigError("unknown treatment code");
}

namespace {

// Largest-remainder apportionment of n into the given proportions. Keeps the
// headline cohort composition exact instead of merely expected.
std::array<int, 3> quota_counts(int n, const std::array<double, 3>& probs) {
    std::array<int, 3> counts{};
    std::array<double, 3> remainders{};
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double ideal = n * probs[i];
        counts[i] = static_cast<int>(std::floor(ideal));
        remainders[i] = ideal - counts[i];
        assigned += counts[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (remainders[a] != remainders[b]) return remainders[a] > remainders[b];
        return a < b;
    });
    for (int i = 0; assigned < n; ++i, ++assigned) counts[order[i % 3]] += 1;
    return counts;
}

std::string subject_name(int index) {
    std::ostringstream os;
    os << "s";
    os.width(4);
    os.fill('0');
    os << index;
    return os.str();
}

} // namespace

std::vector<VolumeSample> generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    const int n = cfg.n_subjects;
    const int e = cfg.extent;
    const std::size_t voxels_per_channel = static_cast<std::size_t>(e) * e * e;

    // Treatment assignment: exact quota counts, order shuffled by the seed.
    const std::array<int, 3> counts = quota_counts(n, cfg.treatment_probs);
    std::vector<Treatment> assignment;
    assignment.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < counts[0]; ++i) assignment.push_back(Treatment::GTR);
    for (int i = 0; i < counts[1]; ++i) assignment.push_back(Treatment::STR);
    for (int i = 0; i < counts[2]; ++i) assignment.push_back(Treatment::NA);
    std::mt19937_64 assign_rng(mix_seed(cfg.seed, 0x74726561746dULL));
    std::shuffle(assignment.begin(), assignment.end(), assign_rng);

    std::vector<VolumeSample> samples(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        VolumeSample& s = samples[static_cast<std::size_t>(i)];
        s.subject_id = subject_name(i);
        s.channels = 5;
        s.depth = s.height = s.width = e;
        s.has_mask = true;
        s.treatment = assignment[static_cast<std::size_t>(i)];
        s.voxels.assign(5 * voxels_per_channel, 0.0);

        // Independent per-subject stream; order of subjects is irrelevant.
        std::mt19937_64 rng(splitmix64(cfg.seed ^ static_cast<std::uint64_t>(i)));
        std::uniform_real_distribution<double> radius_dist(2.0, static_cast<double>(e) / 3.0);
        const double r = radius_dist(rng);
        std::uniform_real_distribution<double> center_dist(r, static_cast<double>(e) - 1.0 - r);
        const double cx = center_dist(rng);
        const double cy = center_dist(rng);
        const double cz = center_dist(rng);
        std::normal_distribution<double> bg(0.0, cfg.background_noise_std);

        for (int k = 0; k < 4; ++k) {
            double* chan = s.voxels.data() + static_cast<std::size_t>(k) * voxels_per_channel;
            const double a = cfg.amplitudes[static_cast<std::size_t>(k)];
            std::size_t vi = 0;
            for (int d = 0; d < e; ++d) {
                for (int h = 0; h < e; ++h) {
                    for (int w = 0; w < e; ++w, ++vi) {
                        const double dd = d - cx, dh = h - cy, dw = w - cz;
                        const double dist2 = dd * dd + dh * dh + dw * dw;
                        chan[vi] = a * std::exp(-dist2 / (2.0 * r * r)) + bg(rng);
                    }
                }
            }
        }

        // Mask = support of the clean (pre-noise) unit-amplitude blob.
        double* mask = s.voxels.data() + 4 * voxels_per_channel;
        std::size_t tumor_voxels = 0;
        std::size_t vi = 0;
        for (int d = 0; d < e; ++d) {
            for (int h = 0; h < e; ++h) {
                for (int w = 0; w < e; ++w, ++vi) {
                    const double dd = d - cx, dh = h - cy, dw = w - cz;
                    const double dist2 = dd * dd + dh * dh + dw * dw;
                    const bool inside = std::exp(-dist2 / (2.0 * r * r)) > 0.5;
                    mask[vi] = inside ? 1.0 : 0.0;
                    tumor_voxels += inside ? 1u : 0u;
                }
            }
        }
        const double nu = static_cast<double>(tumor_voxels) / static_cast<double>(voxels_per_channel);

        std::normal_distribution<double> label_noise(0.0, cfg.noise_std);
        const double eta = cfg.noise_std > 0.0 ? label_noise(rng) : 0.0;
        s.survival_days = clamp_days(cfg.base - cfg.slope * nu * 1000.0 +
                                     treatment_effect(s.treatment, nu, cfg) + eta);
    }
    return samples;
}

void normalize(VolumeSample& sample) {
    const std::size_t v =
        static_cast<std::size_t>(sample.depth) * sample.height * sample.width;
    const int data_channels = sample.has_mask ? sample.channels - 1 : sample.channels;
    for (int c = 0; c < data_channels; ++c) {
        double* p = sample.voxels.data() + static_cast<std::size_t>(c) * v;
        double mean = 0.0;
        for (std::size_t i = 0; i < v; ++i) mean += p[i];
        mean /= static_cast<double>(v);
        double var = 0.0;
        for (std::size_t i = 0; i < v; ++i) {
            const double d = p[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(v);
        if (var == 0.0) {
            throw ValidationError("cannot normalize subject '" + sample.subject_id +
                                  "': channel " + std::to_string(c) + " has zero variance");
        }
        const double inv_sd = 1.0 / std::sqrt(var);
        for (std::size_t i = 0; i < v; ++i) p[i] = (p[i] - mean) * inv_sd;
    }
}

int FoldSplit::fold_of(const std::string& subject_id) const {
    auto it = assignments.find(subject_id);
    if (it == assignments.end()) {
        throw ConfigError("subject '" + subject_id + "' is not part of this split");
    }
    return it->second;
}

std::vector<int> FoldSplit::test_indices(const std::vector<VolumeSample>& samples,
                                         int fold) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (fold_of(samples[i].subject_id) == fold) out.push_back(static_cast<int>(i));
    }
    return out;
}

std::vector<int> FoldSplit::train_indices(const std::vector<VolumeSample>& samples,
                                          int fold) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (fold_of(samples[i].subject_id) != fold) out.push_back(static_cast<int>(i));
    }
    return out;
}

FoldSplit stratified_kfold(const std::vector<VolumeSample>& samples, int k, std::uint64_t seed) {
    const int n = static_cast<int>(samples.size());
    if (k < 2 || k > n) {
        throw ConfigError("fold count k = " + std::to_string(k) +
                          " must satisfy 2 <= k <= n_subjects = " + std::to_string(n));
    }
    FoldSplit split;
    split.k = k;
    for (int label = 0; label < kNumTreatments; ++label) {
        std::vector<std::string> group;
        for (const auto& s : samples) {
            if (static_cast<int>(s.treatment) == label) group.push_back(s.subject_id);
        }
        // Canonical order first so the split does not depend on sample order.
        std::sort(group.begin(), group.end());
        std::mt19937_64 rng(mix_seed(seed, 0x666f6c64ULL + static_cast<std::uint64_t>(label)));
        std::shuffle(group.begin(), group.end(), rng);
        for (std::size_t p = 0; p < group.size(); ++p) {
            auto [it, inserted] = split.assignments.emplace(group[p], static_cast<int>(p % k));
            if (!inserted) {
                throw ValidationError("duplicate subject_id '" + group[p] + "' in cohort");
            }
        }
    }
    return split;
}

// ---- binary volume format ---------------------------------------------------

namespace {

constexpr char kVolumeMagic[4] = {'V', 'O', 'L', '1'};

using bytes::get_f64;
using bytes::get_u32;
using bytes::put_f64;
using bytes::put_u32;
using bytes::read_file;
using bytes::write_file;

} // namespace

void write_volume(const fs::path& path, int channels, int depth, int height, int width,
                  const std::vector<double>& voxels) {
    const std::size_t count =
        static_cast<std::size_t>(channels) * depth * height * width;
    if (voxels.size() != count) {
        throw ShapeError("volume payload has " + std::to_string(voxels.size()) +
                         " values, extents need " + std::to_string(count));
    }
    std::string bytes;
    bytes.reserve(20 + count * 8);
    bytes.append(kVolumeMagic, 4);
    put_u32(bytes, static_cast<std::uint32_t>(channels));
    put_u32(bytes, static_cast<std::uint32_t>(depth));
    put_u32(bytes, static_cast<std::uint32_t>(height));
    put_u32(bytes, static_cast<std::uint32_t>(width));
    for (double v : voxels) put_f64(bytes, v);
    write_file(path, bytes);
}

VolumeSample read_volume(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kVolumeMagic, 4) != 0) {
        throw FormatError("'" + path.string() + "': bad magic at byte offset 0 (expected VOL1)");
    }
    if (bytes.size() < 20) {
        throw FormatError("'" + path.string() + "': truncated header at byte offset " +
                          std::to_string(bytes.size()));
    }
    VolumeSample s;
    s.channels = static_cast<int>(get_u32(bytes, 4));
    s.depth = static_cast<int>(get_u32(bytes, 8));
    s.height = static_cast<int>(get_u32(bytes, 12));
    s.width = static_cast<int>(get_u32(bytes, 16));
    if (s.channels < 1 || s.depth < 1 || s.height < 1 || s.width < 1) {
        throw FormatError("'" + path.string() + "': non-positive extents in header");
    }
    const std::size_t count =
        static_cast<std::size_t>(s.channels) * s.depth * s.height * s.width;
    const std::size_t expected = 20 + count * 8;
    if (bytes.size() != expected) {
        throw FormatError("'" + path.string() + "': payload ends at byte offset " +
                          std::to_string(bytes.size()) + ", expected " +
                          std::to_string(expected));
    }
    s.voxels.resize(count);
    for (std::size_t i = 0; i < count; ++i) s.voxels[i] = get_f64(bytes, 20 + i * 8);
    return s;
}

void write_dataset(const std::vector<VolumeSample>& samples, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory '" + dir.string() + "'");

    ordered_json manifest = ordered_json::array();
    for (const auto& s : samples) {
        if (s.depth != s.height || s.height != s.width) {
            throw ConfigError("dataset volumes must be cubic, subject '" + s.subject_id +
                              "' is " + std::to_string(s.depth) + "x" + std::to_string(s.height) +
                              "x" + std::to_string(s.width));
        }
        const std::string file = s.subject_id + ".vol";
        write_volume(dir / file, s.channels, s.depth, s.height, s.width, s.voxels);
        ordered_json rec;
        rec["subject_id"] = s.subject_id;
        rec["treatment"] = to_string(s.treatment);
        rec["survival_days"] = s.survival_days;
        rec["file"] = file;
        rec["channels"] = s.channels;
        rec["extent"] = s.depth;
        manifest.push_back(rec);
    }
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<VolumeSample> read_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw IoError("dataset manifest '" + manifest_path.string() + "' does not exist");
    }
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::parse_error& err) {
        throw FormatError("'" + manifest_path.string() + "': " + err.what());
    }
    if (!manifest.is_array()) {
        throw FormatError("'" + manifest_path.string() + "': expected a top-level array");
    }

    std::vector<VolumeSample> samples;
    samples.reserve(manifest.size());
    for (const auto& rec : manifest) {
        if (!rec.is_object() || !rec.contains("subject_id") || !rec.contains("treatment") ||
            !rec.contains("survival_days") || !rec.contains("file") || !rec.contains("channels") ||
            !rec.contains("extent")) {
            throw FormatError("'" + manifest_path.string() +
                              "': record is missing a required field");
        }
        const std::string subject_id = rec["subject_id"].get<std::string>();
        const fs::path vol_path = dir / rec["file"].get<std::string>();
        if (!fs::exists(vol_path)) {
            throw IoError("volume file for subject '" + subject_id + "' is missing: '" +
                          vol_path.string() + "'");
        }
        VolumeSample s = read_volume(vol_path);
        s.subject_id = subject_id;
        s.treatment = treatment_from_string(rec["treatment"].get<std::string>());
        s.survival_days = rec["survival_days"].get<double>();

        const int channels = rec["channels"].get<int>();
        const int extent = rec["extent"].get<int>();
        if (s.channels != channels || s.depth != extent || s.height != extent ||
            s.width != extent) {
            throw FormatError("subject '" + subject_id + "': volume extents [" +
                              std::to_string(s.channels) + ", " + std::to_string(s.depth) + ", " +
                              std::to_string(s.height) + ", " + std::to_string(s.width) +
                              "] do not match the manifest (channels " + std::to_string(channels) +
                              ", extent " + std::to_string(extent) + ")");
        }
        if (s.survival_days < kSurvivalMinDays || s.survival_days > kSurvivalMaxDays) {
            throw ValidationError("subject '" + subject_id + "': survival_days " +
                                  std::to_string(s.survival_days) + " outside [5, 1767]");
        }
        s.has_mask = (s.channels == 5);
        samples.push_back(std::move(s));
    }
    return samples;
}

} // namespace survnet
