#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "survnet/conditioning.hpp"

namespace survnet {

/// Survival label range in days; generator output is clamped into it and
/// loaded labels are validated against it.
inline constexpr double kSurvivalMinDays = 5.0;
inline constexpr double kSurvivalMaxDays = 1767.0;

double clamp_days(double days);

struct VolumeSample {
    std::string subject_id;
    int channels = 0;
    int depth = 0, height = 0, width = 0;
    std::vector<double> voxels; // [channels][depth][height][width], row-major
    Treatment treatment = Treatment::NA;
    double survival_days = 0.0;
    bool has_mask = false; // when true, the last channel is a binary mask
};

struct SyntheticConfig {
    int n_subjects = 236;
    int extent = 16;
    std::array<double, 3> treatment_probs{0.504, 0.042, 0.454}; // (GTR, STR, NA)
    double noise_std = 30.0;
    std::uint64_t seed = 0;

    // Survival model constants: clamp(base - slope * nu * 1000 + effect + eta)
    // where nu is the tumor volume fraction, effect(GTR) = effect_gtr *
    // exp(-nu / nu0), effect(STR) likewise, effect(NA) = 0.
    double base = 450.0;
    double slope = 0.9;
    double effect_gtr = 300.0;
    double effect_str = 150.0;
    double nu0 = 0.02;

    // Pseudo-modality blob amplitudes and per-voxel background noise.
    std::array<double, 4> amplitudes{0.6, 1.0, 0.8, 0.9};
    double background_noise_std = 0.05;

    void validate() const;
};

/// Resection-conditioned survival effect in days.
double treatment_effect(Treatment t, double nu, const SyntheticConfig& cfg);

/// Deterministic phantom cohort: per subject, one Gaussian blob rendered
/// into four pseudo-modality channels plus a binary mask channel, with a
/// survival label driven by tumor volume fraction and treatment. Treatment
/// counts follow largest-remainder quotas of `treatment_probs` exactly.
/// Per-subject draws use independent streams seeded from seed ^ index.
std::vector<VolumeSample> generate_synthetic(const SyntheticConfig& cfg);

/// Per-channel z-scoring (population std); the mask channel is untouched.
/// Throws ValidationError when a channel has zero variance.
void normalize(VolumeSample& sample);

struct FoldSplit {
    int k = 0;
    std::map<std::string, int> assignments; // subject_id -> fold

    int fold_of(const std::string& subject_id) const;
    std::vector<int> test_indices(const std::vector<VolumeSample>& samples, int fold) const;
    std::vector<int> train_indices(const std::vector<VolumeSample>& samples, int fold) const;
};

/// Subject-level stratified k-fold: subjects are grouped by treatment,
/// shuffled inside each group by the seed, and dealt round-robin, so
/// per-treatment fold counts differ by at most one.
FoldSplit stratified_kfold(const std::vector<VolumeSample>& samples, int k, std::uint64_t seed);

// ---- on-disk formats -------------------------------------------------------
//
// A dataset directory holds manifest.json (array of subject records) plus one
// "VOL1" binary per subject: 4-byte magic, four little-endian uint32 extents
// (C, D, H, W), then C*D*H*W little-endian float64 voxels, channel-major
// row-major. Round-trips are bit-exact.

void write_volume(const std::filesystem::path& path, int channels, int depth, int height,
                  int width, const std::vector<double>& voxels);
VolumeSample read_volume(const std::filesystem::path& path);

void write_dataset(const std::vector<VolumeSample>& samples, const std::filesystem::path& dir);
std::vector<VolumeSample> read_dataset(const std::filesystem::path& dir);

} // namespace survnet
