#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "survnet/data.hpp"
#include "survnet/model.hpp"

namespace survnet {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 8;
    double learning_rate = 1e-3;
    // Step decay: the rate is multiplied by lr_decay_factor after every
    // lr_decay_every epochs (0 disables it). The effective rate depends only
    // on the absolute epoch index, so a resumed run replays the same steps.
    int lr_decay_every = 0;
    double lr_decay_factor = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int k_folds = 5;
    bool normalize_inputs = true;
    SurvivalNetConfig model;

    void validate() const;
};

// Learning rate in force during the given absolute epoch.
double scheduled_lr(const TrainConfig& cfg, int epoch);

// First-moment / second-moment buffers, one pair per parameter tensor, in the
// same stable order as SurvivalNet::parameters().
struct AdamState {
    std::int64_t step_count = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    static AdamState init(const SurvivalNet& net);
};

// One update from the gradients currently stored on the parameters.
// Bias-corrected update: p -= lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(SurvivalNet& net, AdamState& state, const TrainConfig& cfg);

// Deterministic shuffle seed for one epoch of one fold; stateless so a resumed
// run replays the exact same batch order.
std::uint64_t epoch_shuffle_seed(std::uint64_t run_seed, int fold, int epoch);

// Model-init seed for one fold. Independent of the fusion mode so ablation arms
// share their randomness stream.
std::uint64_t fold_model_seed(std::uint64_t run_seed, int fold);

// Copies the cohort into model-ready form: optionally drops the mask channel
// (when the model takes 4 input channels) and z-scores each data channel.
std::vector<VolumeSample> prepare_samples(const std::vector<VolumeSample>& samples,
                                          int in_channels, bool normalize_inputs);

TensorPtr batch_volumes(const std::vector<VolumeSample>& samples,
                        const std::vector<int>& indices);
TensorPtr batch_onehots(const std::vector<VolumeSample>& samples,
                        const std::vector<int>& indices);
TensorPtr batch_targets(const std::vector<VolumeSample>& samples,
                        const std::vector<int>& indices);

// Runs epochs [first_epoch, first_epoch + n_epochs); returns the mean training
// loss of each epoch. Throws NumericError if a loss or update goes non-finite.
std::vector<double> train_epochs(SurvivalNet& net, AdamState& opt,
                                 const std::vector<VolumeSample>& samples,
                                 const std::vector<int>& train_ids, const TrainConfig& cfg,
                                 int fold, int first_epoch, int n_epochs);

// Mean absolute error over the given subjects. Absolute errors are sorted
// before summation so the result is independent of subject order; predictions
// are clamped to the valid survival range when clamp_predictions is set.
double evaluate(const SurvivalNet& net, const std::vector<VolumeSample>& samples,
                const std::vector<int>& indices, int batch_size,
                bool clamp_predictions = true);

struct RunReport {
    Fusion fusion = Fusion::AdaIN;
    std::uint64_t seed = 0;
    std::vector<double> fold_mae;
    double mean_mae = 0.0;
    double std_mae = 0.0;  // population std across folds
    std::vector<std::vector<double>> loss_histories;
};

struct CvOutcome {
    RunReport report;
    FoldSplit split;
    std::vector<SurvivalNet> nets;
    std::vector<AdamState> opts;
};

// Full stratified k-fold run: trains one model per held-out fold. on_fold,
// when set, fires after each fold with its test MAE.
CvOutcome run_cv(const std::vector<VolumeSample>& raw, const TrainConfig& cfg,
                 const std::function<void(int, double)>& on_fold = {});

struct AblationRow {
    Fusion fusion = Fusion::None;
    std::vector<double> seed_mean_mae;  // mean CV MAE per seed
    double mean_mae = 0.0;              // mean over seeds
    double std_mae = 0.0;               // population std over seed means
    double fold_std = 0.0;              // population std over every (seed, fold) MAE
    std::vector<RunReport> runs;
};

struct AblationReport {
    std::vector<AblationRow> rows;  // always ordered none, concat, adain
};

// Repeats run_cv for every fusion mode and every seed. Each seed re-derives the
// split, the fold init seeds, and the shuffle streams from scratch. on_run,
// when set, fires after each completed run with its mean MAE.
AblationReport run_ablation(const std::vector<VolumeSample>& raw, const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds,
                            const std::function<void(Fusion, std::uint64_t, double)>& on_run = {});

double population_std(const std::vector<double>& values);

struct Checkpoint {
    TrainConfig train;
    int fold = 0;
    int epochs_done = 0;
    SurvivalNet net;
    AdamState opt;
};

// Binary snapshot of one fold's model and optimizer, with the full training
// configuration embedded so a resumed run needs nothing but the dataset.
void save_checkpoint(const std::filesystem::path& path, const SurvivalNet& net,
                     const AdamState& opt, const TrainConfig& cfg, int fold, int epochs_done);

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Field-by-field comparison; throws ConfigError naming the first field that
// differs between a requested configuration and a checkpointed one.
void require_same_train_config(const TrainConfig& requested, const TrainConfig& stored);

} // namespace survnet
