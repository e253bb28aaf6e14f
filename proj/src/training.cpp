#include "survnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "survnet/bytes.hpp"
#include "survnet/config_io.hpp"
#include "survnet/ops.hpp"
#include "survnet/rng.hpp"

namespace survnet {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1, got " + std::to_string(batch_size));
    }
    // learning_rate 0 is allowed: it freezes the weights while the optimizer
    // bookkeeping still advances, which tests rely on.
    if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("beta1 must be in [0, 1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("beta2 must be in [0, 1)");
    if (adam_eps <= 0.0) throw ConfigError("adam_eps must be > 0");
    if (lr_decay_every < 0) {
        throw ConfigError("lr_decay_every must be >= 0, got " + std::to_string(lr_decay_every));
    }
    if (lr_decay_factor <= 0.0 || lr_decay_factor > 1.0) {
        throw ConfigError("lr_decay_factor must be in (0, 1]");
    }
    if (k_folds < 2) throw ConfigError("k_folds must be >= 2, got " + std::to_string(k_folds));
    model.validate();
}

double scheduled_lr(const TrainConfig& cfg, int epoch) {
    if (cfg.lr_decay_every <= 0 || cfg.lr_decay_factor == 1.0) return cfg.learning_rate;
    const int drops = epoch / cfg.lr_decay_every;
    return cfg.learning_rate * std::pow(cfg.lr_decay_factor, static_cast<double>(drops));
}

AdamState AdamState::init(const SurvivalNet& net) {
    AdamState st;
    for (const auto& [name, p] : net.parameters()) {
        (void)name;
        st.m.emplace_back(p->data.size(), 0.0);
        st.v.emplace_back(p->data.size(), 0.0);
    }
    return st;
}

void adam_step(SurvivalNet& net, AdamState& st, const TrainConfig& cfg) {
    const auto params = net.parameters();
    if (st.m.size() != params.size() || st.v.size() != params.size()) {
        throw ConfigError("optimizer state covers " + std::to_string(st.m.size()) +
                          " parameters, model has " + std::to_string(params.size()));
    }
    st.step_count += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step_count));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi].second;
        auto& m = st.m[pi];
        auto& v = st.v[pi];
        if (m.size() != p.data.size()) {
            throw ShapeError("optimizer state for '" + params[pi].first + "' holds " +
                             std::to_string(m.size()) + " values, parameter has " +
                             std::to_string(p.data.size()));
        }
        const bool has_grad = !p.grad.empty();
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double g = has_grad ? p.grad[i] : 0.0;
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter '" + params[pi].first + "'");
            }
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            p.data[i] -=
                cfg.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
        }
    }
}

std::uint64_t epoch_shuffle_seed(std::uint64_t run_seed, int fold, int epoch) {
    return mix_seed(mix_seed(run_seed, 0x7368756666ULL + static_cast<std::uint64_t>(fold)),
                    0x65706f6368ULL + static_cast<std::uint64_t>(epoch));
}

std::uint64_t fold_model_seed(std::uint64_t run_seed, int fold) {
    return mix_seed(run_seed, 0x6d6f64656cULL + static_cast<std::uint64_t>(fold));
}

std::vector<VolumeSample> prepare_samples(const std::vector<VolumeSample>& samples,
                                          int in_channels, bool normalize_inputs) {
    std::vector<VolumeSample> out = samples;
    for (auto& s : out) {
        if (in_channels == 4 && s.channels == 5 && s.has_mask) {
            // Mask is stored last, so dropping it is a truncation.
            const std::size_t v =
                static_cast<std::size_t>(s.depth) * s.height * s.width;
            s.voxels.resize(4 * v);
            s.channels = 4;
            s.has_mask = false;
        } else if (s.channels != in_channels) {
            throw ConfigError("model expects " + std::to_string(in_channels) +
                              " input channels but subject '" + s.subject_id + "' has " +
                              std::to_string(s.channels));
        }
        if (normalize_inputs) normalize(s);
    }
    return out;
}

TensorPtr batch_volumes(const std::vector<VolumeSample>& samples,
                        const std::vector<int>& indices) {
    if (indices.empty()) throw ConfigError("cannot build an empty batch");
    const VolumeSample& first = samples.at(static_cast<std::size_t>(indices[0]));
    const Shape shape{static_cast<int>(indices.size()), first.channels, first.depth,
                      first.height, first.width};
    auto t = Tensor::zeros(shape);
    const std::size_t per = first.voxels.size();
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const VolumeSample& s = samples.at(static_cast<std::size_t>(indices[n]));
        if (s.voxels.size() != per || s.channels != first.channels || s.depth != first.depth ||
            s.height != first.height || s.width != first.width) {
            throw ShapeError("subject '" + s.subject_id +
                             "' does not match the batch volume extents");
        }
        std::memcpy(t->data.data() + n * per, s.voxels.data(), per * sizeof(double));
    }
    return t;
}

TensorPtr batch_onehots(const std::vector<VolumeSample>& samples,
                        const std::vector<int>& indices) {
    std::vector<Treatment> ts;
    ts.reserve(indices.size());
    for (int i : indices) ts.push_back(samples.at(static_cast<std::size_t>(i)).treatment);
    return one_hot(ts);
}

TensorPtr batch_targets(const std::vector<VolumeSample>& samples,
                        const std::vector<int>& indices) {
    std::vector<double> days;
    days.reserve(indices.size());
    for (int i : indices) days.push_back(samples.at(static_cast<std::size_t>(i)).survival_days);
    return Tensor::from({static_cast<int>(indices.size()), 1}, std::move(days));
}

std::vector<double> train_epochs(SurvivalNet& net, AdamState& opt,
                                 const std::vector<VolumeSample>& samples,
                                 const std::vector<int>& train_ids, const TrainConfig& cfg,
                                 int fold, int first_epoch, int n_epochs) {
    if (train_ids.empty()) throw ConfigError("cannot train on an empty subject list");
    const auto params = net.parameters();
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(n_epochs));
    for (int epoch = first_epoch; epoch < first_epoch + n_epochs; ++epoch) {
        TrainConfig step_cfg = cfg;
        step_cfg.learning_rate = scheduled_lr(cfg, epoch);
        std::vector<int> order = train_ids;
        std::mt19937_64 rng(epoch_shuffle_seed(cfg.seed, fold, epoch));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            auto volumes = batch_volumes(samples, batch);
            auto onehots = batch_onehots(samples, batch);
            auto targets = batch_targets(samples, batch);

            for (const auto& [name, p] : params) {
                (void)name;
                p->zero_grad();
            }
            auto loss = mae(forward(net, volumes, onehots), targets);
            const double value = loss->item();
            if (!std::isfinite(value)) {
                throw NumericError("training loss became non-finite at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index));
            }
            backward(loss);
            adam_step(net, opt, step_cfg);
            loss_sum += value * static_cast<double>(batch.size());
        }
        history.push_back(loss_sum / static_cast<double>(order.size()));
    }
    return history;
}

double evaluate(const SurvivalNet& net, const std::vector<VolumeSample>& samples,
                const std::vector<int>& indices, int batch_size, bool clamp_predictions) {
    if (indices.empty()) throw ConfigError("cannot evaluate an empty subject list");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    std::vector<double> errors;
    errors.reserve(indices.size());
    for (std::size_t start = 0; start < indices.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
        const std::vector<int> batch(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                     indices.begin() + static_cast<std::ptrdiff_t>(end));
        auto pred = forward(net, batch_volumes(samples, batch), batch_onehots(samples, batch));
        for (std::size_t j = 0; j < batch.size(); ++j) {
            double p = pred->data[j];
            if (clamp_predictions) p = clamp_days(p);
            const double truth =
                samples.at(static_cast<std::size_t>(batch[j])).survival_days;
            errors.push_back(std::abs(p - truth));
        }
    }
    // Fixed summation order regardless of how the subjects were listed.
    std::sort(errors.begin(), errors.end());
    const double total = std::accumulate(errors.begin(), errors.end(), 0.0);
    return total / static_cast<double>(errors.size());
}

double population_std(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const double mean =
        std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double acc = 0.0;
    for (double x : values) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(values.size()));
}

CvOutcome run_cv(const std::vector<VolumeSample>& raw, const TrainConfig& cfg,
                 const std::function<void(int, double)>& on_fold) {
    cfg.validate();
    const auto prepared = prepare_samples(raw, cfg.model.in_channels, cfg.normalize_inputs);
    CvOutcome out;
    out.split = stratified_kfold(prepared, cfg.k_folds, cfg.seed);
    out.report.fusion = cfg.model.fusion;
    out.report.seed = cfg.seed;
    for (int fold = 0; fold < cfg.k_folds; ++fold) {
        SurvivalNetConfig mc = cfg.model;
        mc.seed = fold_model_seed(cfg.seed, fold);
        SurvivalNet net = build(mc);
        AdamState opt = AdamState::init(net);
        auto history = train_epochs(net, opt, prepared, out.split.train_indices(prepared, fold),
                                    cfg, fold, 0, cfg.epochs);
        out.report.fold_mae.push_back(evaluate(net, prepared,
                                               out.split.test_indices(prepared, fold),
                                               cfg.batch_size, true));
        if (on_fold) on_fold(fold, out.report.fold_mae.back());
        out.report.loss_histories.push_back(std::move(history));
        out.nets.push_back(std::move(net));
        out.opts.push_back(std::move(opt));
    }
    out.report.mean_mae =
        std::accumulate(out.report.fold_mae.begin(), out.report.fold_mae.end(), 0.0) /
        static_cast<double>(cfg.k_folds);
    out.report.std_mae = population_std(out.report.fold_mae);
    return out;
}

AblationReport run_ablation(const std::vector<VolumeSample>& raw, const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds,
                            const std::function<void(Fusion, std::uint64_t, double)>& on_run) {
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    AblationReport report;
    for (Fusion fusion : {Fusion::None, Fusion::Concat, Fusion::AdaIN}) {
        AblationRow row;
        row.fusion = fusion;
        std::vector<double> all_fold_maes;
        for (std::uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.model.fusion = fusion;
            CvOutcome out = run_cv(raw, cfg);
            if (on_run) on_run(fusion, seed, out.report.mean_mae);
            row.seed_mean_mae.push_back(out.report.mean_mae);
            all_fold_maes.insert(all_fold_maes.end(), out.report.fold_mae.begin(),
                                 out.report.fold_mae.end());
            row.runs.push_back(std::move(out.report));
        }
        row.mean_mae =
            std::accumulate(row.seed_mean_mae.begin(), row.seed_mean_mae.end(), 0.0) /
            static_cast<double>(row.seed_mean_mae.size());
        row.std_mae = population_std(row.seed_mean_mae);
        row.fold_std = population_std(all_fold_maes);
        report.rows.push_back(std::move(row));
    }
    return report;
}

// ---- checkpoints -------------------------------------------------------------
//
// Layout: "CKPT1" magic, u64 little-endian header length, JSON header (full
// training configuration, fold index, progress counters, parameter manifest),
// then one f64 little-endian blob per parameter followed by the optimizer's
// first- and second-moment blobs in the same order.

namespace {

constexpr char kCheckpointMagic[5] = {'C', 'K', 'P', 'T', '1'};
constexpr std::size_t kCheckpointPrefix = 5 + 8;

void append_blob(std::string& out, const std::vector<double>& values) {
    for (double v : values) bytes::put_f64(out, v);
}

void read_blob(const std::string& in, std::size_t& off, std::vector<double>& values) {
    for (double& v : values) {
        v = bytes::get_f64(in, off);
        off += 8;
    }
}

} // namespace

void save_checkpoint(const fs::path& path, const SurvivalNet& net, const AdamState& opt,
                     const TrainConfig& cfg, int fold, int epochs_done) {
    const auto params = net.parameters();
    if (opt.m.size() != params.size() || opt.v.size() != params.size()) {
        throw ConfigError("optimizer state does not match the model being checkpointed");
    }

    ordered_json header;
    header["format"] = "CKPT1";
    header["train"] = train_config_to_json(cfg);
    header["fold"] = fold;
    header["epochs_done"] = epochs_done;
    header["optimizer_step"] = opt.step_count;
    ordered_json plist = ordered_json::array();
    for (const auto& [name, p] : params) {
        ordered_json entry;
        entry["name"] = name;
        entry["shape"] = p->shape;
        plist.push_back(std::move(entry));
    }
    header["params"] = std::move(plist);
    const std::string head = header.dump();

    std::string out;
    out.append(kCheckpointMagic, 5);
    bytes::put_u64(out, head.size());
    out += head;
    for (const auto& [name, p] : params) {
        (void)name;
        append_blob(out, p->data);
    }
    for (const auto& m : opt.m) append_blob(out, m);
    for (const auto& v : opt.v) append_blob(out, v);
    bytes::write_file(path, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
    const std::string raw = bytes::read_file(path);
    if (raw.size() < 5 || std::memcmp(raw.data(), kCheckpointMagic, 5) != 0) {
        throw FormatError("'" + path.string() + "': bad magic at byte offset 0 (expected CKPT1)");
    }
    if (raw.size() < kCheckpointPrefix) {
        throw FormatError("'" + path.string() + "': truncated before the header length field");
    }
    const std::uint64_t head_len = bytes::get_u64(raw, 5);
    if (kCheckpointPrefix + head_len > raw.size()) {
        throw FormatError("'" + path.string() + "': header claims " + std::to_string(head_len) +
                          " bytes but the file ends at byte offset " +
                          std::to_string(raw.size()));
    }
    ordered_json header;
    try {
        header = ordered_json::parse(raw.substr(kCheckpointPrefix, head_len));
    } catch (const nlohmann::json::parse_error& err) {
        throw FormatError("'" + path.string() + "': header is not valid JSON: " + err.what());
    }
    for (const char* key : {"format", "train", "fold", "epochs_done", "optimizer_step", "params"}) {
        if (!header.contains(key)) {
            throw FormatError("'" + path.string() + "': header is missing '" + std::string(key) +
                              "'");
        }
    }
    if (header["format"].get<std::string>() != "CKPT1") {
        throw FormatError("'" + path.string() + "': unsupported format tag");
    }

    Checkpoint ck;
    ck.train = train_config_from_json(header["train"], "checkpoint train");
    ck.fold = header["fold"].get<int>();
    ck.epochs_done = header["epochs_done"].get<int>();
    ck.net = build(ck.train.model);
    ck.opt = AdamState::init(ck.net);
    ck.opt.step_count = header["optimizer_step"].get<std::int64_t>();

    const auto params = ck.net.parameters();
    const auto& plist = header["params"];
    if (!plist.is_array() || plist.size() != params.size()) {
        throw ShapeError("'" + path.string() + "': checkpoint lists " +
                         std::to_string(plist.size()) + " parameters, model has " +
                         std::to_string(params.size()));
    }
    std::size_t payload = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string name = plist[i]["name"].get<std::string>();
        const Shape shape = plist[i]["shape"].get<Shape>();
        if (name != params[i].first) {
            throw ShapeError("checkpoint parameter '" + name + "' does not match model parameter '" +
                             params[i].first + "'");
        }
        if (shape != params[i].second->shape) {
            throw ShapeError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                             " but the model expects " + shape_str(params[i].second->shape));
        }
        payload += params[i].second->data.size() * 8;
    }
    const std::size_t expected = kCheckpointPrefix + head_len + payload * 3;
    if (raw.size() != expected) {
        throw FormatError("'" + path.string() + "': payload ends at byte offset " +
                          std::to_string(raw.size()) + ", expected " + std::to_string(expected));
    }

    std::size_t off = kCheckpointPrefix + head_len;
    for (const auto& [name, p] : params) {
        (void)name;
        read_blob(raw, off, p->data);
    }
    for (auto& m : ck.opt.m) read_blob(raw, off, m);
    for (auto& v : ck.opt.v) read_blob(raw, off, v);
    return ck;
}

namespace {

template <typename T>
std::string show(const T& v) {
    if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
    else if constexpr (std::is_same_v<T, Fusion>) return to_string(v);
    else if constexpr (std::is_arithmetic_v<T>) return std::to_string(v);
    else {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(v[i]);
        }
        return s + "]";
    }
}

template <typename T>
void require_field(const char* field, const T& requested, const T& stored) {
    if (requested != stored) {
        throw ConfigError("configuration mismatch with checkpoint: '" + std::string(field) +
                          "' is " + show(requested) + " here but " + show(stored) +
                          " in the checkpoint");
    }
}

} // namespace

void require_same_train_config(const TrainConfig& requested, const TrainConfig& stored) {
    // `epochs` is deliberately not compared: extending it is the whole point
    // of resuming. `model.seed` is derived per fold, so it is skipped too.
    require_field("batch_size", requested.batch_size, stored.batch_size);
    require_field("learning_rate", requested.learning_rate, stored.learning_rate);
    require_field("lr_decay_every", requested.lr_decay_every, stored.lr_decay_every);
    require_field("lr_decay_factor", requested.lr_decay_factor, stored.lr_decay_factor);
    require_field("beta1", requested.beta1, stored.beta1);
    require_field("beta2", requested.beta2, stored.beta2);
    require_field("adam_eps", requested.adam_eps, stored.adam_eps);
    require_field("seed", requested.seed, stored.seed);
    require_field("k_folds", requested.k_folds, stored.k_folds);
    require_field("normalize_inputs", requested.normalize_inputs, stored.normalize_inputs);
    require_field("model.in_channels", requested.model.in_channels, stored.model.in_channels);
    require_field("model.conv_channels", requested.model.conv_channels,
                  stored.model.conv_channels);
    require_field("model.fc_widths", requested.model.fc_widths, stored.model.fc_widths);
    require_field("model.fusion", requested.model.fusion, stored.model.fusion);
    require_field("model.latent_width", requested.model.latent_width, stored.model.latent_width);
    require_field("model.input_extent", requested.model.input_extent, stored.model.input_extent);
}

} // namespace survnet
