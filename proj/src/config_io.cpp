#include "survnet/config_io.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>

namespace survnet {

using ordered_json = nlohmann::ordered_json;

namespace {

void check_object(const ordered_json& obj, const std::string& where) {
    if (!obj.is_object()) throw ConfigError("'" + where + "' must be a JSON object");
}

void check_keys(const ordered_json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) {
            return it.key() == k;
        });
        if (!known) throw ConfigError("unknown key '" + where + "." + it.key() + "'");
    }
}

template <typename T>
T get_field(const ordered_json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("'" + where + "." + key + "' has the wrong type");
    }
}

template <typename T, std::size_t N>
std::array<T, N> get_array(const ordered_json& obj, const char* key,
                           const std::array<T, N>& fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const auto& node = obj.at(key);
    if (!node.is_array() || node.size() != N) {
        throw ConfigError("'" + where + "." + key + "' must be an array of " +
                          std::to_string(N) + " values");
    }
    std::array<T, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        try {
            out[i] = node[i].get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("'" + where + "." + key + "[" + std::to_string(i) +
                              "]' has the wrong type");
        }
    }
    return out;
}

} // namespace

ordered_json synthetic_config_to_json(const SyntheticConfig& cfg) {
    ordered_json j;
    j["n_subjects"] = cfg.n_subjects;
    j["extent"] = cfg.extent;
    j["treatment_probs"] = cfg.treatment_probs;
    j["noise_std"] = cfg.noise_std;
    j["seed"] = cfg.seed;
    j["base"] = cfg.base;
    j["slope"] = cfg.slope;
    j["effect_gtr"] = cfg.effect_gtr;
    j["effect_str"] = cfg.effect_str;
    j["nu0"] = cfg.nu0;
    j["amplitudes"] = cfg.amplitudes;
    j["background_noise_std"] = cfg.background_noise_std;
    return j;
}

SyntheticConfig synthetic_config_from_json(const ordered_json& obj, const std::string& where) {
    check_object(obj, where);
    check_keys(obj,
               {"n_subjects", "extent", "treatment_probs", "noise_std", "seed", "base", "slope",
                "effect_gtr", "effect_str", "nu0", "amplitudes", "background_noise_std"},
               where);
    SyntheticConfig cfg;
    cfg.n_subjects = get_field(obj, "n_subjects", cfg.n_subjects, where);
    cfg.extent = get_field(obj, "extent", cfg.extent, where);
    cfg.treatment_probs = get_array(obj, "treatment_probs", cfg.treatment_probs, where);
    cfg.noise_std = get_field(obj, "noise_std", cfg.noise_std, where);
    cfg.seed = get_field(obj, "seed", cfg.seed, where);
    cfg.base = get_field(obj, "base", cfg.base, where);
    cfg.slope = get_field(obj, "slope", cfg.slope, where);
    cfg.effect_gtr = get_field(obj, "effect_gtr", cfg.effect_gtr, where);
    cfg.effect_str = get_field(obj, "effect_str", cfg.effect_str, where);
    cfg.nu0 = get_field(obj, "nu0", cfg.nu0, where);
    cfg.amplitudes = get_array(obj, "amplitudes", cfg.amplitudes, where);
    cfg.background_noise_std =
        get_field(obj, "background_noise_std", cfg.background_noise_std, where);
    cfg.validate();
    return cfg;
}

ordered_json model_config_to_json(const SurvivalNetConfig& cfg) {
    ordered_json j;
    j["in_channels"] = cfg.in_channels;
    j["conv_channels"] = cfg.conv_channels;
    j["fc_widths"] = cfg.fc_widths;
    j["fusion"] = to_string(cfg.fusion);
    j["latent_width"] = cfg.latent_width;
    j["input_extent"] = cfg.input_extent;
    j["seed"] = cfg.seed;
    return j;
}

SurvivalNetConfig model_config_from_json(const ordered_json& obj, const std::string& where) {
    check_object(obj, where);
    check_keys(obj,
               {"in_channels", "conv_channels", "fc_widths", "fusion", "latent_width",
                "input_extent", "seed"},
               where);
    SurvivalNetConfig cfg;
    cfg.in_channels = get_field(obj, "in_channels", cfg.in_channels, where);
    cfg.conv_channels = get_array(obj, "conv_channels", cfg.conv_channels, where);
    cfg.fc_widths = get_array(obj, "fc_widths", cfg.fc_widths, where);
    if (obj.contains("fusion")) {
        cfg.fusion = fusion_from_string(get_field<std::string>(obj, "fusion", "", where));
    }
    cfg.latent_width = get_field(obj, "latent_width", cfg.latent_width, where);
    cfg.input_extent = get_field(obj, "input_extent", cfg.input_extent, where);
    cfg.seed = get_field(obj, "seed", cfg.seed, where);
    cfg.validate();
    return cfg;
}

namespace {

ordered_json train_section_json(const TrainConfig& cfg) {
    ordered_json j;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["lr_decay_every"] = cfg.lr_decay_every;
    j["lr_decay_factor"] = cfg.lr_decay_factor;
    j["betas"] = std::array<double, 2>{cfg.beta1, cfg.beta2};
    j["eps"] = cfg.adam_eps;
    j["seed"] = cfg.seed;
    j["k_folds"] = cfg.k_folds;
    j["normalize_inputs"] = cfg.normalize_inputs;
    return j;
}

} // namespace

ordered_json train_config_to_json(const TrainConfig& cfg) {
    ordered_json j = train_section_json(cfg);
    j["model"] = model_config_to_json(cfg.model);
    return j;
}

TrainConfig train_config_from_json(const ordered_json& obj, const std::string& where) {
    check_object(obj, where);
    check_keys(obj,
               {"epochs", "batch_size", "learning_rate", "lr_decay_every", "lr_decay_factor",
                "betas", "eps", "seed", "k_folds", "normalize_inputs", "model"},
               where);
    TrainConfig cfg;
    cfg.epochs = get_field(obj, "epochs", cfg.epochs, where);
    cfg.batch_size = get_field(obj, "batch_size", cfg.batch_size, where);
    cfg.learning_rate = get_field(obj, "learning_rate", cfg.learning_rate, where);
    cfg.lr_decay_every = get_field(obj, "lr_decay_every", cfg.lr_decay_every, where);
    cfg.lr_decay_factor = get_field(obj, "lr_decay_factor", cfg.lr_decay_factor, where);
    const auto betas =
        get_array(obj, "betas", std::array<double, 2>{cfg.beta1, cfg.beta2}, where);
    cfg.beta1 = betas[0];
    cfg.beta2 = betas[1];
    cfg.adam_eps = get_field(obj, "eps", cfg.adam_eps, where);
    cfg.seed = get_field(obj, "seed", cfg.seed, where);
    cfg.k_folds = get_field(obj, "k_folds", cfg.k_folds, where);
    cfg.normalize_inputs = get_field(obj, "normalize_inputs", cfg.normalize_inputs, where);
    if (obj.contains("model")) {
        cfg.model = model_config_from_json(obj.at("model"), where + ".model");
    }
    cfg.validate();
    return cfg;
}

AppConfig parse_config(const ordered_json& doc, const std::string& where) {
    check_object(doc, where);
    check_keys(doc, {"synthetic", "model", "train"}, where);
    AppConfig cfg;
    if (doc.contains("synthetic")) {
        cfg.synthetic = synthetic_config_from_json(doc.at("synthetic"), where + ".synthetic");
    }
    if (doc.contains("train")) {
        if (doc.contains("model") && doc.at("train").is_object() &&
            doc.at("train").contains("model")) {
            throw ConfigError("'" + where +
                              "': give the model either at the top level or inside 'train', "
                              "not both");
        }
        cfg.train = train_config_from_json(doc.at("train"), where + ".train");
    }
    if (doc.contains("model")) {
        cfg.train.model = model_config_from_json(doc.at("model"), where + ".model");
        cfg.train.validate();
    }
    return cfg;
}

AppConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    ordered_json doc;
    try {
        doc = ordered_json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& err) {
        throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + err.what());
    }
    return parse_config(doc, path.filename().string());
}

ordered_json effective_config_json(const AppConfig& cfg) {
    ordered_json j;
    j["synthetic"] = synthetic_config_to_json(cfg.synthetic);
    j["model"] = model_config_to_json(cfg.train.model);
    j["train"] = train_section_json(cfg.train);
    return j;
}

ordered_json run_report_json(const RunReport& report) {
    ordered_json j;
    j["fusion"] = to_string(report.fusion);
    j["seed"] = report.seed;
    j["fold_mae"] = report.fold_mae;
    j["mean_mae"] = report.mean_mae;
    j["std_mae"] = report.std_mae;
    j["loss_histories"] = report.loss_histories;
    return j;
}

ordered_json ablation_report_json(const AblationReport& report) {
    ordered_json rows = ordered_json::array();
    for (const auto& row : report.rows) {
        ordered_json r;
        r["fusion"] = to_string(row.fusion);
        r["seed_mean_mae"] = row.seed_mean_mae;
        r["mean_mae"] = row.mean_mae;
        r["std_mae"] = row.std_mae;
        r["fold_std"] = row.fold_std;
        ordered_json runs = ordered_json::array();
        for (const auto& run : row.runs) runs.push_back(run_report_json(run));
        r["runs"] = std::move(runs);
        rows.push_back(std::move(r));
    }
    ordered_json j;
    j["rows"] = std::move(rows);
    return j;
}

} // namespace survnet
