#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "survnet/config_io.hpp"
#include "survnet/data.hpp"
#include "survnet/gradcheck.hpp"
#include "survnet/model.hpp"
#include "survnet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace survnet;

namespace {

void write_json_file(const fs::path& path, const ordered_json& doc) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string fmt(double v, int precision = 3) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
    std::string out;
    std::string config;
    int subjects = 0;
    std::uint64_t seed = 0;
    int extent = 0;
    double noise_std = 0.0;
    CLI::Option *subjects_opt = nullptr, *seed_opt = nullptr, *extent_opt = nullptr,
                *noise_opt = nullptr;
};

int cmd_generate(const GenerateArgs& a) {
    AppConfig cfg;
    if (!a.config.empty()) cfg = load_config_file(a.config);
    if (*a.subjects_opt) cfg.synthetic.n_subjects = a.subjects;
    if (*a.seed_opt) cfg.synthetic.seed = a.seed;
    if (*a.extent_opt) cfg.synthetic.extent = a.extent;
    if (*a.noise_opt) cfg.synthetic.noise_std = a.noise_std;
    cfg.synthetic.validate();

    const auto samples = generate_synthetic(cfg.synthetic);
    write_dataset(samples, a.out);
    ordered_json echo;
    echo["synthetic"] = synthetic_config_to_json(cfg.synthetic);
    write_json_file(fs::path(a.out) / "generation.json", echo);

    int counts[kNumTreatments] = {0, 0, 0};
    for (const auto& s : samples) counts[static_cast<int>(s.treatment)] += 1;
    std::cout << "wrote " << samples.size() << " subjects to " << a.out << " (GTR " << counts[0]
              << ", STR " << counts[1] << ", NA " << counts[2] << ")\n";
    return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out = "train_out";
    std::string resume;
    std::string fusion;
    std::uint64_t seed = 0;
    int epochs = 0;
    double lr = 0.0;
    int lr_decay_every = 0;
    double lr_decay_factor = 1.0;
    int batch_size = 0;
    int k_folds = 0;
    bool no_normalize = false;
    CLI::Option *seed_opt = nullptr, *epochs_opt = nullptr, *lr_opt = nullptr,
                *decay_every_opt = nullptr, *decay_factor_opt = nullptr, *batch_opt = nullptr,
                *k_opt = nullptr, *no_norm_opt = nullptr;
};

fs::path fold_ckpt_path(const fs::path& dir, int fold) {
    return dir / ("fold" + std::to_string(fold) + ".ckpt");
}

void write_train_report(const fs::path& out_dir, const TrainConfig& cfg, const FoldSplit& split,
                        const RunReport& report) {
    ordered_json doc;
    doc["config"] = train_config_to_json(cfg);
    doc["fold_assignments"] = split.assignments;
    doc["report"] = run_report_json(report);
    write_json_file(out_dir / "report.json", doc);
}

void print_run_summary(const RunReport& report) {
    std::cout << "mean test MAE " << fmt(report.mean_mae) << " days (std " << fmt(report.std_mae)
              << " over " << report.fold_mae.size() << " folds)\n";
}

int cmd_train_resume(const TrainArgs& a) {
    for (const auto& [set, name] :
         std::initializer_list<std::pair<bool, const char*>>{
             {!a.config.empty(), "--config"},
             {!a.fusion.empty(), "--fusion"},
             {static_cast<bool>(*a.seed_opt), "--seed"},
             {static_cast<bool>(*a.lr_opt), "--lr"},
             {static_cast<bool>(*a.decay_every_opt), "--lr-decay-every"},
             {static_cast<bool>(*a.decay_factor_opt), "--lr-decay-factor"},
             {static_cast<bool>(*a.batch_opt), "--batch-size"},
             {static_cast<bool>(*a.k_opt), "--k-folds"},
             {static_cast<bool>(*a.no_norm_opt), "--no-normalize"}}) {
        if (set) {
            throw ConfigError(std::string("cannot combine ") + name +
                              " with --resume; the checkpoint fixes it");
        }
    }

    const fs::path resume_dir(a.resume);
    Checkpoint first = load_checkpoint(fold_ckpt_path(resume_dir, 0));
    TrainConfig cfg = first.train;
    if (*a.epochs_opt) cfg.epochs = a.epochs;
    if (cfg.epochs < first.epochs_done) {
        throw ConfigError("target epochs " + std::to_string(cfg.epochs) +
                          " is below the " + std::to_string(first.epochs_done) +
                          " already completed");
    }
    cfg.validate();

    const auto raw = read_dataset(a.data);
    const auto prepared = prepare_samples(raw, cfg.model.in_channels, cfg.normalize_inputs);
    const FoldSplit split = stratified_kfold(prepared, cfg.k_folds, cfg.seed);

    const fs::path out_dir(a.out);
    fs::create_directories(out_dir);

    RunReport report;
    report.fusion = cfg.model.fusion;
    report.seed = cfg.seed;
    for (int fold = 0; fold < cfg.k_folds; ++fold) {
        Checkpoint ck =
            fold == 0 ? std::move(first) : load_checkpoint(fold_ckpt_path(resume_dir, fold));
        require_same_train_config(cfg, ck.train);
        if (ck.fold != fold) {
            throw FormatError("checkpoint '" + fold_ckpt_path(resume_dir, fold).string() +
                              "' holds fold " + std::to_string(ck.fold));
        }
        auto history = train_epochs(ck.net, ck.opt, prepared, split.train_indices(prepared, fold),
                                    cfg, fold, ck.epochs_done, cfg.epochs - ck.epochs_done);
        const double mae =
            evaluate(ck.net, prepared, split.test_indices(prepared, fold), cfg.batch_size, true);
        std::cout << "fold " << fold << ": test MAE " << fmt(mae) << " days (epochs "
                  << ck.epochs_done << ".." << cfg.epochs << ")\n";
        report.fold_mae.push_back(mae);
        report.loss_histories.push_back(std::move(history));
        save_checkpoint(fold_ckpt_path(out_dir, fold), ck.net, ck.opt, cfg, fold, cfg.epochs);
    }
    report.mean_mae = std::accumulate(report.fold_mae.begin(), report.fold_mae.end(), 0.0) /
                      static_cast<double>(report.fold_mae.size());
    report.std_mae = population_std(report.fold_mae);
    write_train_report(out_dir, cfg, split, report);
    print_run_summary(report);
    return 0;
}

int cmd_train(const TrainArgs& a) {
    if (!a.resume.empty()) return cmd_train_resume(a);

    AppConfig app_cfg;
    if (!a.config.empty()) app_cfg = load_config_file(a.config);
    TrainConfig cfg = app_cfg.train;
    if (!a.fusion.empty()) cfg.model.fusion = fusion_from_string(a.fusion);
    if (*a.seed_opt) cfg.seed = a.seed;
    if (*a.epochs_opt) cfg.epochs = a.epochs;
    if (*a.lr_opt) cfg.learning_rate = a.lr;
    if (*a.decay_every_opt) cfg.lr_decay_every = a.lr_decay_every;
    if (*a.decay_factor_opt) cfg.lr_decay_factor = a.lr_decay_factor;
    if (*a.batch_opt) cfg.batch_size = a.batch_size;
    if (*a.k_opt) cfg.k_folds = a.k_folds;
    if (*a.no_norm_opt) cfg.normalize_inputs = false;
    cfg.validate();

    const auto raw = read_dataset(a.data);
    const fs::path out_dir(a.out);
    fs::create_directories(out_dir);

    CvOutcome out = run_cv(raw, cfg, [](int fold, double mae) {
        std::cout << "fold " << fold << ": test MAE " << fmt(mae) << " days\n";
    });
    for (int fold = 0; fold < cfg.k_folds; ++fold) {
        save_checkpoint(fold_ckpt_path(out_dir, fold), out.nets[static_cast<std::size_t>(fold)],
                        out.opts[static_cast<std::size_t>(fold)], cfg, fold, cfg.epochs);
    }
    write_train_report(out_dir, cfg, out.split, out.report);
    print_run_summary(out.report);
    return 0;
}

// ---- ablate -----------------------------------------------------------------

struct AblateArgs {
    std::string data;
    std::string config;
    std::string out = "ablation.json";
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    int epochs = 0;
    double lr = 0.0;
    int lr_decay_every = 0;
    double lr_decay_factor = 1.0;
    int batch_size = 0;
    int k_folds = 0;
    CLI::Option *epochs_opt = nullptr, *lr_opt = nullptr, *decay_every_opt = nullptr,
                *decay_factor_opt = nullptr, *batch_opt = nullptr, *k_opt = nullptr;
};

int cmd_ablate(const AblateArgs& a) {
    AppConfig app_cfg;
    if (!a.config.empty()) app_cfg = load_config_file(a.config);
    TrainConfig cfg = app_cfg.train;
    if (*a.epochs_opt) cfg.epochs = a.epochs;
    if (*a.lr_opt) cfg.learning_rate = a.lr;
    if (*a.decay_every_opt) cfg.lr_decay_every = a.lr_decay_every;
    if (*a.decay_factor_opt) cfg.lr_decay_factor = a.lr_decay_factor;
    if (*a.batch_opt) cfg.batch_size = a.batch_size;
    if (*a.k_opt) cfg.k_folds = a.k_folds;
    cfg.validate();

    const auto raw = read_dataset(a.data);
    const AblationReport report =
        run_ablation(raw, cfg, a.seeds, [](Fusion fusion, std::uint64_t seed, double mae) {
            std::cout << "fusion=" << to_string(fusion) << " seed=" << seed << ": mean MAE "
                      << fmt(mae) << " days\n";
        });

    ordered_json doc;
    doc["config"] = train_config_to_json(cfg);
    doc["seeds"] = a.seeds;
    doc["ablation"] = ablation_report_json(report);
    write_json_file(a.out, doc);

    std::cout << "\n" << std::left << std::setw(8) << "fusion" << std::setw(12) << "mean_mae"
              << std::setw(16) << "std_over_seeds" << "fold_std\n";
    for (const auto& row : report.rows) {
        std::cout << std::left << std::setw(8) << to_string(row.fusion) << std::setw(12)
                  << fmt(row.mean_mae) << std::setw(16) << fmt(row.std_mae) << fmt(row.fold_std)
                  << "\n";
    }
    std::cout << "wrote " << a.out << "\n";
    return 0;
}

// ---- predict / compare --------------------------------------------------------

struct PredictArgs {
    std::string checkpoint;
    std::string volume;
    std::string treatment;
    bool json = false;
};

VolumeSample load_query_volume(const std::string& path) {
    VolumeSample s = read_volume(path);
    s.subject_id = fs::path(path).stem().string();
    s.has_mask = (s.channels == 5);
    return s;
}

int cmd_predict(const PredictArgs& a) {
    Checkpoint ck = load_checkpoint(a.checkpoint);
    if (a.treatment.empty() && ck.train.model.fusion != Fusion::None) {
        throw ConfigError("--treatment is required for a treatment-conditioned model");
    }
    const Treatment t =
        a.treatment.empty() ? Treatment::NA : treatment_from_string(a.treatment);

    std::vector<VolumeSample> query{load_query_volume(a.volume)};
    const auto prepared =
        prepare_samples(query, ck.train.model.in_channels, ck.train.normalize_inputs);
    const auto pred = forward(ck.net, batch_volumes(prepared, {0}), one_hot(t));
    const double days = clamp_days(pred->data[0]);

    if (a.json) {
        ordered_json doc;
        doc["volume"] = a.volume;
        doc["treatment"] = to_string(t);
        doc["days"] = days;
        std::cout << doc.dump(2) << "\n";
    } else {
        std::cout << "predicted survival: " << fmt(days, 2) << " days (" << to_string(t)
                  << ")\n";
    }
    return 0;
}

struct CompareArgs {
    std::string checkpoint;
    std::string volume;
    bool json = false;
};

int cmd_compare(const CompareArgs& a) {
    Checkpoint ck = load_checkpoint(a.checkpoint);
    std::vector<VolumeSample> query{load_query_volume(a.volume)};
    const auto prepared =
        prepare_samples(query, ck.train.model.in_channels, ck.train.normalize_inputs);

    // One forward over three copies of the volume: every per-sample path is
    // independent, so this matches three separate passes exactly.
    const std::vector<Treatment> all{Treatment::GTR, Treatment::STR, Treatment::NA};
    const auto pred = forward(ck.net, batch_volumes(prepared, {0, 0, 0}), one_hot(all));

    struct Row {
        Treatment treatment;
        double days;
    };
    std::vector<Row> rows;
    for (std::size_t i = 0; i < all.size(); ++i) {
        rows.push_back({all[i], clamp_days(pred->data[i])});
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& x, const Row& y) { return x.days > y.days; });

    const bool invariant = (ck.train.model.fusion == Fusion::None);
    if (invariant) {
        std::cerr << "warning: this model ignores the treatment input; "
                     "the three predictions are identical\n";
    }

    if (a.json) {
        ordered_json out_rows = ordered_json::array();
        for (const auto& r : rows) {
            ordered_json row;
            row["treatment"] = to_string(r.treatment);
            row["days"] = r.days;
            out_rows.push_back(std::move(row));
        }
        ordered_json doc;
        doc["volume"] = a.volume;
        doc["rows"] = std::move(out_rows);
        doc["treatment_invariant"] = invariant;
        if (invariant) {
            doc["best"] = nullptr;
        } else {
            doc["best"] = to_string(rows.front().treatment);
        }
        std::cout << doc.dump(2) << "\n";
    } else {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const bool best = (!invariant && i == 0);
            std::cout << std::left << std::setw(5) << to_string(rows[i].treatment)
                      << fmt(rows[i].days, 2) << (best ? "  <- best" : "") << "\n";
        }
    }
    return 0;
}

// ---- gradcheck ----------------------------------------------------------------

struct GradcheckArgs {
    std::uint64_t seed = 0;
    double tol = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    const auto results = run_gradcheck_suite(a.seed, a.tol);
    std::cout << std::left << std::setw(26) << "operation" << std::setw(14) << "max_rel_err"
              << std::setw(11) << "resamples" << "status\n";
    int passed = 0;
    for (const auto& r : results) {
        std::ostringstream err;
        err << std::scientific << std::setprecision(3) << r.max_rel_err;
        std::cout << std::left << std::setw(26) << r.name << std::setw(14) << err.str()
                  << std::setw(11) << r.resamples << (r.pass ? "PASS" : "FAIL") << "\n";
        passed += r.pass ? 1 : 0;
    }
    std::cout << passed << "/" << results.size() << " passed (tolerance "
              << std::scientific << std::setprecision(1) << a.tol << ")\n";
    return passed == static_cast<int>(results.size()) ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"treatment-conditioned volumetric survival regression"};
    app.require_subcommand(1);
    int rc = 0;

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "write a synthetic cohort to disk");
    generate->add_option("-o,--out", gen.out, "output dataset directory")->required();
    generate->add_option("-c,--config", gen.config, "JSON config file");
    gen.subjects_opt = generate->add_option("--subjects", gen.subjects, "cohort size");
    gen.seed_opt = generate->add_option("--seed", gen.seed, "generator seed");
    gen.extent_opt = generate->add_option("--extent", gen.extent, "cubic volume extent");
    gen.noise_opt = generate->add_option("--noise-std", gen.noise_std, "label noise (days)");
    generate->callback([&] { rc = cmd_generate(gen); });

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "cross-validated training run");
    train->add_option("--data", tr.data, "dataset directory")->required();
    train->add_option("-c,--config", tr.config, "JSON config file");
    train->add_option("-o,--out", tr.out, "output directory for checkpoints and report");
    train->add_option("--resume", tr.resume, "directory holding fold checkpoints to continue");
    train->add_option("--fusion", tr.fusion, "none, concat or adain");
    tr.seed_opt = train->add_option("--seed", tr.seed, "run seed");
    tr.epochs_opt = train->add_option("--epochs", tr.epochs, "total epochs");
    tr.lr_opt = train->add_option("--lr", tr.lr, "learning rate");
    tr.decay_every_opt = train->add_option("--lr-decay-every", tr.lr_decay_every,
                                           "epochs between learning-rate drops (0 = constant)");
    tr.decay_factor_opt = train->add_option("--lr-decay-factor", tr.lr_decay_factor,
                                            "multiplier applied at each drop");
    tr.batch_opt = train->add_option("--batch-size", tr.batch_size, "minibatch size");
    tr.k_opt = train->add_option("--k-folds", tr.k_folds, "number of folds");
    tr.no_norm_opt = train->add_flag("--no-normalize", tr.no_normalize,
                                     "skip per-channel input z-scoring");
    train->callback([&] { rc = cmd_train(tr); });

    AblateArgs ab;
    auto* ablate = app.add_subcommand("ablate", "compare fusion modes across seeds");
    ablate->add_option("--data", ab.data, "dataset directory")->required();
    ablate->add_option("-c,--config", ab.config, "JSON config file");
    ablate->add_option("-o,--out", ab.out, "report JSON path");
    ablate->add_option("--seeds", ab.seeds, "comma-separated run seeds")->delimiter(',');
    ab.epochs_opt = ablate->add_option("--epochs", ab.epochs, "total epochs");
    ab.lr_opt = ablate->add_option("--lr", ab.lr, "learning rate");
    ab.decay_every_opt = ablate->add_option("--lr-decay-every", ab.lr_decay_every,
                                            "epochs between learning-rate drops (0 = constant)");
    ab.decay_factor_opt = ablate->add_option("--lr-decay-factor", ab.lr_decay_factor,
                                             "multiplier applied at each drop");
    ab.batch_opt = ablate->add_option("--batch-size", ab.batch_size, "minibatch size");
    ab.k_opt = ablate->add_option("--k-folds", ab.k_folds, "number of folds");
    ablate->callback([&] { rc = cmd_ablate(ab); });

    PredictArgs pr;
    auto* predict = app.add_subcommand("predict", "predict survival for one volume");
    predict->add_option("--checkpoint", pr.checkpoint, "model checkpoint")->required();
    predict->add_option("--volume", pr.volume, "volume file")->required();
    predict->add_option("--treatment", pr.treatment, "GTR, STR or NA");
    predict->add_flag("--json", pr.json, "machine-readable output");
    predict->callback([&] { rc = cmd_predict(pr); });

    CompareArgs cm;
    auto* compare = app.add_subcommand("compare", "rank treatments for one volume");
    compare->add_option("--checkpoint", cm.checkpoint, "model checkpoint")->required();
    compare->add_option("--volume", cm.volume, "volume file")->required();
    compare->add_flag("--json", cm.json, "machine-readable output");
    compare->callback([&] { rc = cmd_compare(cm); });

    GradcheckArgs gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of every operator");
    gradcheck->add_option("--seed", gc.seed, "sampling seed");
    gradcheck->add_option("--tol", gc.tol, "relative error tolerance");
    gradcheck->callback([&] { rc = cmd_gradcheck(gc); });

    try {
        app.parse(argc, argv);
        return rc;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 5;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
