#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

#include <sys/wait.h>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int code = -1;
    std::string out;
    std::string err;
};

fs::path scratch_root() {
    return fs::temp_directory_path() / "survnet_test_cli";
}

fs::path temp_dir(const char* leaf) {
    auto p = scratch_root() / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

CmdResult run_cli(const std::string& args) {
    static int counter = 0;
    const auto dir = scratch_root() / "io";
    fs::create_directories(dir);
    const auto out = dir / ("out" + std::to_string(counter));
    const auto err = dir / ("err" + std::to_string(counter));
    ++counter;
    const std::string cmd = std::string(SURVNET_CLI_PATH) + " " + args + " > " +
                            out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    CmdResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

const char* kTinyTrainConfig = R"({
  "train": {
    "epochs": 1,
    "batch_size": 8,
    "learning_rate": 0.01,
    "k_folds": 2,
    "model": {
      "in_channels": 4,
      "conv_channels": [2, 2, 3, 3],
      "fc_widths": [4, 3, 1],
      "fusion": "adain",
      "latent_width": 4
    }
  }
})";

// Shared tiny dataset, generated once through the CLI itself.
const fs::path& dataset_dir() {
    static fs::path dir = [] {
        auto d = temp_dir("data");
        auto r = run_cli("generate -o " + d.string() + " --subjects 8 --seed 5");
        REQUIRE(r.code == 0);
        return d;
    }();
    return dir;
}

} // namespace

TEST_CASE("top-level argument handling") {
    CHECK(run_cli("--help").code == 0);
    CHECK(run_cli("").code == 2);              // a subcommand is required
    CHECK(run_cli("summon").code == 2);        // unknown subcommand
    CHECK(run_cli("generate").code == 2);      // missing required --out
    CHECK(run_cli("train").code == 2);         // missing required --data
    CHECK(run_cli("predict --volume x").code == 2);
}

TEST_CASE("gradient verification subcommand passes and reports a table") {
    auto r = run_cli("gradcheck --seed 1");
    CHECK(r.code == 0);
    CHECK(r.out.find("PASS") != std::string::npos);
    CHECK(r.out.find("passed") != std::string::npos);
    CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("generate writes a complete, reproducible dataset") {
    auto a = temp_dir("gen_a");
    auto b = temp_dir("gen_b");
    auto c = temp_dir("gen_c");
    CHECK(run_cli("generate -o " + a.string() + " --subjects 6 --seed 3").code == 0);
    CHECK(run_cli("generate -o " + b.string() + " --subjects 6 --seed 3").code == 0);
    CHECK(run_cli("generate -o " + c.string() + " --subjects 6 --seed 4").code == 0);

    CHECK(fs::exists(a / "manifest.json"));
    CHECK(fs::exists(a / "generation.json"));
    int vols = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        if (e.path().extension() == ".vol") vols++;
    }
    CHECK(vols == 6);

    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    for (const auto& e : fs::directory_iterator(a)) {
        if (e.path().extension() != ".vol") continue;
        CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    }
    CHECK(slurp(a / "s0000.vol") != slurp(c / "s0000.vol"));
}

TEST_CASE("config files are strict about their keys") {
    auto dir = temp_dir("badcfg");
    write_text(dir / "bad.json", R"({"synthetic": {"subjects": 5}})");
    auto r = run_cli("generate -o " + (dir / "out").string() + " -c " +
                     (dir / "bad.json").string());
    CHECK(r.code == 2);
    CHECK(r.err.find("subjects") != std::string::npos);

    write_text(dir / "worse.json", "{nope");
    CHECK(run_cli("generate -o " + (dir / "out").string() + " -c " +
                  (dir / "worse.json").string())
              .code == 2);
}

TEST_CASE("train produces checkpoints and a machine-readable report") {
    auto out = temp_dir("train_out");
    auto cfg = scratch_root() / "tiny_train.json";
    write_text(cfg, kTinyTrainConfig);

    auto r = run_cli("train --data " + dataset_dir().string() + " -c " + cfg.string() +
                     " -o " + out.string());
    REQUIRE(r.code == 0);
    CHECK(r.out.find("mean") != std::string::npos);
    CHECK(fs::exists(out / "fold0.ckpt"));
    CHECK(fs::exists(out / "fold1.ckpt"));

    auto report = json::parse(slurp(out / "report.json"));
    CHECK(report.contains("config"));
    CHECK(report.contains("fold_assignments"));
    REQUIRE(report.contains("report"));
    CHECK(report["report"]["fold_mae"].size() == 2);
    CHECK(report["report"]["mean_mae"].is_number());

    SUBCASE("training is reproducible through the CLI") {
        auto out2 = temp_dir("train_out2");
        auto r2 = run_cli("train --data " + dataset_dir().string() + " -c " + cfg.string() +
                          " -o " + out2.string());
        REQUIRE(r2.code == 0);
        CHECK(slurp(out / "report.json") == slurp(out2 / "report.json"));
        CHECK(slurp(out / "fold0.ckpt") == slurp(out2 / "fold0.ckpt"));
    }

    SUBCASE("predict consumes a checkpoint and a volume") {
        auto p = run_cli("predict --checkpoint " + (out / "fold0.ckpt").string() +
                         " --volume " + (dataset_dir() / "s0001.vol").string() +
                         " --treatment GTR --json");
        REQUIRE(p.code == 0);
        auto j = json::parse(p.out);
        CHECK(j["treatment"] == "GTR");
        const double days = j["days"].get<double>();
        CHECK(days >= 5.0);
        CHECK(days <= 1767.0);

        // the treatment flag is mandatory for a treatment-aware model
        CHECK(run_cli("predict --checkpoint " + (out / "fold0.ckpt").string() +
                      " --volume " + (dataset_dir() / "s0001.vol").string())
                  .code == 2);
    }

    SUBCASE("compare ranks all three options") {
        auto p = run_cli("compare --checkpoint " + (out / "fold0.ckpt").string() +
                         " --volume " + (dataset_dir() / "s0002.vol").string() + " --json");
        REQUIRE(p.code == 0);
        auto j = json::parse(p.out);
        REQUIRE(j["rows"].size() == 3);
        CHECK(j["treatment_invariant"] == false);
        const std::string best = j["best"].get<std::string>();
        CHECK((best == "GTR" || best == "STR" || best == "NA"));
        // rows are sorted by predicted days, descending
        CHECK(j["rows"][0]["days"].get<double>() >= j["rows"][1]["days"].get<double>());
        CHECK(j["rows"][1]["days"].get<double>() >= j["rows"][2]["days"].get<double>());
        CHECK(j["rows"][0]["treatment"] == best);
    }

    SUBCASE("resume rejects conflicting flags, then extends a run") {
        CHECK(run_cli("train --data " + dataset_dir().string() + " --resume " + out.string() +
                      " -o " + temp_dir("r0").string() + " --fusion none")
                  .code == 2);
        CHECK(run_cli("train --data " + dataset_dir().string() + " --resume " + out.string() +
                      " -o " + temp_dir("r1").string() + " --seed 9")
                  .code == 2);

        auto ext = temp_dir("extended");
        auto r3 = run_cli("train --data " + dataset_dir().string() + " --resume " +
                          out.string() + " -o " + ext.string() + " --epochs 2");
        REQUIRE(r3.code == 0);
        CHECK(fs::exists(ext / "fold0.ckpt"));
        CHECK(fs::exists(ext / "report.json"));

        // shrinking the horizon below what the checkpoint holds is refused
        CHECK(run_cli("train --data " + dataset_dir().string() + " --resume " + ext.string() +
                      " -o " + temp_dir("r2").string() + " --epochs 1")
                  .code == 2);
    }
}

TEST_CASE("a treatment-blind model warns and reports invariance") {
    auto out = temp_dir("train_none");
    auto cfg = scratch_root() / "none_train.json";
    json c = json::parse(kTinyTrainConfig);
    c["train"]["model"]["fusion"] = "none";
    write_text(cfg, c.dump());
    REQUIRE(run_cli("train --data " + dataset_dir().string() + " -c " + cfg.string() + " -o " +
                    out.string())
                .code == 0);

    auto p = run_cli("compare --checkpoint " + (out / "fold0.ckpt").string() + " --volume " +
                     (dataset_dir() / "s0000.vol").string() + " --json");
    REQUIRE(p.code == 0);
    CHECK(p.err.find("ignores the treatment") != std::string::npos);
    auto j = json::parse(p.out);
    CHECK(j["treatment_invariant"] == true);
    CHECK(j["best"].is_null());
    CHECK(j["rows"][0]["days"] == j["rows"][1]["days"]);
    CHECK(j["rows"][1]["days"] == j["rows"][2]["days"]);

    // predict needs no --treatment when the model cannot use it
    CHECK(run_cli("predict --checkpoint " + (out / "fold0.ckpt").string() + " --volume " +
                  (dataset_dir() / "s0000.vol").string())
              .code == 0);
}

TEST_CASE("failure modes map to distinct exit codes") {
    auto dir = temp_dir("failures");

    // 3: missing inputs
    CHECK(run_cli("train --data " + (dir / "absent").string()).code == 3);
    CHECK(run_cli("predict --checkpoint " + (dir / "no.ckpt").string() + " --volume " +
                  (dataset_dir() / "s0000.vol").string() + " --treatment NA")
              .code == 3);

    // 3: malformed volume payload
    write_text(dir / "junk.vol", "VOL1 this is not a volume");
    auto cfgp = scratch_root() / "tiny_train.json";
    write_text(cfgp, kTinyTrainConfig);
    auto out = temp_dir("train_for_codes");
    REQUIRE(run_cli("train --data " + dataset_dir().string() + " -c " + cfgp.string() + " -o " +
                    out.string())
                .code == 0);
    CHECK(run_cli("predict --checkpoint " + (out / "fold0.ckpt").string() + " --volume " +
                  (dir / "junk.vol").string() + " --treatment NA")
              .code == 3);

    // 5: structurally valid volume that does not fit the model
    auto small = temp_dir("small_extent");
    REQUIRE(run_cli("generate -o " + small.string() + " --subjects 1 --extent 8").code == 0);
    CHECK(run_cli("predict --checkpoint " + (out / "fold0.ckpt").string() + " --volume " +
                  (small / "s0000.vol").string() + " --treatment NA")
              .code == 5);

    // 4: numerically divergent training
    json c = json::parse(kTinyTrainConfig);
    c["train"]["learning_rate"] = 1e200;
    c["train"]["epochs"] = 2;
    write_text(dir / "hot.json", c.dump());
    CHECK(run_cli("train --data " + dataset_dir().string() + " -c " +
                  (dir / "hot.json").string() + " -o " + (dir / "hot_out").string())
              .code == 4);
}
