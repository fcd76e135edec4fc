#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string binary() {
    const char* bin = std::getenv("CSILOC_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "CSILOC_BIN must point at the pipeline binary");
    return bin;
}

int run(const std::string& args) {
    const int status = std::system((binary() + " " + args + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_tiny_config(const fs::path& path) {
    std::ofstream f(path);
    f << "seed = 3\n"
         "floors = 1\n"
         "width = 30\n"
         "depth = 20\n"
         "aps_per_floor = 6\n"
         "n_sub = 32\n"
         "alt_nsub_fraction = 0.2\n"
         "users_unlabeled = 2\n"
         "users_labeled = 2\n"
         "duration_unlabeled_s = 40\n"
         "duration_labeled_s = 40\n"
         "hidden_width = 16\n"
         "projection_dim = 8\n"
         "pretrain_epochs = 2\n"
         "pretrain_batch = 16\n"
         "finetune_epochs = 2\n"
         "finetune_batch = 8\n"
         "ensemble_size = 2\n";
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("usage and validation failures use the documented exit codes") {
    CHECK(run("definitely-not-a-subcommand") != 0);
    CHECK(run("simulate --config /nonexistent.cfg --run /tmp/csiloc_nope") == 1);
    CHECK(run("encode --run /tmp/csiloc_never_created") == 1);
}

TEST_CASE("help text lists every stage") {
    const int status = std::system((binary() + " --help > cli_help.txt 2>&1").c_str());
    CHECK(WEXITSTATUS(status) == 0);
    const std::string help = slurp("cli_help.txt");
    for (const char* cmd : {"simulate", "encode", "pretrain", "finetune", "infer", "eval", "report"})
        CHECK(help.find(cmd) != std::string::npos);
    fs::remove("cli_help.txt");
}

TEST_CASE("simulate is deterministic and produces the declared artifacts") {
    TempDir d1("csiloc_cli_a"), d2("csiloc_cli_b");
    const fs::path cfg = d1.path / "run.cfg";
    write_tiny_config(cfg);

    REQUIRE(run("simulate --config " + cfg.string() + " --run " + (d1.path / "r").string()) == 0);
    for (const char* name : {"manifest.json", "scene.json", "unlabeled.jsonl", "labeled.jsonl"})
        CHECK(fs::exists(d1.path / "r" / name));

    REQUIRE(run("simulate --config " + cfg.string() + " --run " + (d2.path / "r").string()) == 0);
    for (const char* name : {"scene.json", "unlabeled.jsonl", "labeled.jsonl"})
        CHECK(slurp(d1.path / "r" / name) == slurp(d2.path / "r" / name));
}

TEST_CASE("the full tiny pipeline runs end to end") {
    TempDir d("csiloc_cli_e2e");
    const fs::path cfg = d.path / "run.cfg";
    write_tiny_config(cfg);
    const std::string r = (d.path / "r").string();

    REQUIRE(run("simulate --config " + cfg.string() + " --run " + r) == 0);
    // stages out of order are refused as validation errors
    CHECK(run("pretrain --run " + r) == 1);

    REQUIRE(run("encode --run " + r) == 0);
    CHECK(fs::exists(d.path / "r" / "unlabeled_graphs.jsonl"));
    REQUIRE(run("pretrain --run " + r) == 0);
    CHECK(fs::exists(d.path / "r" / "pretrained.ckpt"));
    CHECK(fs::exists(d.path / "r" / "pretrain_curve.csv"));
    REQUIRE(run("finetune --run " + r) == 0);
    REQUIRE(run("infer --run " + r) == 0);
    CHECK(fs::exists(d.path / "r" / "predictions.csv"));
    REQUIRE(run("eval --run " + r) == 0);
    CHECK(fs::exists(d.path / "r" / "reports.csv"));
    REQUIRE(run("report --run " + r) == 0);

    const std::string reports = slurp(d.path / "r" / "reports.csv");
    CHECK(reports.find("ensemble") != std::string::npos);
    CHECK(reports.find("knn") != std::string::npos);
}
