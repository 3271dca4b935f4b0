#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "clvit/data_io.hpp"
#include "clvit/manifest.hpp"
#include "clvit/task_arithmetic.hpp"
#include "cli.hpp"

using namespace clvit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("clvit_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string p(const std::string& name) const { return (path / name).string(); }
};

struct CliResult {
    int rc;
    std::string out;
    std::string err;
};

CliResult run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int rc = cli::run(std::move(args), out, err);
    return {rc, out.str(), err.str()};
}

// small-model flags reused across commands
std::vector<std::string> model_flags() {
    return {"--image-size", "8", "--dim", "16", "--depth", "2", "--heads", "2",
            "--classes", "4",  "--rank", "2",  "--alpha", "2"};
}

void append(std::vector<std::string>& args, const std::vector<std::string>& extra) {
    args.insert(args.end(), extra.begin(), extra.end());
}

}  // namespace

TEST_CASE("exit codes: usage, runtime, success") {
    CHECK(run({}).rc == 2);
    CHECK(run({"bogus"}).rc == 2);
    CHECK(run({"--help"}).rc == 0);

    auto usage = run({"bench", "--method", "nonsense", "--data-prefix", "x"});
    CHECK(usage.rc == 2);
    CHECK(usage.err.find("usage error") != std::string::npos);

    TempDir dir;
    // classes < 2 is a usage error with a message
    auto bad = run({"synth-data", "--classes", "1", "--out-dir", dir.p("d")});
    CHECK(bad.rc == 2);
    CHECK_FALSE(bad.err.empty());

    // missing input file is a runtime failure
    auto missing = run({"pretrain", "--data", dir.p("nope.ds"), "--out-dir", dir.p("d")});
    CHECK(missing.rc == 1);
}

TEST_CASE("synth-data default spec and seed determinism") {
    TempDir dir;
    auto r1 = run({"synth-data", "--out-dir", dir.p("a"), "--seed", "9"});
    REQUIRE(r1.rc == 0);

    // default spec: 8 classes, 16x16x3, 40/30/25 per class
    dataio::Dataset train = dataio::load_dataset(dir.p("a") + "/synth.train.ds");
    CHECK(train.num_classes() == 8);
    CHECK(train.height == 16);
    CHECK(train.width == 16);
    CHECK(train.channels == 3);
    CHECK(train.size() == 8 * 30);
    CHECK(dataio::load_dataset(dir.p("a") + "/synth.pretrain.ds").size() == 8 * 40);
    CHECK(dataio::load_dataset(dir.p("a") + "/synth.test.ds").size() == 8 * 25);

    auto r2 = run({"synth-data", "--out-dir", dir.p("b"), "--seed", "9"});
    REQUIRE(r2.rc == 0);
    for (const char* f : {"synth.pretrain.ds", "synth.train.ds", "synth.test.ds"}) {
        CHECK(manifest::hash_file(dir.p("a") + "/" + f) ==
              manifest::hash_file(dir.p("b") + "/" + f));
    }
}

TEST_CASE("pipeline commands do not mutate their inputs") {
    TempDir dir;
    std::vector<std::string> synth = {"synth-data", "--out-dir",      dir.p("d"),
                                      "--name",     "t",              "--classes", "4",
                                      "--image-size", "8",            "--seed",    "3",
                                      "--pretrain-per-class", "6",    "--train-per-class", "8",
                                      "--test-per-class", "4"};
    REQUIRE(run(synth).rc == 0);
    const auto pre_ds = dir.p("d") + "/t.pretrain.ds";
    const auto train_ds = dir.p("d") + "/t.train.ds";
    const auto h0 = manifest::hash_file(pre_ds);

    std::vector<std::string> pretrain = {"pretrain", "--data", pre_ds, "--out-dir", dir.p("d"),
                                         "--epochs", "2", "--batch", "8", "--seed", "4"};
    append(pretrain, model_flags());
    REQUIRE(run(pretrain).rc == 0);
    CHECK(manifest::hash_file(pre_ds) == h0);

    const auto pre_ckpt = dir.p("d") + "/pre.ckpt";
    const auto hpre = manifest::hash_file(pre_ckpt);
    std::vector<std::string> tt = {"train-task", "--pre",  pre_ckpt, "--data", train_ds,
                                   "--tasks",    "2",      "--task", "0",      "--epochs",
                                   "2",          "--batch", "8",     "--emit-vector",
                                   "--out-dir",  dir.p("d")};
    REQUIRE(run(tt).rc == 0);
    CHECK(manifest::hash_file(pre_ckpt) == hpre);
    CHECK(manifest::hash_file(train_ds) != 0);

    // unknown task id fails
    std::vector<std::string> bad_task = {"train-task", "--pre", pre_ckpt, "--data", train_ds,
                                         "--tasks", "2", "--task", "7", "--out-dir", dir.p("d")};
    CHECK(run(bad_task).rc == 1);

    // the emitted vector equals compute_task_vector of the outputs
    model::ParamStore pre_store = dataio::load_store(pre_ckpt);
    model::ParamStore tuned = dataio::load_store(dir.p("d") + "/task0.ckpt");
    taskvec::TaskVector expect = taskvec::compute_task_vector(tuned, pre_store);
    taskvec::TaskVector emitted = dataio::load_task_vector(dir.p("d") + "/task0.vector.ckpt");
    for (const auto& [vname, d] : expect.deltas) CHECK(d.bit_equal(emitted.deltas.at(vname)));

    // single-input merge at lambda 1 reproduces the tuned store (to rounding)
    auto single = run({"merge", "--pre", pre_ckpt, "--inputs", dir.p("d") + "/task0.vector.ckpt",
                       "--lambda", "1.0", "--out-dir", dir.p("d"), "--name", "roundtrip"});
    REQUIRE(single.rc == 0);
    model::ParamStore round = dataio::load_store(dir.p("d") + "/roundtrip.ckpt");
    for (const auto& [pname, t] : tuned.entries()) {
        double gap = 0.0;
        for (std::int64_t i = 0; i < t.numel(); ++i)
            gap = std::max(gap, std::fabs(t.at(i) - round.at(pname).at(i)));
        CHECK(gap < 1e-12);
    }

    // memft writes a reservoir composition report
    std::vector<std::string> memft = {"memft", "--model", dir.p("d") + "/roundtrip.ckpt",
                                      "--data", train_ds, "--per-class", "2", "--epochs", "1",
                                      "--batch", "8", "--out-dir", dir.p("d")};
    REQUIRE(run(memft).rc == 0);
    std::ifstream rj(dir.p("d") + "/final.reservoir.json");
    const std::string rtext((std::istreambuf_iterator<char>(rj)),
                            std::istreambuf_iterator<char>());
    CHECK(rtext.find("per_class_counts") != std::string::npos);

    // merge with a mixed-schema input names the offending file
    std::vector<std::string> other_model = {"pretrain", "--data",   pre_ds,
                                            "--out-dir", dir.p("d"), "--name", "other",
                                            "--epochs", "1", "--batch", "8",
                                            "--image-size", "8", "--dim", "8", "--depth", "1",
                                            "--heads", "2", "--classes", "4", "--rank", "2"};
    REQUIRE(run(other_model).rc == 0);
    auto mixed = run({"merge", "--pre", pre_ckpt, "--inputs",
                      dir.p("d") + "/task0.vector.ckpt," + dir.p("d") + "/other.ckpt",
                      "--out-dir", dir.p("d")});
    CHECK(mixed.rc == 1);
}

TEST_CASE("eval without a plan emits an overall-only report") {
    TempDir dir;
    std::vector<std::string> synth = {"synth-data", "--out-dir", dir.p("d"), "--name", "t",
                                      "--classes", "4", "--image-size", "8",
                                      "--pretrain-per-class", "4", "--train-per-class", "6",
                                      "--test-per-class", "4", "--seed", "5"};
    REQUIRE(run(synth).rc == 0);
    std::vector<std::string> pretrain = {"pretrain", "--data", dir.p("d") + "/t.pretrain.ds",
                                         "--out-dir", dir.p("d"), "--epochs", "2", "--batch",
                                         "8", "--seed", "4"};
    append(pretrain, model_flags());
    REQUIRE(run(pretrain).rc == 0);

    auto r = run({"eval", "--model", dir.p("d") + "/pre.ckpt", "--data",
                  dir.p("d") + "/t.test.ds", "--out-dir", dir.p("d")});
    REQUIRE(r.rc == 0);
    std::ifstream csv(dir.p("d") + "/eval.csv");
    std::string line, all;
    int lines = 0;
    while (std::getline(csv, line)) {
        ++lines;
        all += line + "\n";
    }
    CHECK(lines == 2);  // header + overall row only
    CHECK(all.find("overall") != std::string::npos);
}

TEST_CASE("config file sits between defaults and flags") {
    TempDir dir;
    {
        std::ofstream cfg(dir.p("cfg.json"));
        cfg << R"({"classes": 4, "image-size": 8, "pretrain-per-class": 3,)"
            << R"( "train-per-class": 5, "test-per-class": 4, "seed": 11})";
    }
    // flag --classes 5 overrides the file's 4; file's image-size 8 overrides default 16
    auto r = run({"synth-data", "--config", dir.p("cfg.json"), "--classes", "5", "--out-dir",
                  dir.p("d")});
    REQUIRE(r.rc == 0);
    dataio::Dataset train = dataio::load_dataset(dir.p("d") + "/synth.train.ds");
    CHECK(train.num_classes() == 5);
    CHECK(train.height == 8);
    CHECK(train.size() == 5 * 5);
}

TEST_CASE("bench manifest rerun reproduces artifact hashes") {
    TempDir dir;
    std::vector<std::string> synth = {"synth-data", "--out-dir", dir.p("d"), "--name", "t",
                                      "--classes", "4", "--image-size", "8",
                                      "--pretrain-per-class", "6", "--train-per-class", "8",
                                      "--test-per-class", "4", "--seed", "13"};
    REQUIRE(run(synth).rc == 0);

    std::vector<std::string> bench = {"bench", "--method", "ours_xent", "--data-prefix",
                                      dir.p("d") + "/t", "--tasks", "2", "--epochs", "2",
                                      "--batch", "8", "--pretrain-epochs", "2", "--per-class",
                                      "2", "--seed", "17", "--out-dir", dir.p("run1")};
    append(bench, model_flags());
    REQUIRE(run(bench).rc == 0);

    auto rerun = run({"rerun", "--manifest", dir.p("run1") + "/manifest.json", "--out-dir",
                      dir.p("run2")});
    REQUIRE(rerun.rc == 0);
    CHECK(rerun.out.find("DIFF") == std::string::npos);
    CHECK(rerun.out.find("reproduced every artifact hash") != std::string::npos);

    // a rerun against a tampered manifest fails
    manifest::RunManifest m = manifest::RunManifest::load(dir.p("run1") + "/manifest.json");
    m.outputs.begin()->second = "0000000000000000";
    m.save(dir.p("run1") + "/tampered.json");
    auto bad = run({"rerun", "--manifest", dir.p("run1") + "/tampered.json", "--out-dir",
                    dir.p("run3")});
    CHECK(bad.rc == 1);
}

#ifdef CLVIT_BIN_PATH
TEST_CASE("binary exit codes through a real process") {
    const std::string bin = CLVIT_BIN_PATH;
    CHECK(std::system((bin + " --help > /dev/null 2>&1").c_str()) == 0);
    const int usage = std::system((bin + " bench --method nope > /dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(usage) == 2);
    const int runtime =
        std::system((bin + " eval --model /nonexistent.ckpt --data /nonexistent.ds"
                           " --out-dir /tmp > /dev/null 2>&1")
                        .c_str());
    CHECK(WEXITSTATUS(runtime) == 1);
}
#endif
