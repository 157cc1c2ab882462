#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "aps/cli.hpp"

using namespace aps;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "aps_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path);
    f << content;
}

std::string slurp(const fs::path& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "apsnet");
    return run_cli(args);
}

const std::string kSmallNet = "input = 16\nchannels = 4,8\n";

}  // namespace

TEST_CASE("cli: usage errors exit with 2") {
    CHECK(run({}) == 2);
    CHECK(run({"frobnicate"}) == 2);
    CHECK(run({"invariance", "--bogus-flag"}) == 2);
}

TEST_CASE("cli: missing config file exits with 2") {
    const fs::path out = fresh_dir("missing_cfg");
    CHECK(run({"invariance", "--config", "/nonexistent/x.cfg", "--out", out.string()}) == 2);
}

TEST_CASE("cli: unknown config keys are rejected") {
    const fs::path out = fresh_dir("bad_key");
    const fs::path cfg = out / "bad.cfg";
    write_file(cfg, "images = 4\nwidgets = 9\n");
    CHECK(run({"invariance", "--config", cfg.string(), "--out", out.string()}) == 2);
}

TEST_CASE("cli invariance: APS row reports 1.0 and the run is byte-reproducible") {
    const fs::path out1 = fresh_dir("inv1");
    const fs::path out2 = fresh_dir("inv2");
    const fs::path cfg = out1 / "inv.cfg";
    write_file(cfg, "kinds = aps,baseline\nimages = 12\ntrials = 2\n" + kSmallNet);

    CHECK(run({"invariance", "--config", cfg.string(), "--out", out1.string(), "--seed", "5"}) ==
          0);
    CHECK(run({"invariance", "--config", cfg.string(), "--out", out2.string(), "--seed", "5"}) ==
          0);

    const std::string csv = slurp(out1 / "consistency.csv");
    CHECK(csv == slurp(out2 / "consistency.csv"));
    CHECK(csv.rfind("model,sampler,trials,fraction\n", 0) == 0);
    CHECK(csv.find("aps,circular(max=3),2,1\n") != std::string::npos);
    // resolved config written for provenance
    CHECK(fs::exists(out1 / "invariance_config.txt"));
}

TEST_CASE("cli invariance: baseline-only run asserts nothing") {
    const fs::path out = fresh_dir("inv_base");
    const fs::path cfg = out / "inv.cfg";
    write_file(cfg, "kinds = baseline\ndataset = checkerboard\nimages = 16\ntrials = 2\n" +
                        kSmallNet);
    CHECK(run({"invariance", "--config", cfg.string(), "--out", out.string()}) == 0);
}

TEST_CASE("cli invariance: custom netspec file") {
    const fs::path out = fresh_dir("inv_spec");
    const fs::path spec = out / "net.spec";
    write_file(spec,
               "aps-netspec-v1\nin_channels=1\nin_h=16\nin_w=16\nprecision=f32\npad=circular\n"
               "seed=3\nlayer=conv out=4 k=3\nlayer=act fn=relu\n"
               "layer=block out=8 kind=aps s=2 norm=l2 mode=argmax act=relu\n"
               "layer=gap\nlayer=fc classes=4\n");
    const fs::path cfg = out / "inv.cfg";
    write_file(cfg, "netspec = " + spec.string() + "\nimages = 8\ntrials = 2\ninput = 16\n");
    CHECK(run({"invariance", "--config", cfg.string(), "--out", out.string()}) == 0);
    CHECK(slurp(out / "consistency.csv").find("custom,") != std::string::npos);
}

TEST_CASE("cli oracle: default run passes; invalid sizes are marked skipped") {
    const fs::path out = fresh_dir("oracle");
    const fs::path cfg = out / "o.cfg";
    write_file(cfg, "sizes = 10,16\nsignals = 5\n");
    CHECK(run({"oracle", "--config", cfg.string(), "--out", out.string()}) == 0);
    const std::string csv = slurp(out / "oracle.csv");
    CHECK(csv.rfind("identity,n,residual,status\n", 0) == 0);
    CHECK(csv.find("cos_relu_sum0,10,,skipped\n") != std::string::npos);
    CHECK(csv.find("cos_relu_sum0,16,") != std::string::npos);
    CHECK(csv.find(",fail") == std::string::npos);
}

TEST_CASE("cli train: writes the epoch log, a parameter snapshot and a summary") {
    const fs::path out = fresh_dir("train");
    const fs::path cfg = out / "t.cfg";
    write_file(cfg, "kind = aps\nimages_per_class = 10\nepochs = 2\nbatch = 8\n" + kSmallNet);
    CHECK(run({"train", "--config", cfg.string(), "--out", out.string(), "--seed", "2"}) == 0);

    const std::string log = slurp(out / "train_log.csv");
    CHECK(log.rfind("epoch,train_loss,val_acc,val_consistency\n", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 4);  // header + epochs 0..2
    CHECK(fs::exists(out / "params" / "params.manifest"));
    const std::string summary = slurp(out / "test_summary.csv");
    CHECK(summary.rfind("model,test_acc,test_consistency\n", 0) == 0);
    CHECK(summary.find("aps,") != std::string::npos);
}

TEST_CASE("cli stability: per-model files with the frozen schema") {
    const fs::path out = fresh_dir("stab");
    const fs::path cfg = out / "s.cfg";
    write_file(cfg, "kinds = aps,lpf3\n" + kSmallNet);
    CHECK(run({"stability", "--config", cfg.string(), "--out", out.string()}) == 0);
    const std::string aps_csv = slurp(out / "stability_aps.csv");
    CHECK(aps_csv.rfind("tap,channel,max_delta,mean_delta,jx,jy\n", 0) == 0);
    CHECK(fs::exists(out / "stability_lpf3.csv"));
}

TEST_CASE("cli ood / criteria / oddsize: aps rows hold at 1.0") {
    const fs::path out = fresh_dir("rest");
    const fs::path ood_cfg = out / "ood.cfg";
    write_file(ood_cfg, "images = 8\npatches = 2,3\ntrials = 2\n" + kSmallNet);
    CHECK(run({"ood", "--config", ood_cfg.string(), "--out", out.string()}) == 0);
    CHECK(slurp(out / "ood.csv").rfind("model,perturbation,param,trials,fraction\n", 0) == 0);

    const fs::path crit_cfg = out / "crit.cfg";
    write_file(crit_cfg, "images = 8\ntrials = 2\n" + kSmallNet);
    CHECK(run({"criteria", "--config", crit_cfg.string(), "--out", out.string()}) == 0);
    CHECK(slurp(out / "criteria.csv").rfind("criterion,trials,fraction\n", 0) == 0);

    const fs::path odd_cfg = out / "odd.cfg";
    write_file(odd_cfg, "images = 8\ntrials = 2\ninput = 15\nchannels = 4,8\n");
    CHECK(run({"oddsize", "--config", odd_cfg.string(), "--out", out.string()}) == 0);
    CHECK(slurp(out / "oddsize.csv").rfind("model,pairs,fraction\n", 0) == 0);
}

TEST_CASE("cli bench: ratio column present and bounded") {
    const fs::path out = fresh_dir("bench");
    const fs::path cfg = out / "b.cfg";
    write_file(cfg, "input = 16\nchannels = 4,8\nreps = 10\nwarmup = 2\n");
    CHECK(run({"bench", "--config", cfg.string(), "--out", out.string()}) == 0);
    const std::string csv = slurp(out / "bench.csv");
    CHECK(csv.rfind("model,reps,median_ms,mad_ms,ratio_vs_baseline\n", 0) == 0);
    CHECK(csv.find("baseline,10,") != std::string::npos);
    CHECK(csv.find("aps,10,") != std::string::npos);
}
