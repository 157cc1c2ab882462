#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "aps/experiments.hpp"
#include "aps/metrics.hpp"
#include "test_helpers.hpp"

using namespace aps;
using namespace aps::testing;

namespace {

DatasetSpec small_shapes(uint64_t seed) {
    DatasetSpec ds;
    ds.classes = 4;
    ds.per_class = 10;
    ds.h = ds.w = 16;
    ds.family = DatasetSpec::Family::Shapes;
    ds.seed = seed;
    return ds;
}

ToyOptions tiny_net(uint64_t seed) {
    ToyOptions opt;
    opt.channels = {4, 8};
    opt.input = 16;
    opt.classes = 4;
    opt.seed = seed;
    return opt;
}

}  // namespace

TEST_CASE("generate: deterministic, balanced and split 0.8/0.1/0.1") {
    DatasetSpec ds = small_shapes(1);
    ds.per_class = 100;
    SplitDataset a = generate(ds);
    SplitDataset b = generate(ds);
    CHECK(a.train.size() == 320);
    CHECK(a.val.size() == 40);
    CHECK(a.test.size() == 40);

    for (int i = 0; i < a.train.size(); ++i) {
        CHECK(a.train.labels[static_cast<size_t>(i)] == b.train.labels[static_cast<size_t>(i)]);
        CHECK(max_abs_diff(a.train.images[static_cast<size_t>(i)],
                           b.train.images[static_cast<size_t>(i)]) == 0.0);
    }

    std::vector<int> counts(4, 0);
    for (int lab : a.train.labels) ++counts[static_cast<size_t>(lab)];
    for (int c : counts) CHECK(c == 80);

    DatasetSpec changed = ds;
    changed.seed = 2;
    SplitDataset c = generate(changed);
    CHECK(max_abs_diff(a.train.images[0], c.train.images[0]) > 0.0);
}

TEST_CASE("generate: images carry signal and stay finite") {
    for (auto family : {DatasetSpec::Family::Shapes, DatasetSpec::Family::Checkerboard}) {
        DatasetSpec ds = small_shapes(3);
        ds.family = family;
        SplitDataset d = generate(ds);
        for (const Tensor& img : d.train.images) {
            CHECK(img.all_finite());
            double mass = 0.0;
            for (int64_t i = 0; i < img.numel(); ++i) mass += std::abs(img.at_flat(i));
            CHECK(mass > 1.0);  // far above the additive-noise floor
        }
    }
}

TEST_CASE("generate: degenerate specs are rejected") {
    DatasetSpec ds = small_shapes(4);
    ds.classes = 1;
    CHECK_THROWS_AS(generate(ds), std::invalid_argument);
    ds = small_shapes(4);
    ds.per_class = 0;
    CHECK_THROWS_AS(generate(ds), std::invalid_argument);
    ds = small_shapes(4);
    ds.h = 4;
    CHECK_THROWS_AS(generate(ds), std::invalid_argument);
}

TEST_CASE("train: zero epochs and zero learning rate leave parameters alone") {
    SplitDataset data = generate(small_shapes(5));
    Network net(make_toy_spec(DownKind::APS, tiny_net(6)));
    std::vector<Tensor> before;
    for (Param* p : net.params()) before.push_back(p->value);

    TrainConfig cfg;
    cfg.epochs = 0;
    auto log = train(net, data, cfg);
    CHECK(log.size() == 1);
    CHECK(log[0].epoch == 0);
    auto params = net.params();
    for (size_t i = 0; i < params.size(); ++i) {
        CHECK(max_abs_diff(params[i]->value, before[i]) == 0.0);
    }

    cfg.epochs = 2;
    cfg.lr = 0.0;
    cfg.weight_decay = 0.0;
    log = train(net, data, cfg);
    CHECK(log.size() == 3);
    for (size_t i = 0; i < params.size(); ++i) {
        CHECK(max_abs_diff(params[i]->value, before[i]) == 0.0);
    }
}

TEST_CASE("train: APS validation consistency is 1.0 at every epoch including 0") {
    SplitDataset data = generate(small_shapes(7));
    Network net(make_toy_spec(DownKind::APS, tiny_net(8)));
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 8;
    cfg.lr = 0.02;
    cfg.seed = 9;
    auto log = train(net, data, cfg);
    REQUIRE(log.size() == 4);
    for (const EpochLog& e : log) {
        CHECK(e.val_consistency == 1.0);
        CHECK(std::isfinite(e.train_loss));
    }

    // the architectural invariance survives training
    ShiftSampler sampler{ShiftSampler::Kind::CircularUniform, 3, 99};
    CHECK(consistency(net, data.test, sampler, 3).fraction == 1.0);
}

TEST_CASE("train: identical seeds reproduce the epoch log bit for bit") {
    SplitDataset data = generate(small_shapes(10));
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 8;
    cfg.lr = 0.05;
    cfg.seed = 11;

    Network a(make_toy_spec(DownKind::APS, tiny_net(12)));
    Network b(make_toy_spec(DownKind::APS, tiny_net(12)));
    auto la = train(a, data, cfg);
    auto lb = train(b, data, cfg);
    REQUIRE(la.size() == lb.size());
    for (size_t i = 0; i < la.size(); ++i) {
        CHECK(la[i].train_loss == lb[i].train_loss);
        CHECK(la[i].val_acc == lb[i].val_acc);
        CHECK(la[i].val_consistency == lb[i].val_consistency);
    }

    auto pa = a.params(), pb = b.params();
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(max_abs_diff(pa[i]->value, pb[i]->value) == 0.0);
    }
}

TEST_CASE("train: augmentation changes the trajectory but not determinism") {
    SplitDataset data = generate(small_shapes(13));
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 8;
    cfg.seed = 14;
    cfg.augment = {Augmentation::Kind::RandomCircularShift, 3};

    // a baseline network actually sees different batches under shifts; for
    // an APS network circular-shift augmentation is inert by construction
    Network a(make_toy_spec(DownKind::Baseline, tiny_net(15)));
    Network b(make_toy_spec(DownKind::Baseline, tiny_net(15)));
    auto la = train(a, data, cfg);
    auto lb = train(b, data, cfg);
    CHECK(la[1].train_loss == lb[1].train_loss);

    Network c(make_toy_spec(DownKind::Baseline, tiny_net(15)));
    TrainConfig plain = cfg;
    plain.augment = {};
    auto lc = train(c, data, plain);
    CHECK(la[1].train_loss != lc[1].train_loss);

    // and on an APS network the augmented loss matches the plain loss to
    // float-storage precision: shifted batches are equivalent inputs
    Network aps1(make_toy_spec(DownKind::APS, tiny_net(16)));
    Network aps2(make_toy_spec(DownKind::APS, tiny_net(16)));
    auto laps = train(aps1, data, cfg);
    auto lplain = train(aps2, data, plain);
    CHECK(laps[1].train_loss == doctest::Approx(lplain[1].train_loss).epsilon(1e-5));
}

TEST_CASE("train: divergence aborts with an error") {
    SplitDataset data = generate(small_shapes(16));
    Network net(make_toy_spec(DownKind::Baseline, tiny_net(17)));
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch = 8;
    cfg.lr = 1e12;
    CHECK_THROWS_AS(train(net, data, cfg), std::runtime_error);
}

TEST_CASE("bench_forward: noise band for identical networks, reps enforced") {
    ToyOptions opt;
    opt.channels = {8, 16, 32};
    opt.input = 32;
    opt.seed = 18;
    Network a(make_toy_spec(DownKind::Baseline, opt));
    Network b(make_toy_spec(DownKind::Baseline, opt));

    BenchResult r = bench_forward(a, b, 1, 50, 10, 19);
    CHECK(r.reps == 50);
    CHECK(r.median_ms_a > 0.0);
    CHECK(r.ratio > 0.8);
    CHECK(r.ratio < 1.25);
    CHECK(r.mad_ms_a >= 0.0);

    CHECK_THROWS_AS(bench_forward(a, b, 1, 9, 0, 1), std::invalid_argument);
}

TEST_CASE("dataset cache round-trips through the tensor binary format") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "aps_dataset_cache").string();
    SplitDataset split = generate(small_shapes(22));
    save_dataset(dir, split.train);
    Dataset back = load_dataset(dir);
    CHECK(back.classes == split.train.classes);
    REQUIRE(back.size() == split.train.size());
    for (int i = 0; i < back.size(); ++i) {
        CHECK(back.labels[static_cast<size_t>(i)] == split.train.labels[static_cast<size_t>(i)]);
        CHECK(max_abs_diff(back.images[static_cast<size_t>(i)],
                           split.train.images[static_cast<size_t>(i)]) == 0.0);
    }
    CHECK_THROWS_AS(load_dataset("/nonexistent_dir_xyz"), std::runtime_error);
}

TEST_CASE("epoch log csv: frozen schema, deterministic bytes") {
    namespace fs = std::filesystem;
    SplitDataset data = generate(small_shapes(20));
    Network net(make_toy_spec(DownKind::APS, tiny_net(21)));
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 8;
    auto log = train(net, data, cfg);

    const std::string p1 = (fs::temp_directory_path() / "aps_log1.csv").string();
    const std::string p2 = (fs::temp_directory_path() / "aps_log2.csv").string();
    write_epoch_log_csv(p1, log);
    write_epoch_log_csv(p2, log);

    auto slurp = [](const std::string& path) {
        std::ifstream f(path);
        return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    };
    const std::string c1 = slurp(p1);
    CHECK(c1 == slurp(p2));
    CHECK(c1.rfind("epoch,train_loss,val_acc,val_consistency\n", 0) == 0);
    CHECK(std::count(c1.begin(), c1.end(), '\n') == 3);  // header + epoch 0 + epoch 1
}
