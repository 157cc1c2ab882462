#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aps/dataset.hpp"
#include "aps/network.hpp"

namespace aps {

/// Synthetic datasets whose labels are invariant to circular shifts by
/// construction: patterns are placed with wraparound, so every translate of
/// an image is a valid sample of the same class.
///   Shapes:       discs / crosses / bars at seeded random positions
///   Checkerboard: high-frequency square-wave textures, class = cell size
struct DatasetSpec {
    int classes = 4;
    int per_class = 100;
    int h = 32;
    int w = 32;
    enum class Family { Shapes, Checkerboard };
    Family family = Family::Shapes;
    uint64_t seed = 0;
    Precision precision = Precision::F32;
};

struct SplitDataset {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Deterministic in the seed; balanced classes; 0.8/0.1/0.1 split per class.
SplitDataset generate(const DatasetSpec& spec);

struct Augmentation {
    enum class Kind { None, RandomCircularShift, RandomZeroPadCrop };
    Kind kind = Kind::None;
    int amount = 3;
};

struct TrainConfig {
    int epochs = 30;
    int batch = 32;
    double lr = 0.01;  // stable without normalization layers
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lr_decay = 0.1;
    int lr_decay_period = 20;
    double clip_grad_norm = 1.0;  // global L2 clip; 0 disables
    Augmentation augment{};
    uint64_t seed = 0;
    // per-epoch validation consistency settings (fixed seeded shift set)
    int consistency_trials = 1;
    int consistency_max_shift = 3;
};

struct EpochLog {
    int epoch = 0;           // 0 is the untrained state
    double train_loss = 0.0; // NaN-free by contract; 0 for epoch 0
    double val_acc = 0.0;
    double val_consistency = 0.0;
};

/// SGD with momentum, weight decay and stepwise learning-rate decay.
/// Deterministic given (dataset, config) seeds. Throws on divergence
/// (non-finite loss). The log has one row per epoch plus the epoch-0 row.
std::vector<EpochLog> train(Network& net, const SplitDataset& data, const TrainConfig& cfg);

/// Median/MAD wall-clock forward time of two networks on the same random
/// input. Warm-up repetitions are excluded. reps must be >= 10.
struct BenchResult {
    double median_ms_a = 0.0;
    double mad_ms_a = 0.0;
    double median_ms_b = 0.0;
    double mad_ms_b = 0.0;
    double ratio = 0.0;  // median_b / median_a
    int reps = 0;
};

BenchResult bench_forward(const Network& a, const Network& b, int batch, int reps,
                          int warmup = 10, uint64_t seed = 0);

/// CSV writers shared by the command-line tool and tests. Numbers are
/// rendered with %.10g; files carry no timestamps so reruns are
/// byte-identical.
void write_epoch_log_csv(const std::string& path, const std::vector<EpochLog>& log);

/// Dataset cache: images stacked into one PSFT tensor plus a labels CSV.
void save_dataset(const std::string& dir, const Dataset& data);
Dataset load_dataset(const std::string& dir);

}  // namespace aps
