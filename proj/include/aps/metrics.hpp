#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aps/dataset.hpp"
#include "aps/network.hpp"
#include "aps/tensor.hpp"

namespace aps {

/// Shift model used by the consistency metric.
///   CircularUniform: dy, dx drawn uniformly from [-max_shift, max_shift]
///   ZeroPadCrop:     translation by (dy, dx) in [-pad, pad] with zero fill,
///                    matching pad-then-random-crop evaluation
struct ShiftSampler {
    enum class Kind { CircularUniform, ZeroPadCrop };
    Kind kind = Kind::CircularUniform;
    int max_shift = 3;
    uint64_t seed = 0;
};

struct ConsistencyReport {
    int64_t total = 0;
    int64_t consistent = 0;
    double fraction = 0.0;
    /// (dy, dx) -> (pairs, consistent pairs)
    std::map<std::pair<int, int>, std::pair<int64_t, int64_t>> per_shift;
};

/// Fraction of (image, sampled shift) pairs assigned the same predicted
/// label. Shift draws are seeded per (image, trial) pair, so the result is
/// independent of evaluation order.
ConsistencyReport consistency(const Network& net, const Dataset& data,
                              const ShiftSampler& sampler, int trials);

/// Top-1 accuracy on unshifted images.
double accuracy(const Network& net, const Dataset& data);

/// The shifted image used by a given (image, trial) pair; exposed so
/// harnesses can reproduce individual pairs.
Tensor apply_sampled_shift(const Tensor& x, const ShiftSampler& sampler, uint64_t image_index,
                           int trial, int* dy_out = nullptr, int* dx_out = nullptr);

/// Translate with zero fill (content moves down/right for positive shifts).
Tensor zero_pad_shift(const Tensor& x, int dy, int dx);

/// Shift-compensated squared error between a feature map and its
/// counterpart under a shifted input: the compensating translation is the
/// minimizer of ||y_shifted - T_j(y)||_2 over the 9 circular one-pixel
/// translations (identity included); ties resolve to the smallest shift,
/// positive direction first.
struct StabilityEntry {
    int jy = 0;
    int jx = 0;
    double max_delta = 0.0;
    double mean_delta = 0.0;
    Tensor delta_map;             // elementwise |y_shifted - T_j(y)|^2
    int max_energy_channel = 0;   // channel with the largest ||.||_2 in y
    double max_delta_max_energy_channel = 0.0;
};

StabilityEntry stability_delta(const Tensor& y, const Tensor& y_shifted);

struct StabilityReport {
    std::vector<std::string> taps;
    std::vector<StabilityEntry> entries;
};

/// Zeroes one patch x patch square at a seeded uniform location (per batch
/// element). patch = 0 is the identity.
Tensor random_erase(const Tensor& x, int patch, uint64_t seed);

/// Reverses row order.
Tensor vertical_flip(const Tensor& x);

}  // namespace aps
