#include "aps/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "aps/rng.hpp"

namespace aps {

Tensor zero_pad_shift(const Tensor& x, int dy, int dx) {
    const Shape& s = x.shape();
    Tensor out(s, x.precision());
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                const int sy = y - dy;
                if (sy < 0 || sy >= s.h) continue;
                for (int xo = 0; xo < s.w; ++xo) {
                    const int sx = xo - dx;
                    if (sx < 0 || sx >= s.w) continue;
                    out.set(n, c, y, xo, x.at(n, c, sy, sx));
                }
            }
        }
    }
    return out;
}

Tensor apply_sampled_shift(const Tensor& x, const ShiftSampler& sampler, uint64_t image_index,
                           int trial, int* dy_out, int* dx_out) {
    Rng rng(derive_seed(sampler.seed, image_index * 1000003ULL + static_cast<uint64_t>(trial)));
    const int dy = rng.uniform_int(-sampler.max_shift, sampler.max_shift);
    const int dx = rng.uniform_int(-sampler.max_shift, sampler.max_shift);
    if (dy_out) *dy_out = dy;
    if (dx_out) *dx_out = dx;
    if (sampler.kind == ShiftSampler::Kind::CircularUniform) return circular_shift(x, dy, dx);
    return zero_pad_shift(x, dy, dx);
}

ConsistencyReport consistency(const Network& net, const Dataset& data,
                              const ShiftSampler& sampler, int trials) {
    if (data.empty()) throw std::invalid_argument("consistency: empty dataset");
    if (trials < 1) throw std::invalid_argument("consistency: trials must be >= 1");

    ConsistencyReport report;
    for (int i = 0; i < data.size(); ++i) {
        const Tensor& img = data.images[static_cast<size_t>(i)];
        const int base_label = predict_labels(net.forward(img))[0];
        for (int t = 0; t < trials; ++t) {
            int dy = 0, dx = 0;
            const Tensor shifted =
                apply_sampled_shift(img, sampler, static_cast<uint64_t>(i), t, &dy, &dx);
            const int shifted_label = predict_labels(net.forward(shifted))[0];
            const bool same = shifted_label == base_label;
            ++report.total;
            if (same) ++report.consistent;
            auto& cell = report.per_shift[{dy, dx}];
            ++cell.first;
            if (same) ++cell.second;
        }
    }
    report.fraction = static_cast<double>(report.consistent) / static_cast<double>(report.total);
    return report;
}

double accuracy(const Network& net, const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("accuracy: empty dataset");
    int64_t correct = 0;
    for (int i = 0; i < data.size(); ++i) {
        const int pred = predict_labels(net.forward(data.images[static_cast<size_t>(i)]))[0];
        if (pred == data.labels[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / data.size();
}

StabilityEntry stability_delta(const Tensor& y, const Tensor& y_shifted) {
    if (y.shape() != y_shifted.shape()) {
        throw std::invalid_argument("stability_delta: shapes " + to_string(y.shape()) + " vs " +
                                    to_string(y_shifted.shape()));
    }

    // smallest-shift-first order, positive before negative
    const int order[3] = {0, 1, -1};
    StabilityEntry best;
    double best_norm = -1.0;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            const int jy = order[a], jx = order[b];
            const Tensor t = circular_shift(y, jy, jx);
            double sq = 0.0;
            for (int64_t i = 0; i < t.numel(); ++i) {
                const double d = y_shifted.at_flat(i) - t.at_flat(i);
                sq += d * d;
            }
            const double norm = std::sqrt(sq);
            if (best_norm < 0.0 || norm < best_norm) {
                best_norm = norm;
                best.jy = jy;
                best.jx = jx;
            }
        }
    }

    const Tensor aligned = circular_shift(y, best.jy, best.jx);
    best.delta_map = Tensor::zeros(y.shape(), Precision::F64);
    double sum = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) {
        const double d = y_shifted.at_flat(i) - aligned.at_flat(i);
        const double dd = d * d;
        best.delta_map.set_flat(i, dd);
        if (dd > best.max_delta) best.max_delta = dd;
        sum += dd;
    }
    best.mean_delta = sum / static_cast<double>(y.numel());

    // channel with the highest energy in the reference map
    const Shape& s = y.shape();
    double best_energy = -1.0;
    for (int c = 0; c < s.c; ++c) {
        double e = 0.0;
        for (int n = 0; n < s.n; ++n) {
            for (int h = 0; h < s.h; ++h) {
                for (int w = 0; w < s.w; ++w) {
                    const double v = y.at(n, c, h, w);
                    e += v * v;
                }
            }
        }
        if (e > best_energy) {
            best_energy = e;
            best.max_energy_channel = c;
        }
    }
    for (int n = 0; n < s.n; ++n) {
        for (int h = 0; h < s.h; ++h) {
            for (int w = 0; w < s.w; ++w) {
                best.max_delta_max_energy_channel =
                    std::max(best.max_delta_max_energy_channel,
                             best.delta_map.at(n, best.max_energy_channel, h, w));
            }
        }
    }
    return best;
}

Tensor random_erase(const Tensor& x, int patch, uint64_t seed) {
    const Shape& s = x.shape();
    if (patch < 0 || patch > s.h || patch > s.w) {
        throw std::invalid_argument("random_erase: patch " + std::to_string(patch) +
                                    " invalid for " + to_string(s));
    }
    if (patch == 0) return x;
    Tensor out = x;
    for (int n = 0; n < s.n; ++n) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(n)));
        const int oy = rng.uniform_int(0, s.h - patch);
        const int ox = rng.uniform_int(0, s.w - patch);
        for (int c = 0; c < s.c; ++c) {
            for (int y = oy; y < oy + patch; ++y) {
                for (int xo = ox; xo < ox + patch; ++xo) out.set(n, c, y, xo, 0.0);
            }
        }
    }
    return out;
}

Tensor vertical_flip(const Tensor& x) {
    const Shape& s = x.shape();
    Tensor out(s, x.precision());
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                for (int xo = 0; xo < s.w; ++xo) {
                    out.set(n, c, y, xo, x.at(n, c, s.h - 1 - y, xo));
                }
            }
        }
    }
    return out;
}

}  // namespace aps
