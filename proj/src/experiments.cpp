#include "aps/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "aps/metrics.hpp"
#include "aps/rng.hpp"

namespace aps {

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

namespace {

inline int wrap(int v, int m) {
    int r = v % m;
    return r < 0 ? r + m : r;
}

// All patterns draw with wraparound so the class is well defined under any
// circular shift of the canvas.
void draw_disc(Tensor& img, int cy, int cx, int radius, double amp) {
    const Shape& s = img.shape();
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dy * dy + dx * dx <= radius * radius) {
                const int y = wrap(cy + dy, s.h), x = wrap(cx + dx, s.w);
                img.set(0, 0, y, x, img.at(0, 0, y, x) + amp);
            }
        }
    }
}

void draw_cross(Tensor& img, int cy, int cx, int arm, double amp) {
    const Shape& s = img.shape();
    for (int d = -arm; d <= arm; ++d) {
        int y = wrap(cy + d, s.h);
        img.set(0, 0, y, wrap(cx, s.w), img.at(0, 0, y, wrap(cx, s.w)) + amp);
        int x = wrap(cx + d, s.w);
        img.set(0, 0, wrap(cy, s.h), x, img.at(0, 0, wrap(cy, s.h), x) + amp);
    }
}

void draw_bar(Tensor& img, int cy, int cx, int len, int thick, bool horizontal, double amp) {
    const Shape& s = img.shape();
    for (int t = -thick / 2; t <= (thick - 1) / 2; ++t) {
        for (int d = -len / 2; d <= (len - 1) / 2; ++d) {
            const int y = horizontal ? wrap(cy + t, s.h) : wrap(cy + d, s.h);
            const int x = horizontal ? wrap(cx + d, s.w) : wrap(cx + t, s.w);
            img.set(0, 0, y, x, img.at(0, 0, y, x) + amp);
        }
    }
}

Tensor make_shape_image(const DatasetSpec& spec, int klass, Rng& rng) {
    Tensor img({1, 1, spec.h, spec.w}, spec.precision);
    const int cy = rng.uniform_int(0, spec.h - 1);
    const int cx = rng.uniform_int(0, spec.w - 1);
    const double amp = rng.uniform(0.8, 1.2);
    const int variant = klass % 4;
    const int size_boost = klass / 4;  // classes beyond the base four grow
    switch (variant) {
        case 0: draw_disc(img, cy, cx, 4 + size_boost, amp); break;
        case 1: draw_cross(img, cy, cx, 5 + size_boost, amp); break;
        case 2: draw_bar(img, cy, cx, 11 + 2 * size_boost, 2, true, amp); break;
        case 3: draw_bar(img, cy, cx, 11 + 2 * size_boost, 2, false, amp); break;
    }
    for (int y = 0; y < spec.h; ++y) {
        for (int x = 0; x < spec.w; ++x) {
            img.set(0, 0, y, x, img.at(0, 0, y, x) + rng.normal(0.0, 0.05));
        }
    }
    return img;
}

Tensor make_checkerboard_image(const DatasetSpec& spec, int klass, Rng& rng) {
    Tensor img({1, 1, spec.h, spec.w}, spec.precision);
    const int cell = klass + 1;  // class 0 is the fully aliasing 1-pixel cell
    const int phase_y = rng.uniform_int(0, 2 * cell - 1);
    const int phase_x = rng.uniform_int(0, 2 * cell - 1);
    const double amp = rng.uniform(0.8, 1.2);
    for (int y = 0; y < spec.h; ++y) {
        for (int x = 0; x < spec.w; ++x) {
            const int par = ((y + phase_y) / cell + (x + phase_x) / cell) % 2;
            const double v = (par == 0 ? amp : -amp) + rng.normal(0.0, 0.05);
            img.set(0, 0, y, x, v);
        }
    }
    return img;
}

}  // namespace

SplitDataset generate(const DatasetSpec& spec) {
    if (spec.classes < 2) throw std::invalid_argument("generate: need at least 2 classes");
    if (spec.per_class < 1) throw std::invalid_argument("generate: need at least 1 image/class");
    if (spec.h < 8 || spec.w < 8) throw std::invalid_argument("generate: canvas too small");
    if (spec.family == DatasetSpec::Family::Checkerboard && 2 * spec.classes > spec.h) {
        throw std::invalid_argument("generate: checkerboard cells do not fit the canvas");
    }

    SplitDataset out;
    out.train.classes = out.val.classes = out.test.classes = spec.classes;
    const int n_val = spec.per_class / 10;
    const int n_test = spec.per_class / 10;
    const int n_train = spec.per_class - n_val - n_test;

    for (int k = 0; k < spec.classes; ++k) {
        for (int i = 0; i < spec.per_class; ++i) {
            Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(k) * 1000003ULL +
                                               static_cast<uint64_t>(i)));
            Tensor img = spec.family == DatasetSpec::Family::Shapes
                             ? make_shape_image(spec, k, rng)
                             : make_checkerboard_image(spec, k, rng);
            Dataset* dst = i < n_train ? &out.train
                           : i < n_train + n_val ? &out.val
                                                 : &out.test;
            dst->images.push_back(std::move(img));
            dst->labels.push_back(k);
        }
    }

    // deterministic interleave of classes
    auto shuffle = [&spec](Dataset& d, uint64_t salt) {
        Rng rng(derive_seed(spec.seed, salt));
        for (int i = d.size() - 1; i > 0; --i) {
            const int j = rng.uniform_int(0, i);
            std::swap(d.images[static_cast<size_t>(i)], d.images[static_cast<size_t>(j)]);
            std::swap(d.labels[static_cast<size_t>(i)], d.labels[static_cast<size_t>(j)]);
        }
    };
    shuffle(out.train, 11);
    shuffle(out.val, 13);
    shuffle(out.test, 17);
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

Tensor stack_batch(const Dataset& data, std::span<const int> order, int begin, int end) {
    const Shape one = data.images[static_cast<size_t>(order[static_cast<size_t>(begin)])].shape();
    Tensor batch({end - begin, one.c, one.h, one.w},
                 data.images[static_cast<size_t>(order[static_cast<size_t>(begin)])].precision());
    const int64_t per = one.numel();
    for (int i = begin; i < end; ++i) {
        const Tensor& img = data.images[static_cast<size_t>(order[static_cast<size_t>(i)])];
        for (int64_t e = 0; e < per; ++e) {
            batch.set_flat(static_cast<int64_t>(i - begin) * per + e, img.at_flat(e));
        }
    }
    return batch;
}

Tensor augment_batch(const Tensor& batch, const Augmentation& aug, Rng& rng) {
    if (aug.kind == Augmentation::Kind::None) return batch;
    Tensor out = batch;
    const Shape& s = batch.shape();
    for (int n = 0; n < s.n; ++n) {
        const int dy = rng.uniform_int(-aug.amount, aug.amount);
        const int dx = rng.uniform_int(-aug.amount, aug.amount);
        Tensor img = batch.slice_batch(n);
        img = aug.kind == Augmentation::Kind::RandomCircularShift ? circular_shift(img, dy, dx)
                                                                  : zero_pad_shift(img, dy, dx);
        const int64_t per = img.numel();
        for (int64_t e = 0; e < per; ++e) out.set_flat(n * per + e, img.at_flat(e));
    }
    return out;
}

double eval_consistency(const Network& net, const Dataset& val, const TrainConfig& cfg,
                        int epoch) {
    ShiftSampler sampler;
    sampler.kind = ShiftSampler::Kind::CircularUniform;
    sampler.max_shift = cfg.consistency_max_shift;
    // fixed per-epoch shift set: same epoch always sees the same shifts
    sampler.seed = derive_seed(cfg.seed, 7700 + static_cast<uint64_t>(epoch));
    return consistency(net, val, sampler, cfg.consistency_trials).fraction;
}

}  // namespace

std::vector<EpochLog> train(Network& net, const SplitDataset& data, const TrainConfig& cfg) {
    if (data.train.empty()) throw std::invalid_argument("train: empty training set");
    if (cfg.batch < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (cfg.lr < 0 || cfg.momentum < 0 || cfg.weight_decay < 0) {
        throw std::invalid_argument("train: rates must be non-negative");
    }

    std::vector<EpochLog> log;
    log.push_back({0, 0.0, accuracy(net, data.val), eval_consistency(net, data.val, cfg, 0)});

    std::vector<Param*> params = net.params();
    std::vector<Tensor> velocity;
    velocity.reserve(params.size());
    for (Param* p : params) velocity.push_back(Tensor::zeros(p->value.shape(), Precision::F64));

    std::vector<int> order(static_cast<size_t>(data.train.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr =
            cfg.lr * std::pow(cfg.lr_decay, (epoch - 1) / std::max(cfg.lr_decay_period, 1));

        Rng rng(derive_seed(cfg.seed, 31000 + static_cast<uint64_t>(epoch)));
        for (int i = data.train.size() - 1; i > 0; --i) {
            const int j = rng.uniform_int(0, i);
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }

        double loss_sum = 0.0;
        int64_t batches = 0;
        for (int begin = 0; begin < data.train.size(); begin += cfg.batch) {
            const int end = std::min(begin + cfg.batch, data.train.size());
            Tensor batch = stack_batch(data.train, order, begin, end);
            batch = augment_batch(batch, cfg.augment, rng);
            std::vector<int> labels(static_cast<size_t>(end - begin));
            for (int i = begin; i < end; ++i) {
                labels[static_cast<size_t>(i - begin)] =
                    data.train.labels[static_cast<size_t>(order[static_cast<size_t>(i)])];
            }

            net.zero_grads();
            const double loss = net.backward(batch, labels);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                         std::to_string(epoch));
            }
            loss_sum += loss;
            ++batches;

            if (cfg.clip_grad_norm > 0.0) {
                double sq = 0.0;
                for (Param* p : params) {
                    for (int64_t e = 0; e < p->grad.numel(); ++e) {
                        const double gv = p->grad.at_flat(e);
                        sq += gv * gv;
                    }
                }
                const double norm = std::sqrt(sq);
                if (norm > cfg.clip_grad_norm) {
                    const double f = cfg.clip_grad_norm / norm;
                    for (Param* p : params) {
                        for (int64_t e = 0; e < p->grad.numel(); ++e) {
                            p->grad.set_flat(e, p->grad.at_flat(e) * f);
                        }
                    }
                }
            }

            for (size_t pi = 0; pi < params.size(); ++pi) {
                Param* p = params[pi];
                Tensor& v = velocity[pi];
                for (int64_t e = 0; e < p->value.numel(); ++e) {
                    const double g = p->grad.at_flat(e) + cfg.weight_decay * p->value.at_flat(e);
                    const double vnew = cfg.momentum * v.at_flat(e) + g;
                    v.set_flat(e, vnew);
                    p->value.set_flat(e, p->value.at_flat(e) - lr * vnew);
                }
            }
        }

        log.push_back({epoch, loss_sum / static_cast<double>(batches),
                       accuracy(net, data.val), eval_consistency(net, data.val, cfg, epoch)});
    }
    return log;
}

// ---------------------------------------------------------------------------
// Forward timing
// ---------------------------------------------------------------------------

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchResult bench_forward(const Network& a, const Network& b, int batch, int reps, int warmup,
                          uint64_t seed) {
    if (reps < 10) throw std::invalid_argument("bench_forward: need at least 10 repetitions");

    Rng rng(seed);
    Tensor input(a.input_shape(batch), a.spec().precision);
    for (int64_t i = 0; i < input.numel(); ++i) input.set_flat(i, rng.normal());
    Tensor input_b = input.to_precision(b.spec().precision);
    if (b.input_shape(batch) != input_b.shape()) {
        throw std::invalid_argument("bench_forward: networks take different input shapes");
    }

    auto time_net = [&](const Network& net, const Tensor& x, std::vector<double>& out) {
        for (int i = 0; i < warmup; ++i) (void)net.forward(x);
        out.resize(static_cast<size_t>(reps));
        for (int i = 0; i < reps; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            (void)net.forward(x);
            const auto t1 = std::chrono::steady_clock::now();
            out[static_cast<size_t>(i)] =
                std::chrono::duration<double, std::milli>(t1 - t0).count();
        }
    };

    std::vector<double> ta, tb;
    time_net(a, input, ta);
    time_net(b, input_b, tb);

    BenchResult r;
    r.reps = reps;
    r.median_ms_a = median_of(ta);
    r.median_ms_b = median_of(tb);
    auto mad = [](const std::vector<double>& v, double med) {
        std::vector<double> dev(v.size());
        for (size_t i = 0; i < v.size(); ++i) dev[i] = std::abs(v[i] - med);
        return median_of(dev);
    };
    r.mad_ms_a = mad(ta, r.median_ms_a);
    r.mad_ms_b = mad(tb, r.median_ms_b);
    r.ratio = r.median_ms_b / r.median_ms_a;
    return r;
}

void save_dataset(const std::string& dir, const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("save_dataset: empty dataset");
    std::filesystem::create_directories(dir);
    const Shape one = data.images.front().shape();
    Tensor stacked({data.size(), one.c, one.h, one.w}, data.images.front().precision());
    const int64_t per = one.numel();
    for (int i = 0; i < data.size(); ++i) {
        const Tensor& img = data.images[static_cast<size_t>(i)];
        if (img.shape() != one) throw std::invalid_argument("save_dataset: ragged image shapes");
        for (int64_t e = 0; e < per; ++e) stacked.set_flat(i * per + e, img.at_flat(e));
    }
    save_tensor(dir + "/images.psft", stacked);
    std::ofstream f(dir + "/labels.csv");
    if (!f) throw std::runtime_error("save_dataset: cannot write labels in " + dir);
    f << "classes," << data.classes << "\n";
    for (int lab : data.labels) f << lab << "\n";
}

Dataset load_dataset(const std::string& dir) {
    Tensor stacked = load_tensor(dir + "/images.psft");
    std::ifstream f(dir + "/labels.csv");
    if (!f) throw std::runtime_error("load_dataset: cannot open labels in " + dir);
    std::string header;
    std::getline(f, header);
    if (header.rfind("classes,", 0) != 0) {
        throw std::runtime_error("load_dataset: malformed labels header");
    }
    Dataset d;
    d.classes = std::stoi(header.substr(8));
    int lab = 0;
    while (f >> lab) d.labels.push_back(lab);
    if (static_cast<int>(d.labels.size()) != stacked.shape().n) {
        throw std::runtime_error("load_dataset: label count does not match image count");
    }
    for (int i = 0; i < stacked.shape().n; ++i) d.images.push_back(stacked.slice_batch(i));
    return d;
}

void write_epoch_log_csv(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_epoch_log_csv: cannot open " + path);
    f << "epoch,train_loss,val_acc,val_consistency\n";
    char buf[128];
    for (const EpochLog& e : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g\n", e.epoch, e.train_loss,
                      e.val_acc, e.val_consistency);
        f << buf;
    }
}

}  // namespace aps
