#include "aps/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "aps/experiments.hpp"
#include "aps/metrics.hpp"
#include "aps/rng.hpp"
#include "aps/spectral.hpp"

namespace aps {

namespace {

namespace fs = std::filesystem;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

/// Ordered key=value configuration with defaults; file values override
/// defaults, unknown keys are rejected.
class Config {
public:
    explicit Config(std::vector<std::pair<std::string, std::string>> defaults)
        : entries_(std::move(defaults)) {}

    void load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file: " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            line = trim(line);
            if (line.empty() || line[0] == '#') continue;
            const size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
            }
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            auto* slot = find(key);
            if (!slot) {
                throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key +
                                  "' (allowed: " + allowed() + ")");
            }
            slot->second = value;
        }
    }

    const std::string& str(const std::string& key) const {
        const auto* slot = find(key);
        if (!slot) throw ConfigError("internal: unregistered config key '" + key + "'");
        return slot->second;
    }

    int integer(const std::string& key) const {
        try {
            return std::stoi(str(key));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': expected integer, got '" + str(key) +
                              "'");
        }
    }

    double real(const std::string& key) const {
        try {
            return std::stod(str(key));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': expected number, got '" + str(key) +
                              "'");
        }
    }

    bool boolean(const std::string& key) const {
        const std::string& v = str(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
    }

    std::vector<std::string> list(const std::string& key) const { return split_csv(str(key)); }

    std::vector<int> int_list(const std::string& key) const {
        std::vector<int> out;
        for (const std::string& item : list(key)) {
            try {
                out.push_back(std::stoi(item));
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "': expected integer list");
            }
        }
        return out;
    }

    void dump(const std::string& path, const std::string& header) const {
        std::ofstream f(path);
        if (!f) throw ConfigError("cannot write resolved config: " + path);
        f << "# " << header << "\n";
        for (const auto& [k, v] : entries_) f << k << "=" << v << "\n";
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;

    std::pair<std::string, std::string>* find(const std::string& key) {
        for (auto& e : entries_) {
            if (e.first == key) return &e;
        }
        return nullptr;
    }
    const std::pair<std::string, std::string>* find(const std::string& key) const {
        for (const auto& e : entries_) {
            if (e.first == key) return &e;
        }
        return nullptr;
    }
    std::string allowed() const {
        std::string s;
        for (const auto& e : entries_) {
            if (!s.empty()) s += ", ";
            s += e.first;
        }
        return s;
    }
};

struct GlobalFlags {
    std::string config_path;
    std::string out_dir = "out";
    uint64_t seed = 0;
    Precision precision = Precision::F32;
};

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

struct NetKind {
    std::string name;
    DownKind kind = DownKind::Baseline;
    int blur = 3;
};

NetKind parse_kind(const std::string& name) {
    NetKind k;
    k.name = name;
    if (name == "baseline") {
        k.kind = DownKind::Baseline;
        return k;
    }
    if (name == "aps") {
        k.kind = DownKind::APS;
        return k;
    }
    auto tail_blur = [&name](size_t prefix_len) {
        const std::string tail = name.substr(prefix_len);
        if (tail == "2" || tail == "3" || tail == "5") return std::stoi(tail);
        throw ConfigError("unknown downsampling kind '" + name + "'");
    };
    if (name.rfind("lpf", 0) == 0) {
        k.kind = DownKind::LPF;
        k.blur = tail_blur(3);
        return k;
    }
    if (name.rfind("aps", 0) == 0) {
        k.kind = DownKind::APSBlur;
        k.blur = tail_blur(3);
        return k;
    }
    throw ConfigError("unknown downsampling kind '" + name +
                      "' (expected baseline, aps, lpf{2,3,5} or aps{2,3,5})");
}

SelectionCriterion parse_criterion(const std::string& name) {
    SelectionCriterion c;
    std::string rest;
    if (name.rfind("argmax_", 0) == 0) {
        c.mode = SelectMode::Argmax;
        rest = name.substr(7);
    } else if (name.rfind("argmin_", 0) == 0) {
        c.mode = SelectMode::Argmin;
        rest = name.substr(7);
    } else {
        throw ConfigError("unknown criterion '" + name + "' (expected argmax_* or argmin_*)");
    }
    if (rest == "l1") {
        c.norm = NormKind::L1;
    } else if (rest == "l2") {
        c.norm = NormKind::L2;
    } else if (rest == "linf") {
        c.norm = NormKind::Linf;
    } else if (rest == "l1l2") {
        c.norm = NormKind::L1PlusL2;
    } else {
        throw ConfigError("unknown criterion norm '" + rest + "'");
    }
    return c;
}

Network build_net(const Config& cfg, const GlobalFlags& g, const NetKind& kind,
                  uint64_t seed_offset = 0) {
    ToyOptions opt;
    opt.channels = cfg.int_list("channels");
    opt.input = cfg.integer("input");
    opt.classes = cfg.integer("classes");
    opt.precision = g.precision;
    opt.seed = derive_seed(g.seed, 900 + seed_offset);
    opt.criterion = parse_criterion(cfg.str("criterion"));
    opt.blur = kind.blur;
    return Network(make_toy_spec(kind.kind, opt));
}

Dataset make_eval_dataset(const Config& cfg, const GlobalFlags& g) {
    const std::string family = cfg.str("dataset");
    if (family == "noise") {
        Dataset d;
        d.classes = cfg.integer("classes");
        const int count = cfg.integer("images");
        const int input = cfg.integer("input");
        for (int i = 0; i < count; ++i) {
            Rng rng(derive_seed(g.seed, 500 + static_cast<uint64_t>(i)));
            Tensor img({1, 1, input, input}, g.precision);
            for (int64_t e = 0; e < img.numel(); ++e) img.set_flat(e, rng.normal());
            d.images.push_back(std::move(img));
            d.labels.push_back(i % d.classes);
        }
        return d;
    }
    DatasetSpec ds;
    ds.classes = cfg.integer("classes");
    ds.h = ds.w = cfg.integer("input");
    ds.seed = derive_seed(g.seed, 501);
    ds.precision = g.precision;
    if (family == "shapes") {
        ds.family = DatasetSpec::Family::Shapes;
    } else if (family == "checkerboard") {
        ds.family = DatasetSpec::Family::Checkerboard;
    } else {
        throw ConfigError("unknown dataset '" + family +
                          "' (expected noise, shapes or checkerboard)");
    }
    const int count = cfg.integer("images");
    ds.per_class = (count + ds.classes - 1) / ds.classes;
    SplitDataset split = generate(ds);
    Dataset d;
    d.classes = ds.classes;
    for (int i = 0; i < split.train.size() && d.size() < count; ++i) {
        d.images.push_back(split.train.images[static_cast<size_t>(i)]);
        d.labels.push_back(split.train.labels[static_cast<size_t>(i)]);
    }
    return d;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::ofstream open_csv(const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path.string());
    return f;
}

bool is_aps_kind(DownKind k) { return k == DownKind::APS || k == DownKind::APSBlur; }

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_invariance(const GlobalFlags& g) {
    Config cfg({{"kinds", "aps,baseline"},
                {"dataset", "noise"},
                {"images", "200"},
                {"trials", "5"},
                {"max_shift", "3"},
                {"input", "32"},
                {"channels", "8,16,32"},
                {"classes", "4"},
                {"criterion", "argmax_l2"},
                {"netspec", ""}});
    if (!g.config_path.empty()) cfg.load(g.config_path);
    cfg.dump((fs::path(g.out_dir) / "invariance_config.txt").string(), "resolved invariance config");

    const Dataset data = make_eval_dataset(cfg, g);
    ShiftSampler sampler{ShiftSampler::Kind::CircularUniform, cfg.integer("max_shift"),
                         derive_seed(g.seed, 42)};
    const int trials = cfg.integer("trials");

    auto csv = open_csv(fs::path(g.out_dir) / "consistency.csv");
    csv << "model,sampler,trials,fraction\n";
    const std::string sampler_name =
        "circular(max=" + std::to_string(sampler.max_shift) + ")";

    bool aps_ok = true;
    if (!cfg.str("netspec").empty()) {
        std::ifstream f(cfg.str("netspec"));
        if (!f) throw ConfigError("cannot open netspec: " + cfg.str("netspec"));
        std::stringstream ss;
        ss << f.rdbuf();
        Network net(NetworkSpec::from_text(ss.str()));
        ConsistencyReport r = consistency(net, data, sampler, trials);
        csv << "custom," << sampler_name << "," << trials << "," << fmt(r.fraction) << "\n";
    } else {
        for (const std::string& name : cfg.list("kinds")) {
            const NetKind kind = parse_kind(name);
            Network net = build_net(cfg, g, kind);
            ConsistencyReport r = consistency(net, data, sampler, trials);
            csv << name << "," << sampler_name << "," << trials << "," << fmt(r.fraction)
                << "\n";
            if (is_aps_kind(kind.kind) && r.fraction != 1.0) aps_ok = false;
        }
    }
    return aps_ok ? 0 : 1;
}

int cmd_oracle(const GlobalFlags& g) {
    Config cfg({{"sizes", "16,32,64,128"},
                {"signals", "100"},
                {"theorem_n", "64"},
                {"band", "6"},
                {"powers", "2,3,4"},
                {"polys", "3"}});
    if (!g.config_path.empty()) cfg.load(g.config_path);
    cfg.dump((fs::path(g.out_dir) / "oracle_config.txt").string(), "resolved oracle config");

    auto csv = open_csv(fs::path(g.out_dir) / "oracle.csv");
    csv << "identity,n,residual,status\n";
    bool ok = true;
    auto emit = [&csv, &ok](const std::string& identity, int n, double residual,
                            double threshold) {
        const bool pass = residual < threshold;
        csv << identity << "," << n << "," << fmt(residual) << "," << (pass ? "ok" : "fail")
            << "\n";
        if (!pass) ok = false;
    };

    const int signals = cfg.integer("signals");
    const int band = cfg.integer("band");

    // stride-2 spectral identities on random signals
    for (int n : cfg.int_list("sizes")) {
        double even = 0.0, odd = 0.0;
        for (int s = 0; s < signals; ++s) {
            Rng rng(derive_seed(g.seed, 600 + static_cast<uint64_t>(s)));
            Signal1D x;
            x.samples.resize(static_cast<size_t>(n));
            for (double& v : x.samples) v = rng.normal();
            PolyphaseResiduals r = polyphase_spectrum_check(x);
            even = std::max(even, r.even_identity);
            odd = std::max(odd, r.odd_identity);
        }
        emit("polyphase_even", n, even, 1e-10);
        emit("polyphase_odd", n, odd, 1e-10);
    }

    // sum-preservation of polynomial activations after ideal low-pass
    const int tn = cfg.integer("theorem_n");
    for (int m : cfg.int_list("powers")) {
        double worst = 0.0;
        for (int s = 0; s < signals; ++s) {
            Signal1D x = random_bandlimited(tn, band, derive_seed(g.seed, 700 + s));
            worst = std::max(worst, theorem1_check(x, m));
        }
        emit("power_sum_m" + std::to_string(m), tn, worst, 1e-9);
    }
    {
        double worst = 0.0;
        Rng rng(derive_seed(g.seed, 800));
        for (int p = 0; p < cfg.integer("polys"); ++p) {
            Signal1D x = random_bandlimited(tn, band, derive_seed(g.seed, 850 + p));
            std::vector<double> coeffs(static_cast<size_t>(2 + p % 3) + 1);
            for (double& c : coeffs) c = rng.normal();
            worst = std::max(worst, theorem1_check_poly(x, coeffs));
        }
        emit("polynomial_sum", tn, worst, 1e-9);
    }

    // cosine/relu closed forms; invalid sizes are recorded as skipped
    for (int n : cfg.int_list("sizes")) {
        const int half = n / 2;
        if (n % 2 != 0 || half <= 6 || half % 4 != 0) {
            csv << "cos_relu_sum0," << n << ",,skipped\n";
            csv << "cos_relu_sum1," << n << ",,skipped\n";
            continue;
        }
        CosineReluSums r = cosine_relu_sums(n);
        emit("cos_relu_sum0", n, std::abs(r.sum0 - r.closed0), 1e-10);
        emit("cos_relu_sum1", n, std::abs(r.sum1 - r.closed1_from_sum0), 1e-10);
    }
    return ok ? 0 : 1;
}

int cmd_train(const GlobalFlags& g) {
    Config cfg({{"kind", "aps"},
                {"dataset", "shapes"},
                {"images_per_class", "100"},
                {"input", "32"},
                {"channels", "8,16,32"},
                {"classes", "4"},
                {"criterion", "argmax_l2"},
                {"epochs", "30"},
                {"batch", "32"},
                {"lr", "0.01"},
                {"momentum", "0.9"},
                {"weight_decay", "0.0005"},
                {"lr_decay", "0.1"},
                {"lr_decay_period", "20"},
                {"clip_grad_norm", "1.0"},
                {"augment", "none"},
                {"augment_amount", "3"},
                {"netspec", ""}});
    if (!g.config_path.empty()) cfg.load(g.config_path);
    cfg.dump((fs::path(g.out_dir) / "train_config.txt").string(), "resolved train config");

    DatasetSpec ds;
    ds.classes = cfg.integer("classes");
    ds.per_class = cfg.integer("images_per_class");
    ds.h = ds.w = cfg.integer("input");
    ds.seed = derive_seed(g.seed, 501);
    ds.precision = g.precision;
    const std::string family = cfg.str("dataset");
    if (family == "shapes") {
        ds.family = DatasetSpec::Family::Shapes;
    } else if (family == "checkerboard") {
        ds.family = DatasetSpec::Family::Checkerboard;
    } else {
        throw ConfigError("train: dataset must be shapes or checkerboard");
    }
    SplitDataset data = generate(ds);

    const NetKind kind = parse_kind(cfg.str("kind"));
    Network net = [&] {
        if (cfg.str("netspec").empty()) return build_net(cfg, g, kind);
        std::ifstream f(cfg.str("netspec"));
        if (!f) throw ConfigError("cannot open netspec: " + cfg.str("netspec"));
        std::stringstream ss;
        ss << f.rdbuf();
        return Network(NetworkSpec::from_text(ss.str()));
    }();

    TrainConfig tc;
    tc.epochs = cfg.integer("epochs");
    tc.batch = cfg.integer("batch");
    tc.lr = cfg.real("lr");
    tc.momentum = cfg.real("momentum");
    tc.weight_decay = cfg.real("weight_decay");
    tc.lr_decay = cfg.real("lr_decay");
    tc.lr_decay_period = cfg.integer("lr_decay_period");
    tc.clip_grad_norm = cfg.real("clip_grad_norm");
    tc.seed = derive_seed(g.seed, 502);
    const std::string aug = cfg.str("augment");
    if (aug == "shift") {
        tc.augment = {Augmentation::Kind::RandomCircularShift, cfg.integer("augment_amount")};
    } else if (aug == "crop") {
        tc.augment = {Augmentation::Kind::RandomZeroPadCrop, cfg.integer("augment_amount")};
    } else if (aug != "none") {
        throw ConfigError("train: augment must be none, shift or crop");
    }

    const std::vector<EpochLog> log = train(net, data, tc);
    write_epoch_log_csv((fs::path(g.out_dir) / "train_log.csv").string(), log);
    save_parameters(net, (fs::path(g.out_dir) / "params").string());

    ShiftSampler sampler{ShiftSampler::Kind::CircularUniform, 3, derive_seed(g.seed, 503)};
    auto csv = open_csv(fs::path(g.out_dir) / "test_summary.csv");
    csv << "model,test_acc,test_consistency\n";
    csv << cfg.str("kind") << "," << fmt(accuracy(net, data.test)) << ","
        << fmt(consistency(net, data.test, sampler, 3).fraction) << "\n";
    return 0;
}

int cmd_stability(const GlobalFlags& g) {
    Config cfg({{"kinds", "aps,lpf5"},
                {"input", "32"},
                {"channels", "8,16,32"},
                {"classes", "4"},
                {"criterion", "argmax_l2"},
                {"shift", "1"}});
    if (!g.config_path.empty()) cfg.load(g.config_path);
    cfg.dump((fs::path(g.out_dir) / "stability_config.txt").string(), "resolved stability config");

    const int input = cfg.integer("input");
    const int shift = cfg.integer("shift");
    Rng rng(derive_seed(g.seed, 910));
    Tensor x({1, 1, input, input}, g.precision);
    for (int64_t i = 0; i < x.numel(); ++i) x.set_flat(i, rng.normal());
    Tensor xs = circular_shift(x, shift, shift);

    bool aps_ok = true;
    for (const std::string& name : cfg.list("kinds")) {
        const NetKind kind = parse_kind(name);
        Network net = build_net(cfg, g, kind);
        std::vector<std::string> taps = net.block_ids();
        if (taps.size() > 3) taps.erase(taps.begin(), taps.end() - 3);

        auto r0 = net.forward_with_taps(x, taps);
        auto r1 = net.forward_with_taps(xs, taps);

        auto csv = open_csv(fs::path(g.out_dir) / ("stability_" + name + ".csv"));
        csv << "tap,channel,max_delta,mean_delta,jx,jy\n";
        for (const std::string& tap : taps) {
            StabilityEntry e = stability_delta(r0.taps.at(tap), r1.taps.at(tap));
            csv << tap << "," << e.max_energy_channel << ","
                << fmt(e.max_delta_max_energy_channel) << "," << fmt(e.mean_delta) << ","
                << e.jx << "," << e.jy << "\n";
            csv << tap << ",all," << fmt(e.max_delta) << "," << fmt(e.mean_delta) << "," << e.jx
                << "," << e.jy << "\n";
            if (is_aps_kind(kind.kind) && e.max_delta >= 1e-8) aps_ok = false;
        }
    }
    return aps_ok ? 0 : 1;
}

int cmd_ood(const GlobalFlags& g) {
    Config cfg({{"kinds", "aps"},
                {"dataset", "shapes"},
                {"images", "100"},
                {"patches", "2,3,4,5,6,7,8"},
                {"flip", "true"},
                {"trials", "3"},
                {"max_shift", "3"},
                {"input", "32"},
                {"channels", "8,16,32"},
                {"classes", "4"},
                {"criterion", "argmax_l2"}});
    if (!g.config_path.empty()) cfg.load(g.config_path);
    cfg.dump((fs::path(g.out_dir) / "ood_config.txt").string(), "resolved ood config");

    const Dataset base = make_eval_dataset(cfg, g);
    ShiftSampler sampler{ShiftSampler::Kind::CircularUniform, cfg.integer("max_shift"),
                         derive_seed(g.seed, 43)};
    const int trials = cfg.integer("trials");

    auto csv = open_csv(fs::path(g.out_dir) / "ood.csv");
    csv << "model,perturbation,param,trials,fraction\n";

    bool aps_ok = true;
    for (const std::string& name : cfg.list("kinds")) {
        const NetKind kind = parse_kind(name);
        Network net = build_net(cfg, g, kind);

        auto run_row = [&](const std::string& pert, int param, const Dataset& d) {
            const double f = consistency(net, d, sampler, trials).fraction;
            csv << name << "," << pert << "," << param << "," << trials << "," << fmt(f) << "\n";
            if (is_aps_kind(kind.kind) && f != 1.0) aps_ok = false;
        };

        for (int patch : cfg.int_list("patches")) {
            Dataset erased;
            erased.classes = base.classes;
            for (int i = 0; i < base.size(); ++i) {
                erased.images.push_back(random_erase(base.images[static_cast<size_t>(i)], patch,
                                                     derive_seed(g.seed, 4000 + i)));
                erased.labels.push_back(base.labels[static_cast<size_t>(i)]);
            }
            run_row("erase", patch, erased);
        }
        if (cfg.boolean("flip")) {
            Dataset flipped;
            flipped.classes = base.classes;
            for (int i = 0; i < base.size(); ++i) {
                flipped.images.push_back(vertical_flip(base.images[static_cast<size_t>(i)]));
                flipped.labels.push_back(base.labels[static_cast<size_t>(i)]);
            }
            run_row("vflip", 0, flipped);
        }
    }
    return aps_ok ? 0 : 1;
}

int cmd_criteria(const GlobalFlags& g) {
    Config cfg({{"criteria", "argmax_l1,argmax_l2,argmax_linf,argmin_l1,argmin_l2"},
                {"dataset", "noise"},
                {"images", "100"},
                {"trials", "3"},
                {"max_shift", "3"},
                {"input", "32"},
                {"channels", "8,16,32"},
                {"classes", "4"}});
    if (!g.config_path.empty()) cfg.load(g.config_path);
    cfg.dump((fs::path(g.out_dir) / "criteria_config.txt").string(), "resolved criteria config");

    const Dataset data = make_eval_dataset(cfg, g);
    ShiftSampler sampler{ShiftSampler::Kind::CircularUniform, cfg.integer("max_shift"),
                         derive_seed(g.seed, 44)};
    const int trials = cfg.integer("trials");

    auto csv = open_csv(fs::path(g.out_dir) / "criteria.csv");
    csv << "criterion,trials,fraction\n";
    bool ok = true;
    for (const std::string& name : cfg.list("criteria")) {
        ToyOptions opt;
        opt.channels = cfg.int_list("channels");
        opt.input = cfg.integer("input");
        opt.classes = cfg.integer("classes");
        opt.precision = g.precision;
        opt.seed = derive_seed(g.seed, 901);
        opt.criterion = parse_criterion(name);
        Network net(make_toy_spec(DownKind::APS, opt));
        const double f = consistency(net, data, sampler, trials).fraction;
        csv << name << "," << trials << "," << fmt(f) << "\n";
        if (f != 1.0) ok = false;
    }
    return ok ? 0 : 1;
}

int cmd_oddsize(const GlobalFlags& g) {
    Config cfg({{"kinds", "aps,baseline"},
                {"dataset", "checkerboard"},
                {"images", "100"},
                {"trials", "5"},
                {"max_shift", "3"},
                {"input", "31"},
                {"channels", "8,16,32"},
                {"classes", "4"},
                {"criterion", "argmax_l2"}});
    if (!g.config_path.empty()) cfg.load(g.config_path);
    cfg.dump((fs::path(g.out_dir) / "oddsize_config.txt").string(), "resolved oddsize config");

    const Dataset data = make_eval_dataset(cfg, g);
    ShiftSampler sampler{ShiftSampler::Kind::CircularUniform, cfg.integer("max_shift"),
                         derive_seed(g.seed, 45)};
    const int trials = cfg.integer("trials");

    auto csv = open_csv(fs::path(g.out_dir) / "oddsize.csv");
    csv << "model,pairs,fraction\n";
    double aps_fraction = -1.0, baseline_fraction = -1.0;
    for (const std::string& name : cfg.list("kinds")) {
        const NetKind kind = parse_kind(name);
        Network net = build_net(cfg, g, kind);
        ConsistencyReport r = consistency(net, data, sampler, trials);
        csv << name << "," << r.total << "," << fmt(r.fraction) << "\n";
        if (is_aps_kind(kind.kind)) aps_fraction = r.fraction;
        if (kind.kind == DownKind::Baseline) baseline_fraction = r.fraction;
    }
    if (aps_fraction >= 0.0 && baseline_fraction >= 0.0 && aps_fraction < baseline_fraction) {
        return 1;
    }
    return 0;
}

int cmd_bench(const GlobalFlags& g) {
    Config cfg({{"kinds", "baseline,aps"},
                {"input", "64"},
                {"channels", "8,16,32"},
                {"classes", "4"},
                {"criterion", "argmax_l2"},
                {"reps", "50"},
                {"warmup", "10"},
                {"batch", "1"},
                {"max_ratio", "3.0"}});
    if (!g.config_path.empty()) cfg.load(g.config_path);
    cfg.dump((fs::path(g.out_dir) / "bench_config.txt").string(), "resolved bench config");

    const std::vector<std::string> kinds = cfg.list("kinds");
    if (kinds.size() != 2) throw ConfigError("bench: kinds must list exactly two models");
    Network a = build_net(cfg, g, parse_kind(kinds[0]));
    Network b = build_net(cfg, g, parse_kind(kinds[1]));

    BenchResult r = bench_forward(a, b, cfg.integer("batch"), cfg.integer("reps"),
                                  cfg.integer("warmup"), derive_seed(g.seed, 46));

    auto csv = open_csv(fs::path(g.out_dir) / "bench.csv");
    csv << "model,reps,median_ms,mad_ms,ratio_vs_baseline\n";
    csv << kinds[0] << "," << r.reps << "," << fmt(r.median_ms_a) << "," << fmt(r.mad_ms_a)
        << ",1\n";
    csv << kinds[1] << "," << r.reps << "," << fmt(r.median_ms_b) << "," << fmt(r.mad_ms_b)
        << "," << fmt(r.ratio) << "\n";
    return r.ratio <= cfg.real("max_ratio") ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"adaptive polyphase sampling testbed"};
    app.fallthrough();
    app.require_subcommand(1);

    GlobalFlags g;
    std::string precision = "f32";
    app.add_option("--config", g.config_path, "key=value config file");
    app.add_option("--out", g.out_dir, "output directory (created if missing)");
    app.add_option("--seed", g.seed, "global seed");
    app.add_option("--precision", precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));

    auto* invariance = app.add_subcommand("invariance", "classification consistency per model");
    auto* oracle = app.add_subcommand("oracle", "spectral identity residuals");
    auto* train = app.add_subcommand("train", "toy training run with per-epoch log");
    auto* stability = app.add_subcommand("stability", "shift-compensated feature-map error");
    auto* ood = app.add_subcommand("ood", "consistency under erasure and flips");
    auto* criteria = app.add_subcommand("criteria", "selection-criterion comparison");
    auto* oddsize = app.add_subcommand("oddsize", "odd-canvas consistency study");
    auto* bench = app.add_subcommand("bench", "forward timing comparison");

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_name() == "CallForHelp" ? 0 : 2;
    }

    g.precision = precision == "f64" ? Precision::F64 : Precision::F32;

    try {
        fs::create_directories(g.out_dir);
        if (invariance->parsed()) return cmd_invariance(g);
        if (oracle->parsed()) return cmd_oracle(g);
        if (train->parsed()) return cmd_train(g);
        if (stability->parsed()) return cmd_stability(g);
        if (ood->parsed()) return cmd_ood(g);
        if (criteria->parsed()) return cmd_criteria(g);
        if (oddsize->parsed()) return cmd_oddsize(g);
        if (bench->parsed()) return cmd_bench(g);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}

}  // namespace aps
