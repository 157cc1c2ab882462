#include "aps/network.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "aps/rng.hpp"

namespace aps {

// ---------------------------------------------------------------------------
// LayerSpec factories
// ---------------------------------------------------------------------------

LayerSpec LayerSpec::conv(int out_ch, int k) {
    LayerSpec l;
    l.kind = Kind::Conv;
    l.out_channels = out_ch;
    l.ksize = k;
    return l;
}

LayerSpec LayerSpec::activation(Activation a) {
    LayerSpec l;
    l.kind = Kind::Act;
    l.act = std::move(a);
    return l;
}

LayerSpec LayerSpec::max_pool(int k) {
    LayerSpec l;
    l.kind = Kind::MaxPool;
    l.ksize = k;
    return l;
}

LayerSpec LayerSpec::downsample(DownKind kind, int s, SelectionCriterion c, int blur_size) {
    LayerSpec l;
    l.kind = Kind::Down;
    l.down = kind;
    l.stride = s;
    l.criterion = c;
    l.blur = blur_size;
    return l;
}

LayerSpec LayerSpec::block(int out_ch, DownKind kind, int s, SelectionCriterion c,
                           int blur_size, Activation a) {
    LayerSpec l;
    l.kind = Kind::Block;
    l.out_channels = out_ch;
    l.down = kind;
    l.stride = s;
    l.criterion = c;
    l.blur = blur_size;
    l.act = std::move(a);
    return l;
}

LayerSpec LayerSpec::global_avg_pool() {
    LayerSpec l;
    l.kind = Kind::Gap;
    return l;
}

LayerSpec LayerSpec::fully_connected(int classes) {
    LayerSpec l;
    l.kind = Kind::Fc;
    l.classes = classes;
    return l;
}

// ---------------------------------------------------------------------------
// DownKind / criterion names
// ---------------------------------------------------------------------------

std::string to_string(DownKind kind) {
    switch (kind) {
        case DownKind::None: return "none";
        case DownKind::Baseline: return "baseline";
        case DownKind::LPF: return "lpf";
        case DownKind::APS: return "aps";
        case DownKind::APSBlur: return "apsblur";
    }
    return "none";
}

DownKind down_kind_from_string(const std::string& name) {
    if (name == "none") return DownKind::None;
    if (name == "baseline") return DownKind::Baseline;
    if (name == "lpf") return DownKind::LPF;
    if (name == "aps") return DownKind::APS;
    if (name == "apsblur") return DownKind::APSBlur;
    throw std::invalid_argument("unknown downsample kind: " + name);
}

namespace {

std::string norm_name(NormKind n) {
    switch (n) {
        case NormKind::L1: return "l1";
        case NormKind::L2: return "l2";
        case NormKind::Linf: return "linf";
        case NormKind::L1PlusL2: return "l1l2";
    }
    return "l2";
}

NormKind norm_from(const std::string& s) {
    if (s == "l1") return NormKind::L1;
    if (s == "l2") return NormKind::L2;
    if (s == "linf") return NormKind::Linf;
    if (s == "l1l2") return NormKind::L1PlusL2;
    throw std::invalid_argument("unknown norm: " + s);
}

std::string mode_name(SelectMode m) { return m == SelectMode::Argmax ? "argmax" : "argmin"; }

SelectMode mode_from(const std::string& s) {
    if (s == "argmax") return SelectMode::Argmax;
    if (s == "argmin") return SelectMode::Argmin;
    throw std::invalid_argument("unknown selection mode: " + s);
}

std::string act_name(const Activation& a) {
    switch (a.kind) {
        case Activation::Kind::Relu: return "relu";
        case Activation::Kind::Identity: return "identity";
        case Activation::Kind::Polynomial: {
            std::string s = "poly:";
            for (size_t i = 0; i < a.coeffs.size(); ++i) {
                if (i) s += ',';
                char buf[40];
                std::snprintf(buf, sizeof(buf), "%.17g", a.coeffs[i]);
                s += buf;
            }
            return s;
        }
    }
    return "relu";
}

Activation act_from(const std::string& s) {
    if (s == "relu") return Activation::relu();
    if (s == "identity") return Activation::identity();
    if (s.rfind("poly:", 0) == 0) {
        std::vector<double> coeffs;
        std::stringstream ss(s.substr(5));
        std::string item;
        while (std::getline(ss, item, ',')) coeffs.push_back(std::stod(item));
        return Activation::polynomial(std::move(coeffs));
    }
    throw std::invalid_argument("unknown activation: " + s);
}

}  // namespace

// ---------------------------------------------------------------------------
// NetworkSpec text form
// ---------------------------------------------------------------------------

std::string NetworkSpec::to_text() const {
    std::ostringstream out;
    out << "aps-netspec-v1\n";
    out << "in_channels=" << in_channels << "\n";
    out << "in_h=" << in_h << "\n";
    out << "in_w=" << in_w << "\n";
    out << "precision=" << (precision == Precision::F32 ? "f32" : "f64") << "\n";
    out << "pad=" << (pad == PadMode::Circular ? "circular" : "zero") << "\n";
    out << "seed=" << seed << "\n";
    for (const LayerSpec& l : layers) {
        switch (l.kind) {
            case LayerSpec::Kind::Conv:
                out << "layer=conv out=" << l.out_channels << " k=" << l.ksize << "\n";
                break;
            case LayerSpec::Kind::Act:
                out << "layer=act fn=" << act_name(l.act) << "\n";
                break;
            case LayerSpec::Kind::MaxPool:
                out << "layer=maxpool k=" << l.ksize << "\n";
                break;
            case LayerSpec::Kind::Down:
                out << "layer=down kind=" << to_string(l.down) << " s=" << l.stride;
                if (l.down == DownKind::LPF || l.down == DownKind::APSBlur)
                    out << " blur=" << l.blur;
                if (l.down == DownKind::APS || l.down == DownKind::APSBlur)
                    out << " norm=" << norm_name(l.criterion.norm)
                        << " mode=" << mode_name(l.criterion.mode);
                out << "\n";
                break;
            case LayerSpec::Kind::Block:
                out << "layer=block out=" << l.out_channels << " kind=" << to_string(l.down)
                    << " s=" << l.stride;
                if (l.down == DownKind::LPF || l.down == DownKind::APSBlur)
                    out << " blur=" << l.blur;
                if (l.down == DownKind::APS || l.down == DownKind::APSBlur)
                    out << " norm=" << norm_name(l.criterion.norm)
                        << " mode=" << mode_name(l.criterion.mode);
                out << " act=" << act_name(l.act) << "\n";
                break;
            case LayerSpec::Kind::Gap:
                out << "layer=gap\n";
                break;
            case LayerSpec::Kind::Fc:
                out << "layer=fc classes=" << l.classes << "\n";
                break;
        }
    }
    return out.str();
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

LayerSpec parse_layer_line(const std::string& body) {
    std::stringstream ss(body);
    std::string head;
    ss >> head;
    std::map<std::string, std::string> kv;
    std::string tok;
    while (ss >> tok) {
        size_t eq = tok.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("netspec: malformed layer token '" + tok + "'");
        }
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    auto take = [&kv](const std::string& key) -> std::string {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::invalid_argument("netspec: missing layer key '" + key + "'");
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    auto take_or = [&kv](const std::string& key, const std::string& dflt) -> std::string {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };

    LayerSpec l;
    if (head == "conv") {
        l = LayerSpec::conv(std::stoi(take("out")), std::stoi(take_or("k", "3")));
    } else if (head == "act") {
        l = LayerSpec::activation(act_from(take("fn")));
    } else if (head == "maxpool") {
        l = LayerSpec::max_pool(std::stoi(take("k")));
    } else if (head == "down" || head == "block") {
        DownKind kind = down_kind_from_string(take("kind"));
        int s = std::stoi(take("s"));
        SelectionCriterion c;
        c.norm = norm_from(take_or("norm", "l2"));
        c.mode = mode_from(take_or("mode", "argmax"));
        int blur_size = std::stoi(take_or("blur", "3"));
        if (head == "down") {
            l = LayerSpec::downsample(kind, s, c, blur_size);
        } else {
            Activation a = act_from(take_or("act", "relu"));
            l = LayerSpec::block(std::stoi(take("out")), kind, s, c, blur_size, a);
        }
    } else if (head == "gap") {
        l = LayerSpec::global_avg_pool();
    } else if (head == "fc") {
        l = LayerSpec::fully_connected(std::stoi(take("classes")));
    } else {
        throw std::invalid_argument("netspec: unknown layer type '" + head + "'");
    }
    if (!kv.empty()) {
        throw std::invalid_argument("netspec: unknown layer key '" + kv.begin()->first + "'");
    }
    return l;
}

}  // namespace

NetworkSpec NetworkSpec::from_text(const std::string& text) {
    std::stringstream ss(text);
    std::string line;
    bool saw_magic = false;
    NetworkSpec spec;
    while (std::getline(ss, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (!saw_magic) {
            if (line != "aps-netspec-v1") {
                throw std::invalid_argument("netspec: expected header 'aps-netspec-v1'");
            }
            saw_magic = true;
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("netspec: malformed line '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "in_channels") {
            spec.in_channels = std::stoi(value);
        } else if (key == "in_h") {
            spec.in_h = std::stoi(value);
        } else if (key == "in_w") {
            spec.in_w = std::stoi(value);
        } else if (key == "precision") {
            if (value == "f32") {
                spec.precision = Precision::F32;
            } else if (value == "f64") {
                spec.precision = Precision::F64;
            } else {
                throw std::invalid_argument("netspec: unknown precision '" + value + "'");
            }
        } else if (key == "pad") {
            if (value == "circular") {
                spec.pad = PadMode::Circular;
            } else if (value == "zero") {
                spec.pad = PadMode::Zero;
            } else {
                throw std::invalid_argument("netspec: unknown pad mode '" + value + "'");
            }
        } else if (key == "seed") {
            spec.seed = std::stoull(value);
        } else if (key == "layer") {
            spec.layers.push_back(parse_layer_line(value));
        } else {
            throw std::invalid_argument("netspec: unknown key '" + key + "'");
        }
    }
    if (!saw_magic) throw std::invalid_argument("netspec: empty input");
    return spec;
}

// ---------------------------------------------------------------------------
// Batched per-element polyphase helpers. Selection granularity is one index
// per batch element: scores pool over channels and pixels of one image.
// ---------------------------------------------------------------------------

namespace {

struct BatchedAps {
    Tensor out;
    std::vector<ApsIndex> indices;
};

std::vector<ApsIndex> select_per_element(const Tensor& x, int s, const SelectionCriterion& c) {
    const Shape& sh = x.shape();
    const int cells = s * s;
    std::vector<ApsIndex> picked(static_cast<size_t>(sh.n));
    std::vector<double> l1(static_cast<size_t>(cells));
    std::vector<double> sq(static_cast<size_t>(cells));
    std::vector<double> linf(static_cast<size_t>(cells));
    for (int n = 0; n < sh.n; ++n) {
        std::fill(l1.begin(), l1.end(), 0.0);
        std::fill(sq.begin(), sq.end(), 0.0);
        std::fill(linf.begin(), linf.end(), 0.0);
        for (int ch = 0; ch < sh.c; ++ch) {
            for (int y = 0; y < sh.h; ++y) {
                const int iy = y % s;
                for (int xo = 0; xo < sh.w; ++xo) {
                    const int cell = iy * s + xo % s;
                    const double v = x.at(n, ch, y, xo);
                    const double a = std::abs(v);
                    l1[static_cast<size_t>(cell)] += a;
                    sq[static_cast<size_t>(cell)] += v * v;
                    if (a > linf[static_cast<size_t>(cell)]) linf[static_cast<size_t>(cell)] = a;
                }
            }
        }
        ApsIndex best{0, 0};
        double best_score = 0.0;
        bool have = false;
        for (int i = 0; i < s; ++i) {
            for (int j = 0; j < s; ++j) {
                if (i >= sh.h || j >= sh.w) continue;  // empty component
                const int cell = i * s + j;
                double score = 0.0;
                switch (c.norm) {
                    case NormKind::L1: score = l1[static_cast<size_t>(cell)]; break;
                    case NormKind::L2: score = std::sqrt(sq[static_cast<size_t>(cell)]); break;
                    case NormKind::Linf: score = linf[static_cast<size_t>(cell)]; break;
                    case NormKind::L1PlusL2:
                        score = l1[static_cast<size_t>(cell)] +
                                std::sqrt(sq[static_cast<size_t>(cell)]);
                        break;
                }
                const bool better = c.mode == SelectMode::Argmax ? score > best_score
                                                                 : score < best_score;
                if (!have || better) {
                    best = {i, j};
                    best_score = score;
                    have = true;
                }
            }
        }
        picked[static_cast<size_t>(n)] = best;
    }
    return picked;
}

inline int comp_extent(int src, int offset, int s) {
    if (offset >= src) return 0;
    return (src - offset + s - 1) / s;
}

Tensor gather_per_element(const Tensor& x, int s, std::span<const ApsIndex> idx) {
    const Shape& sh = x.shape();
    const int ch0 = comp_extent(sh.h, idx[0].i, s);
    const int cw0 = comp_extent(sh.w, idx[0].j, s);
    for (size_t n = 1; n < idx.size(); ++n) {
        if (comp_extent(sh.h, idx[n].i, s) != ch0 || comp_extent(sh.w, idx[n].j, s) != cw0) {
            throw std::runtime_error(
                "adaptive downsampling selected components of mismatched sizes across the "
                "batch (odd-sized feature maps); evaluate odd-sized inputs with batch 1");
        }
    }
    Tensor out({sh.n, sh.c, ch0, cw0}, x.precision());
    for (int n = 0; n < sh.n; ++n) {
        const ApsIndex id = idx[static_cast<size_t>(n)];
        for (int c = 0; c < sh.c; ++c) {
            for (int y = 0; y < ch0; ++y) {
                for (int xo = 0; xo < cw0; ++xo) {
                    out.set(n, c, y, xo, x.at(n, c, s * y + id.i, s * xo + id.j));
                }
            }
        }
    }
    return out;
}

BatchedAps aps_down_batch(const Tensor& x, int s, const SelectionCriterion& c) {
    BatchedAps r;
    r.indices = select_per_element(x, s, c);
    r.out = gather_per_element(x, s, r.indices);
    return r;
}

Tensor scatter_per_element(const Tensor& gy, std::span<const ApsIndex> idx, int s,
                           Shape in_shape) {
    Tensor dx(in_shape, Precision::F64);
    const Shape& gs = gy.shape();
    for (int n = 0; n < gs.n; ++n) {
        const ApsIndex id = idx[static_cast<size_t>(n)];
        for (int c = 0; c < gs.c; ++c) {
            for (int y = 0; y < gs.h; ++y) {
                for (int xo = 0; xo < gs.w; ++xo) {
                    dx.set(n, c, s * y + id.i, s * xo + id.j, gy.at(n, c, y, xo));
                }
            }
        }
    }
    return dx;
}

std::vector<double> bias_vector(const Param& p) {
    std::vector<double> b(static_cast<size_t>(p.value.numel()));
    for (int64_t i = 0; i < p.value.numel(); ++i) b[static_cast<size_t>(i)] = p.value.at_flat(i);
    return b;
}

void accum_grad(Param& p, const Tensor& g) {
    p.grad = add(p.grad, g);
}

void accum_bias_grad(Param& p, const std::vector<double>& db) {
    for (size_t i = 0; i < db.size(); ++i) {
        p.grad.set_flat(static_cast<int64_t>(i), p.grad.at_flat(static_cast<int64_t>(i)) + db[i]);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Layer implementations
// ---------------------------------------------------------------------------

namespace detail {

struct TraceFrame {
    std::vector<Tensor> t;
    std::vector<std::vector<ApsIndex>> idx;
};

class LayerImpl {
public:
    virtual ~LayerImpl() = default;
    virtual Tensor forward(const Tensor& x, TraceFrame* tr) const = 0;
    virtual Tensor backward(const Tensor& gy, const TraceFrame& tr) = 0;
    virtual void collect(std::vector<Param*>&) {}
    virtual void collect_const(std::vector<const Param*>&) const {}

    std::string id;
    bool is_block = false;
};

namespace {

class ConvLayer final : public LayerImpl {
public:
    ConvLayer(int in_ch, int out_ch, int k, PadMode pad, Precision prec, Rng& rng,
              const std::string& layer_id) : pad_(pad) {
        id = layer_id;
        const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
        w_.name = layer_id + ".w";
        w_.value = Tensor({out_ch, in_ch, k, k}, prec);
        for (int64_t i = 0; i < w_.value.numel(); ++i) w_.value.set_flat(i, rng.normal() * stddev);
        b_.name = layer_id + ".b";
        b_.value = Tensor({out_ch, 1, 1, 1}, prec);
        w_.zero_grad();
        b_.zero_grad();
    }

    Tensor forward(const Tensor& x, TraceFrame* tr) const override {
        if (tr) tr->t = {x};
        return conv2d(x, Kernel(w_.value), bias_vector(b_), 1, pad_);
    }

    Tensor backward(const Tensor& gy, const TraceFrame& tr) override {
        ConvGrads g = vjp_conv2d(tr.t[0], Kernel(w_.value), 1, pad_, gy);
        accum_grad(w_, g.dw);
        accum_bias_grad(b_, g.db);
        return g.dx;
    }

    void collect(std::vector<Param*>& out) override { out.push_back(&w_); out.push_back(&b_); }
    void collect_const(std::vector<const Param*>& out) const override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

private:
    Param w_, b_;
    PadMode pad_;
};

class ActLayer final : public LayerImpl {
public:
    ActLayer(Activation a, const std::string& layer_id) : act_(std::move(a)) { id = layer_id; }

    Tensor forward(const Tensor& x, TraceFrame* tr) const override {
        if (tr) tr->t = {x};
        return activate(x, act_);
    }

    Tensor backward(const Tensor& gy, const TraceFrame& tr) override {
        return vjp_activate(tr.t[0], act_, gy);
    }

private:
    Activation act_;
};

class MaxPoolLayer final : public LayerImpl {
public:
    MaxPoolLayer(int k, PadMode pad, const std::string& layer_id) : k_(k), pad_(pad) {
        id = layer_id;
    }

    Tensor forward(const Tensor& x, TraceFrame* tr) const override {
        if (tr) tr->t = {x};
        return max_pool_dense(x, k_, pad_);
    }

    Tensor backward(const Tensor& gy, const TraceFrame& tr) override {
        return vjp_max_pool_dense(tr.t[0], k_, pad_, gy);
    }

private:
    int k_;
    PadMode pad_;
};

class DownLayer final : public LayerImpl {
public:
    DownLayer(DownKind kind, int s, SelectionCriterion crit, int blur_size, PadMode pad,
              const std::string& layer_id)
        : kind_(kind), s_(s), crit_(crit), pad_(pad) {
        id = layer_id;
        if (kind == DownKind::LPF || kind == DownKind::APSBlur) {
            blur_ = binomial_kernel(blur_size);
        }
    }

    Tensor forward(const Tensor& x, TraceFrame* tr) const override {
        Tensor cur = blur_.size ? blur(x, blur_, pad_) : x;
        std::vector<ApsIndex> indices;
        Tensor out;
        if (kind_ == DownKind::APS || kind_ == DownKind::APSBlur) {
            BatchedAps r = aps_down_batch(cur, s_, crit_);
            out = std::move(r.out);
            indices = std::move(r.indices);
        } else {
            out = conventional_downsample(cur, s_);
            indices.assign(static_cast<size_t>(x.shape().n), ApsIndex{0, 0});
        }
        if (tr) {
            tr->t = {x};
            tr->idx = {std::move(indices)};
        }
        return out;
    }

    Tensor backward(const Tensor& gy, const TraceFrame& tr) override {
        const Shape in_shape = tr.t[0].shape();
        Tensor g = scatter_per_element(gy, tr.idx[0], s_, in_shape);
        if (blur_.size) g = vjp_blur(blur_, pad_, g);
        return g;
    }

private:
    DownKind kind_;
    int s_;
    SelectionCriterion crit_;
    PadMode pad_;
    BlurKernel blur_{};
};

// Residual block: conv-act-(sample)-conv on the main branch, identity or
// 1x1-projected shortcut sampled with the index chosen by the main branch,
// activation after the sum. Blurring kinds blur both branches before
// sampling.
class BlockLayer final : public LayerImpl {
public:
    BlockLayer(int in_ch, int out_ch, DownKind kind, int s, SelectionCriterion crit,
               int blur_size, Activation act, PadMode pad, Precision prec, Rng& rng,
               const std::string& layer_id)
        : kind_(kind), s_(s), crit_(crit), act_(std::move(act)), pad_(pad) {
        id = layer_id;
        is_block = true;
        if (kind == DownKind::LPF || kind == DownKind::APSBlur) {
            blur_ = binomial_kernel(blur_size);
        }
        auto init_conv = [&](Param& w, Param& b, int ic, int oc, int k, const char* tag) {
            const double stddev = std::sqrt(2.0 / (static_cast<double>(ic) * k * k));
            w.name = layer_id + "." + tag + ".w";
            w.value = Tensor({oc, ic, k, k}, prec);
            for (int64_t i = 0; i < w.value.numel(); ++i) w.value.set_flat(i, rng.normal() * stddev);
            w.zero_grad();
            b.name = layer_id + "." + tag + ".b";
            b.value = Tensor({oc, 1, 1, 1}, prec);
            b.zero_grad();
        };
        init_conv(w1_, b1_, in_ch, out_ch, 3, "conv1");
        init_conv(w2_, b2_, out_ch, out_ch, 3, "conv2");
        has_proj_ = in_ch != out_ch || s > 1;
        if (has_proj_) init_conv(wp_, bp_, in_ch, out_ch, 1, "proj");
    }

    Tensor forward(const Tensor& x, TraceFrame* tr) const override {
        const Tensor t0 = conv2d(x, Kernel(w1_.value), bias_vector(b1_), 1, pad_);
        const Tensor t1 = activate(t0, act_);

        Tensor td;
        std::vector<ApsIndex> indices(static_cast<size_t>(x.shape().n), ApsIndex{0, 0});
        Tensor down_in;  // main-branch tensor actually sampled (post blur)
        if (s_ > 1) {
            down_in = blur_.size ? blur(t1, blur_, pad_) : t1;
            if (kind_ == DownKind::APS || kind_ == DownKind::APSBlur) {
                BatchedAps r = aps_down_batch(down_in, s_, crit_);
                td = std::move(r.out);
                indices = std::move(r.indices);
            } else {
                td = conventional_downsample(down_in, s_);
            }
        } else {
            td = t1;
        }

        const Tensor t2 = conv2d(td, Kernel(w2_.value), bias_vector(b2_), 1, pad_);

        Tensor sc = has_proj_ ? conv2d(x, Kernel(wp_.value), bias_vector(bp_), 1, pad_) : x;
        if (s_ > 1) {
            if (blur_.size) sc = blur(sc, blur_, pad_);
            sc = gather_per_element(sc, s_, indices);
        }

        const Tensor sum = add(t2, sc);
        if (tr) {
            tr->t = {x, t0, t1, td, sum};
            tr->idx = {std::move(indices)};
        }
        return activate(sum, act_);
    }

    Tensor backward(const Tensor& gy, const TraceFrame& tr) override {
        const Tensor& x = tr.t[0];
        const Tensor& t0 = tr.t[1];
        const Tensor& t1 = tr.t[2];
        const Tensor& td = tr.t[3];
        const Tensor& sum = tr.t[4];
        const std::vector<ApsIndex>& indices = tr.idx[0];

        const Tensor g_sum = vjp_activate(sum, act_, gy);

        // main branch
        ConvGrads g2 = vjp_conv2d(td, Kernel(w2_.value), 1, pad_, g_sum);
        accum_grad(w2_, g2.dw);
        accum_bias_grad(b2_, g2.db);
        Tensor g_t1;
        if (s_ > 1) {
            Tensor g_down = scatter_per_element(g2.dx, indices, s_, t1.shape());
            g_t1 = blur_.size ? vjp_blur(blur_, pad_, g_down) : std::move(g_down);
        } else {
            g_t1 = std::move(g2.dx);
        }
        const Tensor g_t0 = vjp_activate(t0, act_, g_t1);
        ConvGrads g1 = vjp_conv2d(x, Kernel(w1_.value), 1, pad_, g_t0);
        accum_grad(w1_, g1.dw);
        accum_bias_grad(b1_, g1.db);

        // shortcut branch
        Tensor g_sc = g_sum;
        if (s_ > 1) {
            const Shape pre_sample{x.shape().n, w2_.value.shape().c, x.shape().h, x.shape().w};
            g_sc = scatter_per_element(g_sc, indices, s_, pre_sample);
            if (blur_.size) g_sc = vjp_blur(blur_, pad_, g_sc);
        }
        Tensor g_x_sc;
        if (has_proj_) {
            ConvGrads gp = vjp_conv2d(x, Kernel(wp_.value), 1, pad_, g_sc);
            accum_grad(wp_, gp.dw);
            accum_bias_grad(bp_, gp.db);
            g_x_sc = std::move(gp.dx);
        } else {
            g_x_sc = std::move(g_sc);
        }

        return add(g1.dx, g_x_sc);
    }

    void collect(std::vector<Param*>& out) override {
        out.push_back(&w1_);
        out.push_back(&b1_);
        out.push_back(&w2_);
        out.push_back(&b2_);
        if (has_proj_) {
            out.push_back(&wp_);
            out.push_back(&bp_);
        }
    }
    void collect_const(std::vector<const Param*>& out) const override {
        out.push_back(&w1_);
        out.push_back(&b1_);
        out.push_back(&w2_);
        out.push_back(&b2_);
        if (has_proj_) {
            out.push_back(&wp_);
            out.push_back(&bp_);
        }
    }

private:
    Param w1_, b1_, w2_, b2_, wp_, bp_;
    bool has_proj_ = false;
    DownKind kind_;
    int s_;
    SelectionCriterion crit_;
    Activation act_;
    PadMode pad_;
    BlurKernel blur_{};
};

class GapLayer final : public LayerImpl {
public:
    explicit GapLayer(const std::string& layer_id) { id = layer_id; }

    Tensor forward(const Tensor& x, TraceFrame* tr) const override {
        if (tr) tr->t = {x};
        return global_average_pool(x);
    }

    Tensor backward(const Tensor& gy, const TraceFrame& tr) override {
        return vjp_global_average_pool(tr.t[0].shape(), gy);
    }
};

class FcLayer final : public LayerImpl {
public:
    FcLayer(int features, int classes, Precision prec, Rng& rng, const std::string& layer_id) {
        id = layer_id;
        const double stddev = std::sqrt(2.0 / static_cast<double>(features));
        w_.name = layer_id + ".w";
        w_.value = Tensor({classes, features, 1, 1}, prec);
        for (int64_t i = 0; i < w_.value.numel(); ++i) w_.value.set_flat(i, rng.normal() * stddev);
        w_.zero_grad();
        b_.name = layer_id + ".b";
        b_.value = Tensor({classes, 1, 1, 1}, prec);
        b_.zero_grad();
    }

    Tensor forward(const Tensor& x, TraceFrame* tr) const override {
        if (tr) tr->t = {x};
        return fully_connected(x, w_.value, bias_vector(b_));
    }

    Tensor backward(const Tensor& gy, const TraceFrame& tr) override {
        FcGrads g = vjp_fully_connected(tr.t[0], w_.value, gy);
        accum_grad(w_, g.dw);
        accum_bias_grad(b_, g.db);
        return g.dx;
    }

    void collect(std::vector<Param*>& out) override { out.push_back(&w_); out.push_back(&b_); }
    void collect_const(std::vector<const Param*>& out) const override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

private:
    Param w_, b_;
};

}  // namespace
}  // namespace detail

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Network::Network(const NetworkSpec& spec) : spec_(spec) {
    Rng rng(spec.seed);
    int c = spec.in_channels, h = spec.in_h, w = spec.in_w;
    if (c < 1 || h < 1 || w < 1) {
        throw std::invalid_argument("network: input shape must be positive, got (" +
                                    std::to_string(c) + "," + std::to_string(h) + "," +
                                    std::to_string(w) + ")");
    }
    std::map<std::string, int> counters;
    auto next_id = [&counters](const std::string& kind) {
        return kind + std::to_string(++counters[kind]);
    };

    for (size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        const std::string where = "layer " + std::to_string(li);
        switch (l.kind) {
            case LayerSpec::Kind::Conv: {
                if (l.out_channels < 1 || l.ksize < 1) {
                    throw std::invalid_argument(where + " (conv): invalid channels/kernel");
                }
                layers_.push_back(std::make_unique<detail::ConvLayer>(
                    c, l.out_channels, l.ksize, spec.pad, spec.precision, rng, next_id("conv")));
                c = l.out_channels;
                break;
            }
            case LayerSpec::Kind::Act:
                layers_.push_back(std::make_unique<detail::ActLayer>(l.act, next_id("act")));
                break;
            case LayerSpec::Kind::MaxPool:
                if (l.ksize < 1 || l.ksize > h || l.ksize > w) {
                    throw std::invalid_argument(where + " (maxpool): window " +
                                                std::to_string(l.ksize) + " invalid for " +
                                                std::to_string(h) + "x" + std::to_string(w));
                }
                layers_.push_back(
                    std::make_unique<detail::MaxPoolLayer>(l.ksize, spec.pad, next_id("maxpool")));
                break;
            case LayerSpec::Kind::Down: {
                if (l.down == DownKind::None) {
                    throw std::invalid_argument(where + " (down): kind must not be 'none'");
                }
                if (l.stride < 1 || (h > 1 && l.stride > h) || (w > 1 && l.stride > w)) {
                    throw std::invalid_argument(where + " (down): stride " +
                                                std::to_string(l.stride) + " out of range for " +
                                                std::to_string(h) + "x" + std::to_string(w));
                }
                layers_.push_back(std::make_unique<detail::DownLayer>(
                    l.down, l.stride, l.criterion, l.blur, spec.pad, next_id("down")));
                h = (h + l.stride - 1) / l.stride;
                w = (w + l.stride - 1) / l.stride;
                break;
            }
            case LayerSpec::Kind::Block: {
                if (l.out_channels < 1) {
                    throw std::invalid_argument(where + " (block): invalid channel count");
                }
                if (l.stride == 1 && l.down != DownKind::None) {
                    throw std::invalid_argument(where + " (block): stride-1 block must have "
                                                        "kind 'none'");
                }
                if (l.stride > 1 && l.down == DownKind::None) {
                    throw std::invalid_argument(where + " (block): strided block needs a "
                                                        "downsampling kind");
                }
                if (l.stride < 1 || (h > 1 && l.stride > h) || (w > 1 && l.stride > w)) {
                    throw std::invalid_argument(where + " (block): stride " +
                                                std::to_string(l.stride) + " out of range for " +
                                                std::to_string(h) + "x" + std::to_string(w));
                }
                layers_.push_back(std::make_unique<detail::BlockLayer>(
                    c, l.out_channels, l.down, l.stride, l.criterion, l.blur, l.act, spec.pad,
                    spec.precision, rng, next_id("block")));
                c = l.out_channels;
                h = (h + l.stride - 1) / l.stride;
                w = (w + l.stride - 1) / l.stride;
                break;
            }
            case LayerSpec::Kind::Gap:
                layers_.push_back(std::make_unique<detail::GapLayer>(next_id("gap")));
                h = 1;
                w = 1;
                break;
            case LayerSpec::Kind::Fc: {
                if (l.classes < 2) {
                    throw std::invalid_argument(where + " (fc): needs at least 2 classes");
                }
                const int features = c * h * w;
                layers_.push_back(std::make_unique<detail::FcLayer>(
                    features, l.classes, spec.precision, rng, next_id("fc")));
                c = l.classes;
                h = 1;
                w = 1;
                break;
            }
        }
    }
}

Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;
Network::~Network() = default;

void Network::check_input(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s.c != spec_.in_channels || s.h != spec_.in_h || s.w != spec_.in_w) {
        throw std::invalid_argument("network: input " + to_string(s) +
                                    " does not match spec input (" +
                                    std::to_string(spec_.in_channels) + "," +
                                    std::to_string(spec_.in_h) + "," +
                                    std::to_string(spec_.in_w) + ")");
    }
    if (x.precision() != spec_.precision) {
        throw std::invalid_argument("network: input precision does not match spec");
    }
}

Tensor Network::forward(const Tensor& x) const {
    check_input(x);
    Tensor cur = x;
    for (const auto& layer : layers_) cur = layer->forward(cur, nullptr);
    return cur;
}

Network::TapResult Network::forward_with_taps(const Tensor& x,
                                              std::span<const std::string> tap_ids) const {
    check_input(x);
    const std::vector<std::string> ids = layer_ids();
    for (const std::string& tap : tap_ids) {
        if (std::find(ids.begin(), ids.end(), tap) == ids.end()) {
            throw std::invalid_argument("forward_with_taps: unknown tap '" + tap + "'");
        }
    }
    TapResult r;
    Tensor cur = x;
    for (const auto& layer : layers_) {
        cur = layer->forward(cur, nullptr);
        if (std::find(tap_ids.begin(), tap_ids.end(), layer->id) != tap_ids.end()) {
            r.taps.emplace(layer->id, cur);
        }
    }
    r.logits = std::move(cur);
    return r;
}

double Network::backward(const Tensor& x, std::span<const int> labels) {
    check_input(x);
    if (static_cast<int>(labels.size()) != x.shape().n) {
        throw std::invalid_argument("backward: label count does not match batch size");
    }
    std::vector<detail::TraceFrame> trace(layers_.size());
    Tensor cur = x;
    for (size_t i = 0; i < layers_.size(); ++i) cur = layers_[i]->forward(cur, &trace[i]);

    Tensor dlogits;
    const double loss = softmax_cross_entropy(cur, labels, &dlogits);
    Tensor g = std::move(dlogits);
    for (size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, trace[i]);
    return loss;
}

std::vector<Param*> Network::params() {
    std::vector<Param*> out;
    for (auto& l : layers_) l->collect(out);
    return out;
}

std::vector<const Param*> Network::params() const {
    std::vector<const Param*> out;
    for (const auto& l : layers_) l->collect_const(out);
    return out;
}

void Network::zero_grads() {
    for (Param* p : params()) p->zero_grad();
}

std::vector<std::string> Network::layer_ids() const {
    std::vector<std::string> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) out.push_back(l->id);
    return out;
}

std::vector<std::string> Network::block_ids() const {
    std::vector<std::string> out;
    for (const auto& l : layers_) {
        if (l->is_block) out.push_back(l->id);
    }
    return out;
}

int Network::num_classes() const {
    for (size_t i = spec_.layers.size(); i-- > 0;) {
        if (spec_.layers[i].kind == LayerSpec::Kind::Fc) return spec_.layers[i].classes;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Loss and prediction
// ---------------------------------------------------------------------------

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             Tensor* dlogits) {
    const Shape& s = logits.shape();
    if (s.h != 1 || s.w != 1) {
        throw std::invalid_argument("softmax_cross_entropy: logits must be (N, K, 1, 1)");
    }
    if (static_cast<int>(labels.size()) != s.n) {
        throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    }
    const int classes = s.c;
    for (int lab : labels) {
        if (lab < 0 || lab >= classes) {
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(lab) +
                                        " out of range [0, " + std::to_string(classes) + ")");
        }
    }
    if (dlogits) *dlogits = Tensor::zeros(s, Precision::F64);
    double loss = 0.0;
    std::vector<double> p(static_cast<size_t>(classes));
    for (int n = 0; n < s.n; ++n) {
        double m = logits.at(n, 0, 0, 0);
        for (int k = 1; k < classes; ++k) m = std::max(m, logits.at(n, k, 0, 0));
        double z = 0.0;
        for (int k = 0; k < classes; ++k) {
            p[static_cast<size_t>(k)] = std::exp(logits.at(n, k, 0, 0) - m);
            z += p[static_cast<size_t>(k)];
        }
        for (int k = 0; k < classes; ++k) p[static_cast<size_t>(k)] /= z;
        const int lab = labels[static_cast<size_t>(n)];
        loss -= std::log(std::max(p[static_cast<size_t>(lab)], 1e-300));
        if (dlogits) {
            for (int k = 0; k < classes; ++k) {
                const double onehot = k == lab ? 1.0 : 0.0;
                dlogits->set(n, k, 0, 0, (p[static_cast<size_t>(k)] - onehot) / s.n);
            }
        }
    }
    return loss / s.n;
}

std::vector<int> predict_labels(const Tensor& logits) {
    const Shape& s = logits.shape();
    std::vector<int> out(static_cast<size_t>(s.n));
    for (int n = 0; n < s.n; ++n) {
        int best = 0;
        double best_v = logits.at(n, 0, 0, 0);
        for (int k = 1; k < s.c; ++k) {
            const double v = logits.at(n, k, 0, 0);
            if (v > best_v) {
                best = k;
                best_v = v;
            }
        }
        out[static_cast<size_t>(n)] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Toy spec
// ---------------------------------------------------------------------------

NetworkSpec make_toy_spec(DownKind kind, const ToyOptions& opt) {
    if (opt.channels.empty()) throw std::invalid_argument("make_toy_spec: no channels");
    if (kind == DownKind::None) {
        throw std::invalid_argument("make_toy_spec: pick a downsampling kind");
    }
    NetworkSpec spec;
    spec.in_channels = opt.in_channels;
    spec.in_h = opt.input;
    spec.in_w = opt.input;
    spec.precision = opt.precision;
    spec.pad = opt.pad;
    spec.seed = opt.seed;

    spec.layers.push_back(LayerSpec::conv(opt.channels[0], 3));
    spec.layers.push_back(LayerSpec::activation(Activation::relu()));
    spec.layers.push_back(LayerSpec::block(opt.channels[0]));
    for (size_t i = 1; i < opt.channels.size(); ++i) {
        spec.layers.push_back(
            LayerSpec::block(opt.channels[i], kind, 2, opt.criterion, opt.blur));
        spec.layers.push_back(LayerSpec::block(opt.channels[i]));
    }
    spec.layers.push_back(LayerSpec::global_avg_pool());
    spec.layers.push_back(LayerSpec::fully_connected(opt.classes));
    return spec;
}

// ---------------------------------------------------------------------------
// Parameter snapshots
// ---------------------------------------------------------------------------

void save_parameters(const Network& net, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(dir + "/params.manifest");
    if (!manifest) throw std::runtime_error("save_parameters: cannot write manifest in " + dir);
    int idx = 0;
    for (const Param* p : net.params()) {
        const std::string file = "p" + std::to_string(idx++) + ".psft";
        save_tensor(dir + "/" + file, p->value);
        manifest << p->name << " " << file << "\n";
    }
}

void load_parameters(Network& net, const std::string& dir) {
    std::ifstream manifest(dir + "/params.manifest");
    if (!manifest) throw std::runtime_error("load_parameters: cannot open manifest in " + dir);
    std::map<std::string, std::string> files;
    std::string name, file;
    while (manifest >> name >> file) files[name] = file;
    for (Param* p : net.params()) {
        auto it = files.find(p->name);
        if (it == files.end()) {
            throw std::runtime_error("load_parameters: parameter '" + p->name +
                                     "' missing from manifest");
        }
        Tensor t = load_tensor(dir + "/" + it->second);
        if (t.shape() != p->value.shape()) {
            throw std::runtime_error("load_parameters: shape mismatch for '" + p->name + "'");
        }
        p->value = t.to_precision(p->value.precision());
    }
}

}  // namespace aps
