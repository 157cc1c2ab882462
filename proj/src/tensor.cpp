#include "aps/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace aps {

namespace {

int64_t checked_numel(const Shape& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
        throw std::invalid_argument("tensor shape has negative extent: " + to_string(s));
    }
    return s.numel();
}

inline int wrap(int v, int m) {
    int r = v % m;
    return r < 0 ? r + m : r;
}

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

std::string to_string(const Shape& s) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "(%d,%d,%d,%d)", s.n, s.c, s.h, s.w);
    return buf;
}

Tensor::Tensor(Shape shape, Precision prec) : shape_(shape), prec_(prec) {
    int64_t n = checked_numel(shape);
    if (prec == Precision::F32) {
        data_ = std::vector<float>(static_cast<size_t>(n), 0.0f);
    } else {
        data_ = std::vector<double>(static_cast<size_t>(n), 0.0);
    }
}

Tensor Tensor::zeros(Shape shape, Precision prec) { return Tensor(shape, prec); }

Tensor Tensor::full(Shape shape, double value, Precision prec) {
    Tensor t(shape, prec);
    for (int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, value);
    return t;
}

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, Precision prec) {
    if (static_cast<int64_t>(values.size()) != shape.numel()) {
        throw std::invalid_argument("from_values: got " + std::to_string(values.size()) +
                                    " values for shape " + to_string(shape));
    }
    Tensor t(shape, prec);
    for (int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, values[static_cast<size_t>(i)]);
    return t;
}

double Tensor::at_flat(int64_t i) const {
    if (prec_ == Precision::F32) return std::get<std::vector<float>>(data_)[static_cast<size_t>(i)];
    return std::get<std::vector<double>>(data_)[static_cast<size_t>(i)];
}

void Tensor::set_flat(int64_t i, double v) {
    if (prec_ == Precision::F32) {
        std::get<std::vector<float>>(data_)[static_cast<size_t>(i)] = static_cast<float>(v);
    } else {
        std::get<std::vector<double>>(data_)[static_cast<size_t>(i)] = v;
    }
}

bool Tensor::all_finite() const {
    for (int64_t i = 0; i < numel(); ++i) {
        if (!std::isfinite(at_flat(i))) return false;
    }
    return true;
}

std::vector<double> Tensor::to_vector() const {
    std::vector<double> out(static_cast<size_t>(numel()));
    for (int64_t i = 0; i < numel(); ++i) out[static_cast<size_t>(i)] = at_flat(i);
    return out;
}

Tensor Tensor::slice_batch(int n) const {
    if (n < 0 || n >= shape_.n) {
        throw std::invalid_argument("slice_batch: index " + std::to_string(n) +
                                    " out of range for " + to_string(shape_));
    }
    Shape s{1, shape_.c, shape_.h, shape_.w};
    Tensor out(s, prec_);
    int64_t per = s.numel();
    for (int64_t i = 0; i < per; ++i) out.set_flat(i, at_flat(n * per + i));
    return out;
}

Tensor Tensor::to_precision(Precision prec) const {
    if (prec == prec_) return *this;
    Tensor out(shape_, prec);
    for (int64_t i = 0; i < numel(); ++i) out.set_flat(i, at_flat(i));
    return out;
}

Kernel::Kernel(Tensor weights) : weights_(std::move(weights)) {
    const Shape& s = weights_.shape();
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
        throw std::invalid_argument("kernel must have positive extents, got " + to_string(s));
    }
}

Kernel Kernel::from_values(int out_ch, int in_ch, int kh, int kw,
                           const std::vector<double>& values, Precision prec) {
    return Kernel(Tensor::from_values({out_ch, in_ch, kh, kw}, values, prec));
}

Activation Activation::polynomial(std::vector<double> coeffs) {
    if (coeffs.size() < 2) {
        throw std::invalid_argument("polynomial activation needs degree >= 1");
    }
    for (double c : coeffs) {
        if (!std::isfinite(c)) throw std::invalid_argument("polynomial coefficient not finite");
    }
    return {Kind::Polynomial, std::move(coeffs)};
}

double Activation::apply(double v) const {
    switch (kind) {
        case Kind::Relu: return v > 0.0 ? v : 0.0;
        case Kind::Identity: return v;
        case Kind::Polynomial: {
            double acc = 0.0;
            for (size_t i = coeffs.size(); i-- > 0;) acc = acc * v + coeffs[i];
            return acc;
        }
    }
    return v;
}

double Activation::derivative(double v) const {
    switch (kind) {
        case Kind::Relu: return v > 0.0 ? 1.0 : 0.0;  // subgradient 0 at the kink
        case Kind::Identity: return 1.0;
        case Kind::Polynomial: {
            double acc = 0.0;
            for (size_t i = coeffs.size(); i-- > 1;) {
                acc = acc * v + static_cast<double>(i) * coeffs[i];
            }
            return acc;
        }
    }
    return 1.0;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace {

// Materializes one batch element into a (C, hp, wp) padded buffer so the
// convolution inner loops read contiguously. Row r / col c of the buffer map
// to input row r - pad_top / col c - pad_left, wrapped or zero-filled.
template <typename S, typename T>
void fill_padded(const Tensor& x, int n, int pad_top, int pad_left, int hp, int wp,
                 PadMode pad, std::vector<T>& buf) {
    const Shape& s = x.shape();
    auto src = x.data<S>();
    buf.assign(static_cast<size_t>(s.c) * hp * wp, T(0));
    for (int ci = 0; ci < s.c; ++ci) {
        const S* plane = src.data() + (static_cast<int64_t>(n) * s.c + ci) * s.h * s.w;
        T* dst_plane = buf.data() + static_cast<int64_t>(ci) * hp * wp;
        for (int r = 0; r < hp; ++r) {
            int sr = r - pad_top;
            T* dst = dst_plane + static_cast<int64_t>(r) * wp;
            if (pad == PadMode::Circular) {
                sr = wrap(sr, s.h);
            } else if (sr < 0 || sr >= s.h) {
                continue;  // stays zero
            }
            const S* row = plane + static_cast<int64_t>(sr) * s.w;
            for (int c = 0; c < wp; ++c) {
                int sc = c - pad_left;
                if (pad == PadMode::Circular) {
                    dst[c] = static_cast<T>(row[wrap(sc, s.w)]);
                } else if (sc >= 0 && sc < s.w) {
                    dst[c] = static_cast<T>(row[sc]);
                }
            }
        }
    }
}

template <typename T>
Tensor conv2d_impl(const Tensor& x, const Kernel& w, const std::vector<double>& bias,
                   int stride, PadMode pad) {
    const Shape& xs = x.shape();
    const int O = w.out_channels(), I = w.in_channels(), kh = w.kh(), kw = w.kw();
    const int pad_top = (kh - 1) / 2, pad_left = (kw - 1) / 2;
    const int ho = ceil_div(xs.h, stride), wo = ceil_div(xs.w, stride);
    const int hp = (ho - 1) * stride + kh, wp = (wo - 1) * stride + kw;

    Tensor out({xs.n, O, ho, wo}, x.precision());
    auto wv = w.weights().data<T>();
    auto ov = out.data<T>();
    std::vector<T> buf;
    std::vector<T> acc(static_cast<size_t>(wo));

    for (int n = 0; n < xs.n; ++n) {
        fill_padded<T, T>(x, n, pad_top, pad_left, hp, wp, pad, buf);
        for (int o = 0; o < O; ++o) {
            const T b = bias.empty() ? T(0) : static_cast<T>(bias[static_cast<size_t>(o)]);
            for (int y = 0; y < ho; ++y) {
                std::fill(acc.begin(), acc.end(), b);
                for (int ci = 0; ci < I; ++ci) {
                    const T* plane = buf.data() + static_cast<int64_t>(ci) * hp * wp;
                    for (int ky = 0; ky < kh; ++ky) {
                        const T* row = plane + static_cast<int64_t>(y * stride + ky) * wp;
                        const T* wk = wv.data() +
                                      ((static_cast<int64_t>(o) * I + ci) * kh + ky) * kw;
                        for (int kx = 0; kx < kw; ++kx) {
                            const T wkk = wk[kx];
                            const T* in = row + kx;
                            if (stride == 1) {
                                for (int xo = 0; xo < wo; ++xo) acc[xo] += wkk * in[xo];
                            } else {
                                for (int xo = 0; xo < wo; ++xo) acc[xo] += wkk * in[xo * stride];
                            }
                        }
                    }
                }
                T* orow = ov.data() + ((static_cast<int64_t>(n) * O + o) * ho + y) * wo;
                std::copy(acc.begin(), acc.end(), orow);
            }
        }
    }
    return out;
}

void check_conv_args(const Tensor& x, const Kernel& w, const std::vector<double>& bias,
                     int stride) {
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (x.shape().c != w.in_channels()) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(x.shape().c) +
                                    " channels but kernel expects " +
                                    std::to_string(w.in_channels()));
    }
    if (x.precision() != w.weights().precision()) {
        throw std::invalid_argument("conv2d: input and kernel precision differ");
    }
    if (!bias.empty() && static_cast<int>(bias.size()) != w.out_channels()) {
        throw std::invalid_argument("conv2d: bias size " + std::to_string(bias.size()) +
                                    " != out channels " + std::to_string(w.out_channels()));
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Kernel& w, const std::vector<double>& bias,
              int stride, PadMode pad) {
    check_conv_args(x, w, bias, stride);
    if (x.precision() == Precision::F32) return conv2d_impl<float>(x, w, bias, stride, pad);
    return conv2d_impl<double>(x, w, bias, stride, pad);
}

namespace {

template <typename T>
ConvGrads vjp_conv2d_impl(const Tensor& x, const Kernel& w, int stride, PadMode pad,
                          const Tensor& gy) {
    const Shape& xs = x.shape();
    const int O = w.out_channels(), I = w.in_channels(), kh = w.kh(), kw = w.kw();
    const int pad_top = (kh - 1) / 2, pad_left = (kw - 1) / 2;
    const int ho = ceil_div(xs.h, stride), wo = ceil_div(xs.w, stride);
    const int hp = (ho - 1) * stride + kh, wp = (wo - 1) * stride + kw;

    if (gy.shape() != Shape{xs.n, O, ho, wo}) {
        throw std::invalid_argument("vjp_conv2d: upstream gradient shape " +
                                    to_string(gy.shape()) + " does not match output " +
                                    to_string(Shape{xs.n, O, ho, wo}));
    }

    ConvGrads g;
    g.dx = Tensor::zeros(xs, Precision::F64);
    g.dw = Tensor::zeros(w.weights().shape(), Precision::F64);
    g.db.assign(static_cast<size_t>(O), 0.0);

    auto gv = gy.data<double>();
    auto wv = w.weights().data<T>();
    auto dxv = g.dx.data<double>();
    auto dwv = g.dw.data<double>();

    std::vector<double> xpad;
    std::vector<double> dpad;

    for (int n = 0; n < xs.n; ++n) {
        fill_padded<T, double>(x, n, pad_top, pad_left, hp, wp, pad, xpad);
        dpad.assign(static_cast<size_t>(I) * hp * wp, 0.0);
        for (int o = 0; o < O; ++o) {
            const double* gplane = gv.data() + (static_cast<int64_t>(n) * O + o) * ho * wo;
            double bsum = 0.0;
            for (int64_t i = 0; i < static_cast<int64_t>(ho) * wo; ++i) bsum += gplane[i];
            g.db[static_cast<size_t>(o)] += bsum;

            for (int ci = 0; ci < I; ++ci) {
                const double* xplane = xpad.data() + static_cast<int64_t>(ci) * hp * wp;
                double* dplane = dpad.data() + static_cast<int64_t>(ci) * hp * wp;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const int64_t widx = ((static_cast<int64_t>(o) * I + ci) * kh + ky) * kw + kx;
                        const double wkk = static_cast<double>(wv[static_cast<size_t>(widx)]);
                        double wacc = 0.0;
                        for (int y = 0; y < ho; ++y) {
                            const double* grow = gplane + static_cast<int64_t>(y) * wo;
                            const double* xrow = xplane + static_cast<int64_t>(y * stride + ky) * wp + kx;
                            double* drow = dplane + static_cast<int64_t>(y * stride + ky) * wp + kx;
                            for (int xo = 0; xo < wo; ++xo) {
                                const double gval = grow[xo];
                                wacc += gval * xrow[xo * stride];
                                drow[xo * stride] += wkk * gval;
                            }
                        }
                        dwv[static_cast<size_t>(widx)] += wacc;
                    }
                }
            }
        }
        // Fold padded gradient back into the input plane.
        for (int ci = 0; ci < I; ++ci) {
            const double* dplane = dpad.data() + static_cast<int64_t>(ci) * hp * wp;
            double* xgrad = dxv.data() + (static_cast<int64_t>(n) * I + ci) * xs.h * xs.w;
            for (int r = 0; r < hp; ++r) {
                int sr = r - pad_top;
                if (pad == PadMode::Circular) {
                    sr = wrap(sr, xs.h);
                } else if (sr < 0 || sr >= xs.h) {
                    continue;
                }
                const double* drow = dplane + static_cast<int64_t>(r) * wp;
                double* xrow = xgrad + static_cast<int64_t>(sr) * xs.w;
                for (int c = 0; c < wp; ++c) {
                    int sc = c - pad_left;
                    if (pad == PadMode::Circular) {
                        xrow[wrap(sc, xs.w)] += drow[c];
                    } else if (sc >= 0 && sc < xs.w) {
                        xrow[sc] += drow[c];
                    }
                }
            }
        }
    }
    return g;
}

}  // namespace

ConvGrads vjp_conv2d(const Tensor& x, const Kernel& w, int stride, PadMode pad,
                     const Tensor& gy) {
    check_conv_args(x, w, {}, stride);
    if (gy.precision() != Precision::F64) {
        throw std::invalid_argument("vjp_conv2d: upstream gradient must be 64-bit");
    }
    if (x.precision() == Precision::F32) return vjp_conv2d_impl<float>(x, w, stride, pad, gy);
    return vjp_conv2d_impl<double>(x, w, stride, pad, gy);
}

// ---------------------------------------------------------------------------
// Pointwise activation
// ---------------------------------------------------------------------------

Tensor activate(const Tensor& x, const Activation& a) {
    Tensor out(x.shape(), x.precision());
    for (int64_t i = 0; i < x.numel(); ++i) out.set_flat(i, a.apply(x.at_flat(i)));
    return out;
}

Tensor vjp_activate(const Tensor& x, const Activation& a, const Tensor& gy) {
    if (gy.shape() != x.shape()) {
        throw std::invalid_argument("vjp_activate: gradient shape mismatch");
    }
    Tensor dx(x.shape(), Precision::F64);
    for (int64_t i = 0; i < x.numel(); ++i) {
        dx.set_flat(i, gy.at_flat(i) * a.derivative(x.at_flat(i)));
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Dense max pooling
// ---------------------------------------------------------------------------

Tensor max_pool_dense(const Tensor& x, int k, PadMode pad) {
    const Shape& s = x.shape();
    if (k < 1) throw std::invalid_argument("max_pool_dense: window must be >= 1");
    if (k > s.h || k > s.w) {
        throw std::invalid_argument("max_pool_dense: window " + std::to_string(k) +
                                    " exceeds input " + to_string(s));
    }
    const int off = (k - 1) / 2;
    Tensor out(s, x.precision());
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                for (int xo = 0; xo < s.w; ++xo) {
                    double best = -std::numeric_limits<double>::infinity();
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            int sy = y + ky - off, sx = xo + kx - off;
                            double v;
                            if (pad == PadMode::Circular) {
                                v = x.at(n, c, wrap(sy, s.h), wrap(sx, s.w));
                            } else if (sy >= 0 && sy < s.h && sx >= 0 && sx < s.w) {
                                v = x.at(n, c, sy, sx);
                            } else {
                                v = 0.0;
                            }
                            if (v > best) best = v;
                        }
                    }
                    out.set(n, c, y, xo, best);
                }
            }
        }
    }
    return out;
}

Tensor vjp_max_pool_dense(const Tensor& x, int k, PadMode pad, const Tensor& gy) {
    const Shape& s = x.shape();
    if (gy.shape() != s) throw std::invalid_argument("vjp_max_pool_dense: shape mismatch");
    const int off = (k - 1) / 2;
    Tensor dx(s, Precision::F64);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                for (int xo = 0; xo < s.w; ++xo) {
                    double best = -std::numeric_limits<double>::infinity();
                    int by = -1, bx = -1;  // first maximum in scan order wins
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            int sy = y + ky - off, sx = xo + kx - off;
                            double v;
                            bool in_range = true;
                            if (pad == PadMode::Circular) {
                                sy = wrap(sy, s.h);
                                sx = wrap(sx, s.w);
                                v = x.at(n, c, sy, sx);
                            } else if (sy >= 0 && sy < s.h && sx >= 0 && sx < s.w) {
                                v = x.at(n, c, sy, sx);
                            } else {
                                v = 0.0;
                                in_range = false;
                            }
                            if (v > best) {
                                best = v;
                                by = in_range ? sy : -1;
                                bx = in_range ? sx : -1;
                            }
                        }
                    }
                    if (by >= 0) {
                        dx.set(n, c, by, bx, dx.at(n, c, by, bx) + gy.at(n, c, y, xo));
                    }
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Global average pooling and fully connected head
// ---------------------------------------------------------------------------

Tensor global_average_pool(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.h < 1 || s.w < 1) throw std::invalid_argument("global_average_pool: empty map");
    Tensor out({s.n, s.c, 1, 1}, x.precision());
    const double inv = 1.0 / (static_cast<double>(s.h) * s.w);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            double acc = 0.0;  // 64-bit accumulation keeps shifted maps in agreement
            for (int y = 0; y < s.h; ++y) {
                for (int xo = 0; xo < s.w; ++xo) acc += x.at(n, c, y, xo);
            }
            out.set(n, c, 0, 0, acc * inv);
        }
    }
    return out;
}

Tensor vjp_global_average_pool(const Shape& in_shape, const Tensor& gy) {
    if (gy.shape() != Shape{in_shape.n, in_shape.c, 1, 1}) {
        throw std::invalid_argument("vjp_global_average_pool: gradient shape mismatch");
    }
    Tensor dx(in_shape, Precision::F64);
    const double inv = 1.0 / (static_cast<double>(in_shape.h) * in_shape.w);
    for (int n = 0; n < in_shape.n; ++n) {
        for (int c = 0; c < in_shape.c; ++c) {
            const double v = gy.at(n, c, 0, 0) * inv;
            for (int y = 0; y < in_shape.h; ++y) {
                for (int xo = 0; xo < in_shape.w; ++xo) dx.set(n, c, y, xo, v);
            }
        }
    }
    return dx;
}

Tensor fully_connected(const Tensor& x, const Tensor& w, const std::vector<double>& b) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    const int64_t features = static_cast<int64_t>(xs.c) * xs.h * xs.w;
    if (ws.h != 1 || ws.w != 1 || ws.c != features) {
        throw std::invalid_argument("fully_connected: weight shape " + to_string(ws) +
                                    " incompatible with " + std::to_string(features) +
                                    " input features");
    }
    if (!b.empty() && static_cast<int>(b.size()) != ws.n) {
        throw std::invalid_argument("fully_connected: bias size mismatch");
    }
    Tensor out({xs.n, ws.n, 1, 1}, x.precision());
    for (int n = 0; n < xs.n; ++n) {
        for (int o = 0; o < ws.n; ++o) {
            double acc = b.empty() ? 0.0 : b[static_cast<size_t>(o)];
            for (int64_t f = 0; f < features; ++f) {
                acc += w.at_flat(o * features + f) * x.at_flat(n * features + f);
            }
            out.set(n, o, 0, 0, acc);
        }
    }
    return out;
}

FcGrads vjp_fully_connected(const Tensor& x, const Tensor& w, const Tensor& gy) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    const int64_t features = static_cast<int64_t>(xs.c) * xs.h * xs.w;
    if (gy.shape() != Shape{xs.n, ws.n, 1, 1}) {
        throw std::invalid_argument("vjp_fully_connected: gradient shape mismatch");
    }
    FcGrads g;
    g.dx = Tensor::zeros(xs, Precision::F64);
    g.dw = Tensor::zeros(ws, Precision::F64);
    g.db.assign(static_cast<size_t>(ws.n), 0.0);
    for (int n = 0; n < xs.n; ++n) {
        for (int o = 0; o < ws.n; ++o) {
            const double gval = gy.at(n, o, 0, 0);
            g.db[static_cast<size_t>(o)] += gval;
            for (int64_t f = 0; f < features; ++f) {
                g.dw.set_flat(o * features + f,
                              g.dw.at_flat(o * features + f) + gval * x.at_flat(n * features + f));
                g.dx.set_flat(n * features + f,
                              g.dx.at_flat(n * features + f) + gval * w.at_flat(o * features + f));
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Circular shift
// ---------------------------------------------------------------------------

Tensor circular_shift(const Tensor& x, int dy, int dx) {
    const Shape& s = x.shape();
    Tensor out(s, x.precision());
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                const int sy = wrap(y - dy, s.h);
                for (int xo = 0; xo < s.w; ++xo) {
                    out.set(n, c, y, xo, x.at(n, c, sy, wrap(xo - dx, s.w)));
                }
            }
        }
    }
    return out;
}

Tensor vjp_circular_shift(const Tensor& gy, int dy, int dx) {
    return circular_shift(gy, -dy, -dx);
}

// ---------------------------------------------------------------------------
// Elementwise helpers
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("add: shapes " + to_string(a.shape()) + " vs " +
                                    to_string(b.shape()));
    }
    Tensor out(a.shape(), a.precision());
    for (int64_t i = 0; i < a.numel(); ++i) out.set_flat(i, a.at_flat(i) + b.at_flat(i));
    return out;
}

Tensor scale(const Tensor& a, double factor) {
    Tensor out(a.shape(), a.precision());
    for (int64_t i = 0; i < a.numel(); ++i) out.set_flat(i, a.at_flat(i) * factor);
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("max_abs_diff: shape mismatch");
    }
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a.at_flat(i) - b.at_flat(i)));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_tensor: cannot open " + path);
    f.write("PSFT", 4);
    const uint8_t tag = static_cast<uint8_t>(t.precision());
    f.write(reinterpret_cast<const char*>(&tag), 1);
    const Shape& s = t.shape();
    const uint32_t dims[4] = {static_cast<uint32_t>(s.n), static_cast<uint32_t>(s.c),
                              static_cast<uint32_t>(s.h), static_cast<uint32_t>(s.w)};
    f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    if (t.precision() == Precision::F32) {
        auto d = t.data<float>();
        f.write(reinterpret_cast<const char*>(d.data()),
                static_cast<std::streamsize>(d.size() * sizeof(float)));
    } else {
        auto d = t.data<double>();
        f.write(reinterpret_cast<const char*>(d.data()),
                static_cast<std::streamsize>(d.size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("save_tensor: write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_tensor: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "PSFT", 4) != 0) {
        throw std::runtime_error("load_tensor: bad magic in " + path);
    }
    uint8_t tag = 0;
    f.read(reinterpret_cast<char*>(&tag), 1);
    if (tag > 1) throw std::runtime_error("load_tensor: unknown precision tag");
    uint32_t dims[4];
    f.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!f) throw std::runtime_error("load_tensor: truncated header in " + path);
    Shape s{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
            static_cast<int>(dims[3])};
    Tensor t(s, static_cast<Precision>(tag));
    if (t.precision() == Precision::F32) {
        auto d = t.data<float>();
        f.read(reinterpret_cast<char*>(d.data()),
               static_cast<std::streamsize>(d.size() * sizeof(float)));
    } else {
        auto d = t.data<double>();
        f.read(reinterpret_cast<char*>(d.data()),
               static_cast<std::streamsize>(d.size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("load_tensor: truncated data in " + path);
    return t;
}

void export_csv(const std::string& path, const Tensor& t) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("export_csv: cannot open " + path);
    const Shape& s = t.shape();
    char buf[40];
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) {
                    std::snprintf(buf, sizeof(buf), "%.17g", t.at(n, c, y, x));
                    if (y != 0 || x != 0) f << ',';
                    f << buf;
                }
            }
            f << '\n';
        }
    }
}

}  // namespace aps
