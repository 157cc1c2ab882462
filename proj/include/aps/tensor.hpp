#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace aps {

enum class Precision : uint8_t { F32 = 0, F64 = 1 };

enum class PadMode : uint8_t { Circular, Zero };

struct Shape {
    int n = 0;  // batch
    int c = 0;  // channels
    int h = 0;  // height
    int w = 0;  // width

    int64_t numel() const {
        return static_cast<int64_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Dense rank-4 (N, C, H, W) tensor, row-major, immutable-by-convention
/// value type. Storage precision is fixed at construction; every write
/// narrows through the declared precision so f32 tensors behave like
/// genuine IEEE single-precision data.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, Precision prec);  // zero-filled

    static Tensor zeros(Shape shape, Precision prec = Precision::F64);
    static Tensor full(Shape shape, double value, Precision prec = Precision::F64);
    /// Row-major values; size must equal shape.numel().
    static Tensor from_values(Shape shape, const std::vector<double>& values,
                              Precision prec = Precision::F64);

    const Shape& shape() const { return shape_; }
    Precision precision() const { return prec_; }
    int64_t numel() const { return shape_.numel(); }

    int64_t offset(int n, int c, int h, int w) const {
        return ((static_cast<int64_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    double at(int n, int c, int h, int w) const { return at_flat(offset(n, c, h, w)); }
    void set(int n, int c, int h, int w, double v) { set_flat(offset(n, c, h, w), v); }

    double at_flat(int64_t i) const;
    void set_flat(int64_t i, double v);

    template <typename T>
    std::span<T> data() {
        return std::span<T>(std::get<std::vector<T>>(data_));
    }
    template <typename T>
    std::span<const T> data() const {
        return std::span<const T>(std::get<std::vector<T>>(data_));
    }

    bool all_finite() const;
    std::vector<double> to_vector() const;

    /// Copy batch element n into a (1,C,H,W) tensor of the same precision.
    Tensor slice_batch(int n) const;

    /// Converts storage precision, rounding values when narrowing.
    Tensor to_precision(Precision prec) const;

private:
    Shape shape_{};
    Precision prec_ = Precision::F64;
    std::variant<std::vector<float>, std::vector<double>> data_ =
        std::vector<double>{};
};

/// Convolution weights, shape (out-channels, in-channels, kH, kW).
class Kernel {
public:
    Kernel() = default;
    explicit Kernel(Tensor weights);
    static Kernel from_values(int out_ch, int in_ch, int kh, int kw,
                              const std::vector<double>& values,
                              Precision prec = Precision::F64);

    int out_channels() const { return weights_.shape().n; }
    int in_channels() const { return weights_.shape().c; }
    int kh() const { return weights_.shape().h; }
    int kw() const { return weights_.shape().w; }
    const Tensor& weights() const { return weights_; }
    Tensor& weights() { return weights_; }

private:
    Tensor weights_;
};

struct Activation {
    enum class Kind { Relu, Polynomial, Identity };
    Kind kind = Kind::Relu;
    std::vector<double> coeffs;  // Polynomial only: a_0..a_m ascending, m >= 1

    static Activation relu() { return {Kind::Relu, {}}; }
    static Activation identity() { return {Kind::Identity, {}}; }
    static Activation polynomial(std::vector<double> coeffs);

    double apply(double v) const;
    double derivative(double v) const;
};

// ---------------------------------------------------------------------------
// Forward operations.
//
// Same-size padding convention: a kernel of extent k pads (k-1)/2 leading and
// k-1-(k-1)/2 trailing rows/cols, so even kernels put the extra pad on the
// trailing side. Stride-s output extent is ceil(extent/s); the strided result
// equals the stride-1 result sampled at offset (0,0).
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Kernel& w, const std::vector<double>& bias,
              int stride, PadMode pad);

Tensor activate(const Tensor& x, const Activation& a);

/// Dense (same-size) max pooling over a k x k neighbourhood. Zero padding
/// inserts literal zeros into the window at the boundary.
Tensor max_pool_dense(const Tensor& x, int k, PadMode pad);

Tensor global_average_pool(const Tensor& x);

/// x is flattened per batch element to C*H*W features; w has shape
/// (out, in, 1, 1); result is (N, out, 1, 1).
Tensor fully_connected(const Tensor& x, const Tensor& w, const std::vector<double>& b);

/// x'(n1, n2) = x((n1 - dy) mod H, (n2 - dx) mod W): positive shifts move
/// content down/right. Shift-direction sign is a library convention (the
/// underlying math fixes none); it matches the polyphase index pattern used
/// by the decomposition module.
Tensor circular_shift(const Tensor& x, int dy, int dx);

// ---------------------------------------------------------------------------
// Reverse-mode (vector-Jacobian) primitives. Upstream gradients and all
// returned gradients are 64-bit tensors regardless of forward precision;
// accumulation is always performed in 64-bit.
// ---------------------------------------------------------------------------

struct ConvGrads {
    Tensor dx;                // F64, shape of x
    Tensor dw;                // F64, shape of w
    std::vector<double> db;   // per out-channel
};

ConvGrads vjp_conv2d(const Tensor& x, const Kernel& w, int stride, PadMode pad,
                     const Tensor& gy);

Tensor vjp_activate(const Tensor& x, const Activation& a, const Tensor& gy);

Tensor vjp_max_pool_dense(const Tensor& x, int k, PadMode pad, const Tensor& gy);

Tensor vjp_global_average_pool(const Shape& in_shape, const Tensor& gy);

struct FcGrads {
    Tensor dx;
    Tensor dw;
    std::vector<double> db;
};

FcGrads vjp_fully_connected(const Tensor& x, const Tensor& w, const Tensor& gy);

Tensor vjp_circular_shift(const Tensor& gy, int dy, int dx);

// ---------------------------------------------------------------------------
// Elementwise helpers shared across modules.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
double max_abs_diff(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Serialization: little-endian binary format
//   magic "PSFT" | u8 precision tag (0 = f32, 1 = f64) | u32 N,C,H,W | raw data
// and a CSV debug dump with one row per (n, c) holding H*W columns.
// ---------------------------------------------------------------------------

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);
void export_csv(const std::string& path, const Tensor& t);

}  // namespace aps
