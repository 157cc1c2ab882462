#include "aps/antialias.hpp"

#include <stdexcept>
#include <string>

namespace aps {

namespace {

inline int wrap(int v, int m) {
    int r = v % m;
    return r < 0 ? r + m : r;
}

std::vector<double> binomial_row(int j) {
    switch (j) {
        case 2: return {0.5, 0.5};
        case 3: return {0.25, 0.5, 0.25};
        case 5: return {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
        default:
            throw std::invalid_argument("binomial_kernel: unsupported size " +
                                        std::to_string(j) + " (expected 2, 3 or 5)");
    }
}

// Offsets of the window's first tap relative to the output pixel. Odd sizes
// center the window; the 2-tap kernel reaches one pixel up/left.
inline int blur_offset(int j) { return j % 2 == 1 ? (j - 1) / 2 : 1; }

}  // namespace

BlurKernel binomial_kernel(int j) {
    const std::vector<double> row = binomial_row(j);
    BlurKernel k;
    k.size = j;
    k.coeffs.resize(static_cast<size_t>(j) * j);
    for (int r = 0; r < j; ++r) {
        for (int c = 0; c < j; ++c) {
            k.coeffs[static_cast<size_t>(r) * j + c] = row[static_cast<size_t>(r)] *
                                                       row[static_cast<size_t>(c)];
        }
    }
    return k;
}

Tensor blur(const Tensor& x, const BlurKernel& k, PadMode pad) {
    const Shape& s = x.shape();
    const int j = k.size;
    const int off = blur_offset(j);
    Tensor out(s, x.precision());
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                for (int xo = 0; xo < s.w; ++xo) {
                    double acc = 0.0;
                    for (int ky = 0; ky < j; ++ky) {
                        for (int kx = 0; kx < j; ++kx) {
                            const int sy = y + ky - off;
                            const int sx = xo + kx - off;
                            double v;
                            if (pad == PadMode::Circular) {
                                v = x.at(n, c, wrap(sy, s.h), wrap(sx, s.w));
                            } else if (sy >= 0 && sy < s.h && sx >= 0 && sx < s.w) {
                                v = x.at(n, c, sy, sx);
                            } else {
                                v = 0.0;
                            }
                            acc += k.at(ky, kx) * v;
                        }
                    }
                    out.set(n, c, y, xo, acc);
                }
            }
        }
    }
    return out;
}

Tensor vjp_blur(const BlurKernel& k, PadMode pad, const Tensor& gy) {
    const Shape& s = gy.shape();
    const int j = k.size;
    const int off = blur_offset(j);
    Tensor dx(s, Precision::F64);
    // Scatter each output's window contribution back onto the input.
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
                for (int xo = 0; xo < s.w; ++xo) {
                    const double g = gy.at(n, c, y, xo);
                    for (int ky = 0; ky < j; ++ky) {
                        for (int kx = 0; kx < j; ++kx) {
                            int sy = y + ky - off;
                            int sx = xo + kx - off;
                            if (pad == PadMode::Circular) {
                                sy = wrap(sy, s.h);
                                sx = wrap(sx, s.w);
                            } else if (sy < 0 || sy >= s.h || sx < 0 || sx >= s.w) {
                                continue;
                            }
                            dx.set(n, c, sy, sx, dx.at(n, c, sy, sx) + k.at(ky, kx) * g);
                        }
                    }
                }
            }
        }
    }
    return dx;
}

Tensor blurpool(const Tensor& x, int j, int s, PadMode pad) {
    return conventional_downsample(blur(x, binomial_kernel(j), pad), s);
}

ApsResult aps_blurpool(const Tensor& x, int j, int s, const SelectionCriterion& c, PadMode pad) {
    return aps_downsample(blur(x, binomial_kernel(j), pad), s, c);
}

}  // namespace aps
