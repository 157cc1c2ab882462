#pragma once

#include <vector>

#include "aps/polyphase.hpp"
#include "aps/tensor.hpp"

namespace aps {

/// Separable binomial low-pass filter: the outer product of a normalized
/// Pascal row. Coefficients sum to 1 and vanish at the Nyquist frequency.
struct BlurKernel {
    int size = 0;
    std::vector<double> coeffs;  // size*size, row-major

    double at(int r, int c) const { return coeffs[static_cast<size_t>(r) * size + c]; }
};

/// j in {2, 3, 5}: rows [1,1]/2, [1,2,1]/4, [1,4,6,4,1]/16.
BlurKernel binomial_kernel(int j);

/// Depthwise (per-channel) convolution with k at stride 1, same spatial
/// size. Odd kernels are centered; the 2x2 kernel pads one row/col on the
/// top/left only.
Tensor blur(const Tensor& x, const BlurKernel& k, PadMode pad);

/// Gradient of blur with respect to its input.
Tensor vjp_blur(const BlurKernel& k, PadMode pad, const Tensor& gy);

/// Anti-aliased conventional sampling: blur with the j-tap binomial kernel,
/// then take polyphase component (0, 0) at stride s.
Tensor blurpool(const Tensor& x, int j, int s, PadMode pad);

/// Anti-aliased adaptive sampling: blur, then aps_downsample.
ApsResult aps_blurpool(const Tensor& x, int j, int s, const SelectionCriterion& c, PadMode pad);

}  // namespace aps
