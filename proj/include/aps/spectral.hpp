#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace aps {

/// One period of an N-periodic real 1-D signal. The periodic model realizes
/// the DTFT exactly on the N-point DFT grid w_k = 2*pi*k/N, which makes the
/// downsampling identities machine-checkable.
struct Signal1D {
    std::vector<double> samples;

    int size() const { return static_cast<int>(samples.size()); }
};

struct Spectrum {
    std::vector<std::complex<double>> bins;

    int size() const { return static_cast<int>(bins.size()); }
};

/// Unnormalized N-point transform, X[k] = sum_n x(n) e^{-j 2 pi k n / N}.
Spectrum dft(const Signal1D& x);

/// Inverse transform; dft followed by inverse_dft is the identity.
Signal1D inverse_dft(const Spectrum& X);

/// Maximum absolute residuals of the stride-2 polyphase spectral identities:
///   even:  Y0[k] - (X0[k] + X0[k + N/2]) / 2
///   odd:   Y1[k] - (X0[k] - X0[k + N/2]) e^{-j 2 pi k / N} / 2
/// where y0(n) = x0(2n) and y1(n) = x0(2n - 1) on the circle. Requires even N.
struct PolyphaseResiduals {
    double even_identity = 0.0;
    double odd_identity = 0.0;
};

PolyphaseResiduals polyphase_spectrum_check(const Signal1D& x0);

/// Zeroes every DFT bin with |w| >= pi/2 (the boundary bins included) and
/// transforms back. The zeroed band is conjugate-symmetric, so the output is
/// real to rounding. Requires even N.
Signal1D ideal_lowpass(const Signal1D& x0);

/// |sum (y0a)^m - sum (y1a)^m| where y0a / y1a are the even-grid samples of
/// the ideally low-passed signal and of its 1-sample circular shift. Zero
/// (to rounding) whenever the low-passed signal's band B satisfies m*B < pi,
/// which the internal pi/2 cutoff guarantees for m = 2; larger m needs a
/// correspondingly narrower input band (see random_bandlimited).
double theorem1_check(const Signal1D& x0, int m);

/// Same residual for an arbitrary polynomial activation sum_i a_i y^i
/// (coefficients ascending, degree >= 2).
double theorem1_check_poly(const Signal1D& x0, std::span<const double> coeffs);

/// Closed-form checks for the cosine/ReLU sums: x0 = cos(2 pi n / N),
/// y0a(n) = cos(2 pi n / N'), y1a(n) = cos(2 pi (n - 1/2) / N'), N' = N/2.
///   sum0 = sum relu(y0a)            closed0 = cos(2 pi/N) / sin(2 pi/N)
///   sum1 = sum relu(y1a)            closed1_from_sum0 = cos(2 pi/N) sum0 + sin(2 pi/N)
/// Preconditions: N' > 6 and N' divisible by 4.
struct CosineReluSums {
    double sum0 = 0.0;
    double closed0 = 0.0;
    double sum1 = 0.0;
    double closed1_from_sum0 = 0.0;
};

CosineReluSums cosine_relu_sums(int N);

/// Deterministic random signal with spectral support only on bins
/// 1 <= |k| <= max_bin (plus a random mean), suitable as a band-limited
/// test input: frequencies are bounded by 2 pi max_bin / N.
Signal1D random_bandlimited(int N, int max_bin, uint64_t seed);

}  // namespace aps
