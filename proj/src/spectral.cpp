#include "aps/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "aps/rng.hpp"

namespace aps {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void require_even(const Signal1D& x, const char* who) {
    if (x.size() < 2 || x.size() % 2 != 0) {
        throw std::invalid_argument(std::string(who) + ": signal length must be even, got " +
                                    std::to_string(x.size()));
    }
}

Signal1D shift1(const Signal1D& x) {
    const int n = x.size();
    Signal1D out;
    out.samples.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        out.samples[static_cast<size_t>(i)] = x.samples[static_cast<size_t>(((i - 1) % n + n) % n)];
    }
    return out;
}

Signal1D even_samples(const Signal1D& x) {
    Signal1D out;
    out.samples.resize(static_cast<size_t>(x.size() / 2));
    for (int i = 0; i < x.size() / 2; ++i) {
        out.samples[static_cast<size_t>(i)] = x.samples[static_cast<size_t>(2 * i)];
    }
    return out;
}

double poly_eval(std::span<const double> coeffs, double v) {
    double acc = 0.0;
    for (size_t i = coeffs.size(); i-- > 0;) acc = acc * v + coeffs[i];
    return acc;
}

double shifted_sum_residual(const Signal1D& x0, std::span<const double> coeffs) {
    const Signal1D u = ideal_lowpass(x0);
    const Signal1D y0a = even_samples(u);
    const Signal1D y1a = even_samples(shift1(u));
    double s0 = 0.0, s1 = 0.0;
    for (double v : y0a.samples) s0 += poly_eval(coeffs, v);
    for (double v : y1a.samples) s1 += poly_eval(coeffs, v);
    return std::abs(s0 - s1);
}

}  // namespace

Spectrum dft(const Signal1D& x) {
    const int n = x.size();
    Spectrum X;
    X.bins.resize(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (int i = 0; i < n; ++i) {
            const double ang = -kTwoPi * k * i / n;
            acc += x.samples[static_cast<size_t>(i)] *
                   std::complex<double>(std::cos(ang), std::sin(ang));
        }
        X.bins[static_cast<size_t>(k)] = acc;
    }
    return X;
}

Signal1D inverse_dft(const Spectrum& X) {
    const int n = X.size();
    Signal1D x;
    x.samples.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::complex<double> acc(0.0, 0.0);
        for (int k = 0; k < n; ++k) {
            const double ang = kTwoPi * k * i / n;
            acc += X.bins[static_cast<size_t>(k)] *
                   std::complex<double>(std::cos(ang), std::sin(ang));
        }
        x.samples[static_cast<size_t>(i)] = acc.real() / n;
    }
    return x;
}

PolyphaseResiduals polyphase_spectrum_check(const Signal1D& x0) {
    require_even(x0, "polyphase_spectrum_check");
    const int n = x0.size();
    const int half = n / 2;

    Signal1D y0, y1;
    y0.samples.resize(static_cast<size_t>(half));
    y1.samples.resize(static_cast<size_t>(half));
    for (int i = 0; i < half; ++i) {
        y0.samples[static_cast<size_t>(i)] = x0.samples[static_cast<size_t>(2 * i)];
        y1.samples[static_cast<size_t>(i)] =
            x0.samples[static_cast<size_t>(((2 * i - 1) % n + n) % n)];
    }

    const Spectrum X0 = dft(x0);
    const Spectrum Y0 = dft(y0);
    const Spectrum Y1 = dft(y1);

    PolyphaseResiduals r;
    for (int k = 0; k < half; ++k) {
        const std::complex<double> a = X0.bins[static_cast<size_t>(k)];
        const std::complex<double> b = X0.bins[static_cast<size_t>(k + half)];
        const std::complex<double> rhs0 = (a + b) * 0.5;
        const double ang = -kTwoPi * k / n;  // e^{-j w/2} with w = 2 pi k / (N/2)
        const std::complex<double> rhs1 =
            (a - b) * 0.5 * std::complex<double>(std::cos(ang), std::sin(ang));
        r.even_identity = std::max(r.even_identity,
                                   std::abs(Y0.bins[static_cast<size_t>(k)] - rhs0));
        r.odd_identity = std::max(r.odd_identity,
                                  std::abs(Y1.bins[static_cast<size_t>(k)] - rhs1));
    }
    return r;
}

Signal1D ideal_lowpass(const Signal1D& x0) {
    require_even(x0, "ideal_lowpass");
    const int n = x0.size();
    Spectrum X = dft(x0);
    for (int k = 0; k < n; ++k) {
        // |w_k| >= pi/2  <=>  N/4 <= k <= 3N/4 (boundary bins zeroed)
        if (4 * k >= n && 4 * k <= 3 * n) X.bins[static_cast<size_t>(k)] = 0.0;
    }
    // the zeroed band is conjugate-symmetric, so the output must stay real
    Signal1D out;
    out.samples.resize(static_cast<size_t>(n));
    const double scale = 1.0 / n;
    for (int i = 0; i < n; ++i) {
        std::complex<double> acc(0.0, 0.0);
        for (int k = 0; k < n; ++k) {
            const double ang = kTwoPi * k * i / n;
            acc += X.bins[static_cast<size_t>(k)] *
                   std::complex<double>(std::cos(ang), std::sin(ang));
        }
        acc *= scale;
        if (std::abs(acc.imag()) > 1e-12 * std::max(1.0, std::abs(acc.real()))) {
            throw std::runtime_error("ideal_lowpass: output failed the realness bound");
        }
        out.samples[static_cast<size_t>(i)] = acc.real();
    }
    return out;
}

double theorem1_check(const Signal1D& x0, int m) {
    if (m <= 1) throw std::invalid_argument("theorem1_check: need integer m > 1");
    std::vector<double> coeffs(static_cast<size_t>(m) + 1, 0.0);
    coeffs.back() = 1.0;
    return shifted_sum_residual(x0, coeffs);
}

double theorem1_check_poly(const Signal1D& x0, std::span<const double> coeffs) {
    if (coeffs.size() < 3) {
        throw std::invalid_argument("theorem1_check_poly: polynomial degree must be > 1");
    }
    return shifted_sum_residual(x0, coeffs);
}

CosineReluSums cosine_relu_sums(int N) {
    const int half = N / 2;
    if (N % 2 != 0 || half <= 6 || half % 4 != 0) {
        throw std::invalid_argument("cosine_relu_sums: need N/2 > 6 and divisible by 4, got N=" +
                                    std::to_string(N));
    }
    CosineReluSums r;
    for (int i = 0; i < half; ++i) {
        const double y0 = std::cos(kTwoPi * i / half);
        const double y1 = std::cos(kTwoPi * (i - 0.5) / half);
        if (y0 > 0.0) r.sum0 += y0;
        if (y1 > 0.0) r.sum1 += y1;
    }
    const double theta = kTwoPi / N;
    r.closed0 = std::cos(theta) / std::sin(theta);
    r.closed1_from_sum0 = std::cos(theta) * r.sum0 + std::sin(theta);
    return r;
}

Signal1D random_bandlimited(int N, int max_bin, uint64_t seed) {
    if (N < 4 || N % 2 != 0) {
        throw std::invalid_argument("random_bandlimited: need even N >= 4");
    }
    if (max_bin < 1 || max_bin >= N / 2) {
        throw std::invalid_argument("random_bandlimited: max_bin must be in [1, N/2)");
    }
    Rng rng(seed);
    Spectrum X;
    X.bins.assign(static_cast<size_t>(N), {0.0, 0.0});
    X.bins[0] = {rng.normal() * N / 4.0, 0.0};
    for (int k = 1; k <= max_bin; ++k) {
        const std::complex<double> c(rng.normal(), rng.normal());
        X.bins[static_cast<size_t>(k)] = c * (N / 4.0);
        X.bins[static_cast<size_t>(N - k)] = std::conj(c) * (N / 4.0);
    }
    return inverse_dft(X);
}

}  // namespace aps
