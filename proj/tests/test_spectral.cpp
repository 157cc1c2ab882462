#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "aps/rng.hpp"
#include "aps/spectral.hpp"

using namespace aps;

namespace {

constexpr double kPi = 3.14159265358979323846;

Signal1D make_cos(int n, int cycles) {
    Signal1D s;
    s.samples.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        s.samples[static_cast<size_t>(i)] = std::cos(2.0 * kPi * cycles * i / n);
    }
    return s;
}

Signal1D white_noise(int n, uint64_t seed) {
    Rng rng(seed);
    Signal1D s;
    s.samples.resize(static_cast<size_t>(n));
    for (double& v : s.samples) v = rng.normal();
    return s;
}

}  // namespace

TEST_CASE("dft: impulse, constant and cosine lines") {
    Signal1D imp;
    imp.samples.assign(8, 0.0);
    imp.samples[0] = 1.0;
    Spectrum X = dft(imp);
    for (const auto& b : X.bins) {
        CHECK(b.real() == doctest::Approx(1.0));
        CHECK(b.imag() == doctest::Approx(0.0));
    }

    Signal1D c;
    c.samples.assign(8, 3.0);
    Spectrum Xc = dft(c);
    CHECK(Xc.bins[0].real() == doctest::Approx(24.0));
    for (int k = 1; k < 8; ++k) CHECK(std::abs(Xc.bins[static_cast<size_t>(k)]) < 1e-12);

    Spectrum Xcos = dft(make_cos(8, 1));
    for (int k = 0; k < 8; ++k) {
        const double want = k == 1 || k == 7 ? 4.0 : 0.0;
        CHECK(std::abs(Xcos.bins[static_cast<size_t>(k)]) == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("dft roundtrip is the identity to 1e-12") {
    for (int n : {4, 10, 64, 33}) {
        Signal1D x = white_noise(n, static_cast<uint64_t>(n));
        Signal1D back = inverse_dft(dft(x));
        for (int i = 0; i < n; ++i) {
            CHECK(std::abs(back.samples[static_cast<size_t>(i)] -
                           x.samples[static_cast<size_t>(i)]) < 1e-12);
        }
    }
}

TEST_CASE("polyphase spectral identities") {
    SUBCASE("random signals of random even lengths, residuals below 1e-10") {
        Rng rng(4000);
        for (uint64_t seed = 0; seed < 100; ++seed) {
            const int n = 2 * rng.uniform_int(4, 64);
            PolyphaseResiduals r = polyphase_spectrum_check(white_noise(n, 400 + seed));
            CHECK(r.even_identity < 1e-10);
            CHECK(r.odd_identity < 1e-10);
        }
    }
    SUBCASE("constant signal") {
        Signal1D c;
        c.samples.assign(16, 2.5);
        PolyphaseResiduals r = polyphase_spectrum_check(c);
        CHECK(r.even_identity < 1e-12);
        CHECK(r.odd_identity < 1e-12);
    }
    SUBCASE("impulse at zero: the odd component is the zero signal") {
        Signal1D imp;
        imp.samples.assign(16, 0.0);
        imp.samples[0] = 1.0;
        // y1(n) = x0(2n - 1) hits only odd source indices, all zero
        PolyphaseResiduals r = polyphase_spectrum_check(imp);
        CHECK(r.odd_identity < 1e-12);
    }
    SUBCASE("odd length is rejected") {
        CHECK_THROWS_AS(polyphase_spectrum_check(white_noise(9, 1)), std::invalid_argument);
    }
}

TEST_CASE("ideal_lowpass") {
    SUBCASE("lowest nonzero frequency passes untouched") {
        Signal1D x = make_cos(32, 1);
        Signal1D y = ideal_lowpass(x);
        for (int i = 0; i < 32; ++i) {
            CHECK(std::abs(y.samples[static_cast<size_t>(i)] -
                           x.samples[static_cast<size_t>(i)]) < 1e-12);
        }
    }
    SUBCASE("the Nyquist alternation is annihilated") {
        Signal1D x;
        x.samples.resize(16);
        for (int i = 0; i < 16; ++i) x.samples[static_cast<size_t>(i)] = i % 2 ? -1.0 : 1.0;
        Signal1D y = ideal_lowpass(x);
        for (double v : y.samples) CHECK(std::abs(v) < 1e-12);
    }
    SUBCASE("stopband bins are exactly zero") {
        Signal1D y = ideal_lowpass(white_noise(64, 9));
        Spectrum Y = dft(y);
        for (int k = 16; k <= 48; ++k) {
            CHECK(std::abs(Y.bins[static_cast<size_t>(k)]) < 1e-9);
        }
    }
    SUBCASE("odd length is rejected") {
        CHECK_THROWS_AS(ideal_lowpass(white_noise(7, 1)), std::invalid_argument);
    }
}

TEST_CASE("theorem 1: polynomial activations preserve the downsampled sums") {
    SUBCASE("m = 2 holds for any input (the internal low-pass suffices)") {
        for (uint64_t seed = 0; seed < 20; ++seed) {
            CHECK(theorem1_check(white_noise(64, 500 + seed), 2) < 1e-9);
        }
    }
    SUBCASE("m in {2,3,4} for narrow-band inputs") {
        for (uint64_t seed = 0; seed < 20; ++seed) {
            Signal1D x = random_bandlimited(64, 6, 600 + seed);
            for (int m : {2, 3, 4}) CHECK(theorem1_check(x, m) < 1e-9);
        }
    }
    SUBCASE("arbitrary polynomials of degree > 1") {
        Rng rng(99);
        for (int trial = 0; trial < 10; ++trial) {
            Signal1D x = random_bandlimited(64, 6, 700 + static_cast<uint64_t>(trial));
            const int degree = 2 + trial % 3;
            std::vector<double> coeffs(static_cast<size_t>(degree) + 1);
            for (double& c : coeffs) c = rng.normal();
            CHECK(theorem1_check_poly(x, coeffs) < 1e-9);
        }
    }
    SUBCASE("relu does not: explicit counterexample") {
        Signal1D spike;
        spike.samples.assign(64, 0.0);
        spike.samples[0] = 5.0;
        Signal1D u = ideal_lowpass(spike);
        double s0 = 0.0, s1 = 0.0;
        for (int i = 0; i < 32; ++i) {
            s0 += std::max(u.samples[static_cast<size_t>(2 * i)], 0.0);
            s1 += std::max(u.samples[static_cast<size_t>((2 * i + 63) % 64)], 0.0);
        }
        CHECK(std::abs(s0 - s1) > 1e-3);
    }
    SUBCASE("preconditions") {
        CHECK_THROWS_AS(theorem1_check(white_noise(64, 1), 1), std::invalid_argument);
        CHECK_THROWS_AS(theorem1_check(white_noise(9, 1), 2), std::invalid_argument);
        std::vector<double> linear = {0.0, 1.0};
        CHECK_THROWS_AS(theorem1_check_poly(white_noise(64, 1), linear), std::invalid_argument);
    }
}

TEST_CASE("cosine relu sums match the closed forms") {
    SUBCASE("N = 32 evaluates to cot(pi/16)") {
        CosineReluSums r = cosine_relu_sums(32);
        CHECK(r.closed0 == doctest::Approx(5.0273).epsilon(1e-4));
        CHECK(std::abs(r.sum0 - r.closed0) < 1e-10);
    }
    SUBCASE("closed forms hold for all supported sizes") {
        for (int n : {16, 32, 64, 128}) {
            CosineReluSums r = cosine_relu_sums(n);
            CHECK(std::abs(r.sum0 - r.closed0) < 1e-10);
            CHECK(std::abs(r.sum1 - r.closed1_from_sum0) < 1e-10);
            // the sin term is a strict loss of sum-shift-invariance
            CHECK(std::abs(r.sum1 - r.sum0) > 1e-6);
        }
    }
    SUBCASE("preconditions: N' must exceed 6 and divide by 4") {
        CHECK_THROWS_AS(cosine_relu_sums(10), std::invalid_argument);  // N' = 5
        CHECK_THROWS_AS(cosine_relu_sums(12), std::invalid_argument);  // N' = 6
        CHECK_THROWS_AS(cosine_relu_sums(20), std::invalid_argument);  // N' = 10, not /4
    }
}

TEST_CASE("random_bandlimited respects its band") {
    Signal1D x = random_bandlimited(64, 6, 42);
    Spectrum X = dft(x);
    for (int k = 7; k <= 57; ++k) {
        CHECK(std::abs(X.bins[static_cast<size_t>(k)]) < 1e-9);
    }
    CHECK_THROWS_AS(random_bandlimited(64, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(random_bandlimited(64, 32, 1), std::invalid_argument);
}
