#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "aps/antialias.hpp"
#include "aps/spectral.hpp"
#include "test_helpers.hpp"

using namespace aps;
using namespace aps::testing;

TEST_CASE("binomial_kernel: coefficients") {
    BlurKernel k3 = binomial_kernel(3);
    const double want3[9] = {1, 2, 1, 2, 4, 2, 1, 2, 1};
    for (int i = 0; i < 9; ++i) CHECK(k3.coeffs[i] == doctest::Approx(want3[i] / 16.0));

    BlurKernel k2 = binomial_kernel(2);
    for (int i = 0; i < 4; ++i) CHECK(k2.coeffs[i] == doctest::Approx(0.25));

    for (int j : {2, 3, 5}) {
        double sum = 0.0;
        for (double c : binomial_kernel(j).coeffs) sum += c;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }

    CHECK_THROWS_AS(binomial_kernel(4), std::invalid_argument);
    CHECK_THROWS_AS(binomial_kernel(1), std::invalid_argument);
}

TEST_CASE("blur: constant image is unchanged under circular padding") {
    Tensor c = Tensor::full({1, 2, 5, 5}, 1.7, Precision::F64);
    for (int j : {2, 3, 5}) {
        CHECK(max_abs_diff(blur(c, binomial_kernel(j), PadMode::Circular), c) < 1e-12);
    }
}

TEST_CASE("blur: impulse reproduces the kernel pattern") {
    Tensor x = Tensor::zeros({1, 1, 7, 7}, Precision::F64);
    x.set(0, 0, 3, 3, 1.0);
    BlurKernel k = binomial_kernel(3);
    Tensor y = blur(x, k, PadMode::Circular);
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
            CHECK(y.at(0, 0, 3 + dy, 3 + dx) == doctest::Approx(k.at(dy + 1, dx + 1)));
        }
    }
    CHECK(y.at(0, 0, 0, 0) == 0.0);
}

TEST_CASE("blur commutes with circular shift") {
    for (int j : {2, 3, 5}) {
        Tensor x = random_tensor({1, 2, 6, 8}, Precision::F32, 40 + static_cast<uint64_t>(j));
        BlurKernel k = binomial_kernel(j);
        Tensor lhs = blur(circular_shift(x, 2, 3), k, PadMode::Circular);
        Tensor rhs = circular_shift(blur(x, k, PadMode::Circular), 2, 3);
        CHECK(max_abs_diff(lhs, rhs) < 1e-6);
    }
}

TEST_CASE("vjp_blur matches finite differences") {
    for (int j : {2, 3, 5}) {
        for (PadMode pad : {PadMode::Circular, PadMode::Zero}) {
            BlurKernel k = binomial_kernel(j);
            Tensor x = random_tensor({1, 1, 5, 5}, Precision::F64, 50 + static_cast<uint64_t>(j));
            Tensor gy = Tensor::full(x.shape(), 1.0, Precision::F64);
            Tensor dx = vjp_blur(k, pad, gy);
            const double step = 1e-3;
            for (int64_t i = 0; i < x.numel(); i += 2) {
                const double orig = x.at_flat(i);
                x.set_flat(i, orig + step);
                Tensor up = blur(x, k, pad);
                x.set_flat(i, orig - step);
                Tensor dn = blur(x, k, pad);
                x.set_flat(i, orig);
                double su = 0.0, sd = 0.0;
                for (int64_t e = 0; e < up.numel(); ++e) {
                    su += up.at_flat(e);
                    sd += dn.at_flat(e);
                }
                const double fd = (su - sd) / (2 * step);
                CHECK(rel_err(dx.at_flat(i), fd) < 1e-7);
            }
        }
    }
}

TEST_CASE("blurpool: examples") {
    Tensor c = Tensor::full({1, 1, 6, 6}, 2.5, Precision::F64);
    Tensor d = blurpool(c, 3, 2, PadMode::Circular);
    CHECK(d.shape() == Shape{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) CHECK(d.at_flat(i) == doctest::Approx(2.5));

    // alternating 1-D signal averages to one half under the 2-tap filter
    std::vector<double> alt(8);
    for (int i = 0; i < 8; ++i) alt[static_cast<size_t>(i)] = i % 2 == 0 ? 0.0 : 1.0;
    Tensor row = Tensor::from_values({1, 1, 1, 8}, alt, Precision::F64);
    Tensor bp = blurpool(row, 2, 2, PadMode::Circular);
    CHECK(bp.shape() == Shape{1, 1, 1, 4});
    for (int i = 0; i < 4; ++i) CHECK(bp.at_flat(i) == doctest::Approx(0.5));

    Tensor x = random_tensor({1, 2, 6, 6}, Precision::F64, 60);
    CHECK(max_abs_diff(blurpool(x, 3, 2, PadMode::Circular),
                       conventional_downsample(blur(x, binomial_kernel(3), PadMode::Circular),
                                               2)) == 0.0);
}

TEST_CASE("aps_blurpool: examples") {
    Tensor z = Tensor::zeros({1, 1, 4, 4}, Precision::F64);
    const SelectionCriterion c{NormKind::L2, SelectMode::Argmax};
    ApsResult r = aps_blurpool(z, 3, 2, c, PadMode::Circular);
    CHECK(r.index == ApsIndex{0, 0});
    CHECK(max_abs_diff(r.tensor, Tensor::zeros({1, 1, 2, 2}, Precision::F64)) == 0.0);

    Tensor x = random_tensor({1, 2, 6, 6}, Precision::F64, 61);
    ApsResult a = aps_blurpool(x, 3, 2, c, PadMode::Circular);
    ApsResult b = aps_downsample(blur(x, binomial_kernel(3), PadMode::Circular), 2, c);
    CHECK(a.index == b.index);
    CHECK(max_abs_diff(a.tensor, b.tensor) == 0.0);
}

TEST_CASE("fuzz: aps_blurpool stays shift-consistent (blur is equivariant)") {
    const SelectionCriterion c{NormKind::L2, SelectMode::Argmax};
    Rng rng(777);
    int checked = 0;
    while (checked < 200) {
        const int h = 2 * rng.uniform_int(2, 5);
        const int w = 2 * rng.uniform_int(2, 5);
        Tensor x = random_tensor({1, 1, h, w}, Precision::F64,
                                 7000 + static_cast<uint64_t>(checked));
        Tensor blurred = blur(x, binomial_kernel(3), PadMode::Circular);
        auto scores = component_scores(decompose(blurred, 2), c);
        std::sort(scores.begin(), scores.end());
        if (scores[3] - scores[2] < 1e-9) continue;

        const int n0 = rng.uniform_int(0, h - 1);
        const int m0 = rng.uniform_int(0, w - 1);
        Tensor a = aps_blurpool(x, 3, 2, c, PadMode::Circular).tensor;
        Tensor b = aps_blurpool(circular_shift(x, n0, m0), 3, 2, c, PadMode::Circular).tensor;
        const int bound = (std::max(n0, m0) + 1) / 2 + 1;
        CHECK(equal_up_to_shift(a, b, bound).has_value());
        ++checked;
    }
}

TEST_CASE("anti-aliased linear sampling is sum-shift-invariant; relu spoils it") {
    SUBCASE("band-limited signals: blurpool sums agree to 1e-9") {
        for (int j : {2, 3, 5}) {
            for (uint64_t seed : {1u, 2u, 3u, 4u}) {
                Signal1D s = random_bandlimited(64, 14, seed);
                Tensor x = Tensor::from_values({1, 1, 1, 64}, s.samples, Precision::F64);
                Tensor y0 = blurpool(x, j, 2, PadMode::Circular);
                Tensor y1 = blurpool(circular_shift(x, 0, 1), j, 2, PadMode::Circular);
                double s0 = 0.0, s1 = 0.0;
                for (int64_t i = 0; i < y0.numel(); ++i) {
                    s0 += y0.at_flat(i);
                    s1 += y1.at_flat(i);
                }
                CHECK(std::abs(s0 - s1) < 1e-9);
            }
        }
    }
    SUBCASE("a sharp feature pushed through relu breaks the sum equality") {
        // low-passed spike: the two sampling phases threshold differently
        Signal1D spike;
        spike.samples.assign(64, 0.0);
        spike.samples[10] = 5.0;
        Signal1D u = ideal_lowpass(spike);
        Tensor x = Tensor::from_values({1, 1, 1, 64}, u.samples, Precision::F64);
        Tensor y0 = conventional_downsample(x, 2);
        Tensor y1 = conventional_downsample(circular_shift(x, 0, 1), 2);
        double s0 = 0.0, s1 = 0.0;
        for (int64_t i = 0; i < y0.numel(); ++i) {
            s0 += std::max(y0.at_flat(i), 0.0);
            s1 += std::max(y1.at_flat(i), 0.0);
        }
        CHECK(std::abs(s0 - s1) > 1e-3);
    }
}
