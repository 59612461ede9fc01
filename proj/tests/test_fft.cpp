#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "mpvad/errors.hpp"
#include "mpvad/fft.hpp"
#include "mpvad/rng.hpp"

using namespace mpvad;

namespace {

// O(n^2) reference DFT, the independent oracle for the fast transform.
std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * M_PI * static_cast<double>(k * t) / static_cast<double>(n);
            acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

std::vector<float> naive_convolve(const std::vector<float>& x, const std::vector<float>& h) {
    std::vector<float> out(x.size() + h.size() - 1, 0.0f);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < h.size(); ++j)
            out[i + j] += x[i] * h[j];
    return out;
}

}  // namespace

TEST_CASE("fft matches the naive DFT") {
    Rng rng(42);
    for (int n : {2, 8, 64, 512}) {
        std::vector<std::complex<double>> x(n);
        for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        std::vector<std::complex<double>> fast = x;
        Fft plan(n);
        plan.transform(fast.data(), false);
        const auto slow = naive_dft(x);
        for (int k = 0; k < n; ++k) {
            CHECK(fast[k].real() == doctest::Approx(slow[k].real()).epsilon(1e-9).scale(10));
            CHECK(fast[k].imag() == doctest::Approx(slow[k].imag()).epsilon(1e-9).scale(10));
        }
    }
}

TEST_CASE("inverse transform undoes forward") {
    Rng rng(7);
    const int n = 256;
    std::vector<std::complex<double>> x(n), y;
    for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    y = x;
    Fft plan(n);
    plan.transform(y.data(), false);
    plan.transform(y.data(), true);
    for (int k = 0; k < n; ++k)
        CHECK(std::abs(y[k] - x[k]) < 1e-12);
}

TEST_CASE("real_forward agrees with the complex transform") {
    Rng rng(3);
    const int n = 512;
    std::vector<double> x(n);
    for (double& v : x) v = rng.uniform(-1, 1);

    Fft plan(n);
    std::vector<std::complex<double>> packed(n);
    for (int i = 0; i < n; ++i) packed[i] = {x[i], 0.0};
    plan.transform(packed.data(), false);

    std::vector<std::complex<double>> half(n / 2 + 1);
    plan.real_forward(x.data(), half.data());
    for (int k = 0; k <= n / 2; ++k)
        CHECK(std::abs(half[k] - packed[k]) < 1e-10);
}

TEST_CASE("fft size must be a power of two") {
    CHECK_THROWS_AS(Fft(48), Error);
    CHECK_THROWS_AS(Fft(0), Error);
}

TEST_CASE("overlap-add convolution matches direct convolution") {
    Rng rng(11);
    std::vector<float> x(5000), h(333);
    for (float& v : x) v = static_cast<float>(rng.uniform(-1, 1));
    for (float& v : h) v = static_cast<float>(rng.uniform(-1, 1));

    const std::vector<float> fast = fft_convolve(x, h);
    const std::vector<float> slow = naive_convolve(x, h);
    REQUIRE(fast.size() == slow.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < fast.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(fast[i]) - slow[i]));
    CHECK(worst < 1e-3);  // float accumulation over 333 taps
}

TEST_CASE("convolution with a unit impulse is the identity") {
    Rng rng(5);
    std::vector<float> x(1000);
    for (float& v : x) v = static_cast<float>(rng.uniform(-1, 1));
    const std::vector<float> h = {1.0f};
    const std::vector<float> y = fft_convolve(x, h);
    REQUIRE(y.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(std::abs(y[i] - x[i]) < 1e-6);
}
