#include "mpvad/fft.hpp"

#include <algorithm>
#include <cmath>

#include "mpvad/errors.hpp"

namespace mpvad {

Fft::Fft(int n) : n_(n) {
    if (n < 2 || (n & (n - 1)) != 0) throw Error("FFT size must be a power of two >= 2");
    bitrev_.resize(n);
    int log2n = 0;
    while ((1 << log2n) < n) ++log2n;
    for (int i = 0; i < n; ++i) {
        int rev = 0;
        for (int b = 0; b < log2n; ++b)
            if (i & (1 << b)) rev |= 1 << (log2n - 1 - b);
        bitrev_[i] = rev;
    }
    twiddle_.resize(n / 2);
    for (int j = 0; j < n / 2; ++j) {
        const double ang = -2.0 * M_PI * j / n;
        twiddle_[j] = {std::cos(ang), std::sin(ang)};
    }
    unwind_.resize(n / 2 + 1);
    for (int k = 0; k <= n / 2; ++k) {
        const double ang = -2.0 * M_PI * k / n;
        unwind_[k] = {std::cos(ang), std::sin(ang)};
    }
    if (n >= 4) {
        half_plan_ = std::make_unique<Fft>(n / 2);
        packed_.resize(n / 2);
    }
}

void Fft::transform(std::complex<double>* a, bool inverse) const {
    for (int i = 0; i < n_; ++i) {
        const int j = bitrev_[i];
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n_; len <<= 1) {
        const int half = len / 2;
        const int stride = n_ / len;
        for (int start = 0; start < n_; start += len) {
            for (int j = 0; j < half; ++j) {
                std::complex<double> w = twiddle_[j * stride];
                if (inverse) w = std::conj(w);
                const std::complex<double> u = a[start + j];
                const std::complex<double> v = a[start + j + half] * w;
                a[start + j] = u + v;
                a[start + j + half] = u - v;
            }
        }
    }
    if (inverse) {
        const double scale = 1.0 / n_;
        for (int i = 0; i < n_; ++i) a[i] *= scale;
    }
}

void Fft::real_forward(const double* in, std::complex<double>* out) const {
    if (!half_plan_) {  // n == 2
        out[0] = {in[0] + in[1], 0.0};
        out[1] = {in[0] - in[1], 0.0};
        return;
    }
    // Pack even/odd samples into one half-size complex transform, then untangle.
    const int half = n_ / 2;
    for (int k = 0; k < half; ++k) packed_[k] = {in[2 * k], in[2 * k + 1]};
    half_plan_->transform(packed_.data(), false);

    for (int k = 0; k <= half; ++k) {
        const std::complex<double> yk = (k == half) ? packed_[0] : packed_[k];
        const std::complex<double> ynk = (k == 0) ? packed_[0] : packed_[half - k];
        const std::complex<double> even = 0.5 * (yk + std::conj(ynk));
        const std::complex<double> odd = std::complex<double>(0.0, -0.5) * (yk - std::conj(ynk));
        out[k] = even + unwind_[k] * odd;
    }
}

std::vector<float> fft_convolve(std::span<const float> x, std::span<const float> h) {
    if (x.empty() || h.empty()) return {};
    const std::size_t out_len = x.size() + h.size() - 1;

    std::size_t fft_size = 1024;
    while (fft_size < 4 * h.size()) fft_size <<= 1;
    if (fft_size > out_len) {
        fft_size = 2;
        while (fft_size < out_len) fft_size <<= 1;
    }
    const std::size_t block = fft_size - h.size() + 1;

    Fft plan(static_cast<int>(fft_size));
    std::vector<std::complex<double>> kernel(fft_size, {0.0, 0.0});
    for (std::size_t i = 0; i < h.size(); ++i) kernel[i] = {static_cast<double>(h[i]), 0.0};
    plan.transform(kernel.data(), false);

    std::vector<double> acc(out_len, 0.0);
    std::vector<std::complex<double>> work(fft_size);
    for (std::size_t start = 0; start < x.size(); start += block) {
        const std::size_t n = std::min(block, x.size() - start);
        for (std::size_t i = 0; i < n; ++i) work[i] = {static_cast<double>(x[start + i]), 0.0};
        for (std::size_t i = n; i < fft_size; ++i) work[i] = {0.0, 0.0};
        plan.transform(work.data(), false);
        for (std::size_t i = 0; i < fft_size; ++i) work[i] *= kernel[i];
        plan.transform(work.data(), true);
        const std::size_t m = std::min(fft_size, out_len - start);
        for (std::size_t i = 0; i < m; ++i) acc[start + i] += work[i].real();
    }

    std::vector<float> out(out_len);
    for (std::size_t i = 0; i < out_len; ++i) out[i] = static_cast<float>(acc[i]);
    return out;
}

}  // namespace mpvad
