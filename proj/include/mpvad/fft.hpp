#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

namespace mpvad {

/// Iterative radix-2 complex FFT with precomputed twiddles.
/// Size must be a power of two.
class Fft {
public:
    explicit Fft(int n);

    int size() const { return n_; }

    /// In-place transform of `a` (length n). inverse=true applies 1/n scaling.
    void transform(std::complex<double>* a, bool inverse) const;

    /// Real-input forward transform: fills `out` with the n/2 + 1 nonnegative
    /// frequency bins of the length-n real signal `in`. Uses a half-size
    /// complex transform internally.
    void real_forward(const double* in, std::complex<double>* out) const;

private:
    int n_;
    std::vector<int> bitrev_;
    std::vector<std::complex<double>> twiddle_;
    std::vector<std::complex<double>> unwind_;  // e^{-2 pi i k / n}, k = 0..n/2
    std::unique_ptr<Fft> half_plan_;
    mutable std::vector<std::complex<double>> packed_;
};

/// Linear convolution of x with kernel h via overlap-add FFT blocks.
/// Result length is x.size() + h.size() - 1.
std::vector<float> fft_convolve(std::span<const float> x, std::span<const float> h);

}  // namespace mpvad
