#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mpvad/errors.hpp"

namespace mpvad {

/// Planar multi-channel audio, samples in [-1, 1].
struct AudioBuffer {
    std::vector<std::vector<float>> channels;
    int sample_rate = 16000;

    AudioBuffer() = default;
    AudioBuffer(int n_channels, std::size_t n_samples, int rate)
        : channels(n_channels, std::vector<float>(n_samples, 0.0f)), sample_rate(rate) {}

    int num_channels() const { return static_cast<int>(channels.size()); }
    std::size_t num_samples() const { return channels.empty() ? 0 : channels[0].size(); }
    double duration_s() const {
        return static_cast<double>(num_samples()) / static_cast<double>(sample_rate);
    }
};

enum class WavEncoding { pcm16, float32 };

/// Reads a RIFF/WAVE file holding PCM-16 or IEEE-float-32 samples.
/// PCM-16 value v maps to v / 32768.
AudioBuffer read_wav(const std::string& path);

void write_wav(const std::string& path, const AudioBuffer& buf, WavEncoding enc);

/// Band-limited resampling (windowed sinc, Hann window, 32 taps per side).
/// Output length is round(len * target / source).
AudioBuffer resample(const AudioBuffer& buf, int target_rate);

}  // namespace mpvad
