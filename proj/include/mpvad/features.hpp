#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpvad/mat.hpp"

namespace mpvad {

/// Front-end constants. The hash pins every value so checkpoints refuse to
/// run against a differently configured feature pipeline.
struct FrontEndConfig {
    double target_rms_db = -25.0;
    int sample_rate = 16000;
    int n_fft = 512;
    int win_len = 320;  // 20 ms
    int hop = 160;      // 10 ms
    int n_mels = 40;
    double fmin = 0.0;
    double fmax = 8000.0;
    double log_floor = 1e-10;
    double in_eps = 1e-5;
    double silence_floor_db = -80.0;

    int window_samples() const { return sample_rate; }  // 1 s decision window
    int frames_per_window() const { return (window_samples() - win_len) / hop + 1; }
    std::uint64_t hash() const;
};

/// One channel's 40 x 99 log-mel block after both normalizations.
struct FeatureBlock {
    int n_mels = 0;
    int n_frames = 0;
    std::vector<float> v;  // row-major, mel x frames

    FeatureBlock() = default;
    FeatureBlock(int mels, int frames)
        : n_mels(mels), n_frames(frames), v(static_cast<std::size_t>(mels) * frames, 0.0f) {}
    float at(int m, int t) const { return v[static_cast<std::size_t>(m) * n_frames + t]; }
    float& at(int m, int t) { return v[static_cast<std::size_t>(m) * n_frames + t]; }
};

struct RmsNormResult {
    std::vector<float> samples;
    bool silent = false;  // input below the silence floor, returned unchanged
};

/// Scales a 1 s window to the target RMS. Windows below the silence floor
/// are passed through untouched and flagged.
RmsNormResult rms_normalize(std::span<const float> window, double target_rms_db,
                            double silence_floor_db = -80.0);

/// Magnitude STFT: (n_fft/2 + 1) x frames. Hamming window of win_len samples
/// zero-padded to n_fft; frame t covers samples [t*hop, t*hop + win_len).
/// No centering padding is applied.
MatD stft_mag(std::span<const float> window, const FrontEndConfig& cfg);

/// Triangular HTK-mel filterbank, n_mels x (n_fft/2 + 1), each row
/// peak-normalized to 1.
MatD mel_matrix(const FrontEndConfig& cfg);

/// Full front end on one channel: RMS normalize, power STFT, mel, natural
/// log with floor, then per-bin instance normalization over the frames.
FeatureBlock featurize_channel(std::span<const float> window, const FrontEndConfig& cfg,
                               const MatD& mel);

/// All four channels of a 1 s window.
std::array<FeatureBlock, 4> featurize_window(const std::array<std::span<const float>, 4>& window,
                                             const FrontEndConfig& cfg, const MatD& mel);

/// Binary feature dump for cross-implementation regression tests:
/// magic, dims, config hash, then row-major float32 values per block.
void dump_features(const std::string& path, std::span<const FeatureBlock> blocks,
                   const FrontEndConfig& cfg);
std::vector<FeatureBlock> load_features(const std::string& path, const FrontEndConfig& cfg);

}  // namespace mpvad
