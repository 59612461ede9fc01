#include "mpvad/features.hpp"

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mpvad/fft.hpp"
#include "mpvad/rng.hpp"

namespace mpvad {

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

std::uint64_t FrontEndConfig::hash() const {
    std::ostringstream os;
    os << "fe1|" << target_rms_db << '|' << sample_rate << '|' << n_fft << '|' << win_len << '|'
       << hop << '|' << n_mels << '|' << fmin << '|' << fmax << '|' << log_floor << '|' << in_eps
       << '|' << silence_floor_db;
    return fnv1a64(os.str());
}

RmsNormResult rms_normalize(std::span<const float> window, double target_rms_db,
                            double silence_floor_db) {
    if (window.empty()) throw ShapeError("rms_normalize: empty window");
    double sum_sq = 0.0;
    for (float s : window) sum_sq += static_cast<double>(s) * s;
    const double rms = std::sqrt(sum_sq / static_cast<double>(window.size()));

    RmsNormResult out;
    out.samples.assign(window.begin(), window.end());
    if (rms < std::pow(10.0, silence_floor_db / 20.0)) {
        out.silent = true;
        return out;
    }
    const double gain = std::pow(10.0, target_rms_db / 20.0) / rms;
    for (float& s : out.samples) s = static_cast<float>(s * gain);
    return out;
}

MatD stft_mag(std::span<const float> window, const FrontEndConfig& cfg) {
    if (static_cast<int>(window.size()) != cfg.window_samples())
        throw ShapeError("stft_mag: expected " + std::to_string(cfg.window_samples()) +
                         " samples, got " + std::to_string(window.size()));

    const int n_bins = cfg.n_fft / 2 + 1;
    const int n_frames = cfg.frames_per_window();
    MatD mag(n_bins, n_frames);

    std::vector<double> hamming(cfg.win_len);
    for (int n = 0; n < cfg.win_len; ++n)
        hamming[n] = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / (cfg.win_len - 1));

    Fft plan(cfg.n_fft);
    std::vector<double> frame(cfg.n_fft, 0.0);
    std::vector<std::complex<double>> spec(n_bins);
    for (int t = 0; t < n_frames; ++t) {
        const int off = t * cfg.hop;
        for (int n = 0; n < cfg.win_len; ++n)
            frame[n] = static_cast<double>(window[off + n]) * hamming[n];
        for (int n = cfg.win_len; n < cfg.n_fft; ++n) frame[n] = 0.0;
        plan.real_forward(frame.data(), spec.data());
        for (int k = 0; k < n_bins; ++k) mag.at(k, t) = std::abs(spec[k]);
    }
    return mag;
}

MatD mel_matrix(const FrontEndConfig& cfg) {
    const int n_bins = cfg.n_fft / 2 + 1;
    MatD mel(cfg.n_mels, n_bins);

    const double mel_lo = hz_to_mel(cfg.fmin);
    const double mel_hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges(cfg.n_mels + 2);
    for (int i = 0; i < cfg.n_mels + 2; ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));

    const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.n_fft;
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
        double peak = 0.0;
        for (int k = 0; k < n_bins; ++k) {
            const double f = k * bin_hz;
            double w = 0.0;
            if (f > left && f < right)
                w = (f <= center) ? (f - left) / (center - left) : (right - f) / (right - center);
            mel.at(m, k) = w;
            peak = std::max(peak, w);
        }
        if (peak > 0.0)
            for (int k = 0; k < n_bins; ++k) mel.at(m, k) /= peak;
    }
    return mel;
}

FeatureBlock featurize_channel(std::span<const float> window, const FrontEndConfig& cfg,
                               const MatD& mel) {
    const RmsNormResult normed = rms_normalize(window, cfg.target_rms_db, cfg.silence_floor_db);
    const MatD mag = stft_mag(normed.samples, cfg);
    const int n_frames = mag.cols;
    const int n_bins = mag.rows;

    FeatureBlock block(cfg.n_mels, n_frames);
    std::vector<double> power(n_bins);
    std::vector<double> logmel(static_cast<std::size_t>(cfg.n_mels) * n_frames);
    for (int t = 0; t < n_frames; ++t) {
        for (int k = 0; k < n_bins; ++k) {
            const double a = mag.at(k, t);
            power[k] = a * a;
        }
        for (int m = 0; m < cfg.n_mels; ++m) {
            const double* row = mel.row(m);
            double acc = 0.0;
            for (int k = 0; k < n_bins; ++k) acc += row[k] * power[k];
            logmel[static_cast<std::size_t>(m) * n_frames + t] =
                std::log(std::max(acc, cfg.log_floor));
        }
    }

    // Instance normalization: standardize each mel bin over the frames.
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double* row = &logmel[static_cast<std::size_t>(m) * n_frames];
        double mean = 0.0;
        for (int t = 0; t < n_frames; ++t) mean += row[t];
        mean /= n_frames;
        double var = 0.0;
        for (int t = 0; t < n_frames; ++t) var += (row[t] - mean) * (row[t] - mean);
        var /= n_frames;
        const double inv = 1.0 / std::sqrt(var + cfg.in_eps);
        for (int t = 0; t < n_frames; ++t)
            block.at(m, t) = static_cast<float>((row[t] - mean) * inv);
    }
    return block;
}

std::array<FeatureBlock, 4> featurize_window(const std::array<std::span<const float>, 4>& window,
                                             const FrontEndConfig& cfg, const MatD& mel) {
    std::array<FeatureBlock, 4> out;
    for (int c = 0; c < 4; ++c) out[c] = featurize_channel(window[c], cfg, mel);
    return out;
}

void dump_features(const std::string& path, std::span<const FeatureBlock> blocks,
                   const FrontEndConfig& cfg) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("MPFD", 4);
    const std::uint32_t n = static_cast<std::uint32_t>(blocks.size());
    const std::uint32_t rows = blocks.empty() ? 0 : static_cast<std::uint32_t>(blocks[0].n_mels);
    const std::uint32_t cols = blocks.empty() ? 0 : static_cast<std::uint32_t>(blocks[0].n_frames);
    const std::uint64_t h = cfg.hash();
    f.write(reinterpret_cast<const char*>(&n), 4);
    f.write(reinterpret_cast<const char*>(&rows), 4);
    f.write(reinterpret_cast<const char*>(&cols), 4);
    f.write(reinterpret_cast<const char*>(&h), 8);
    for (const FeatureBlock& b : blocks) {
        if (b.n_mels != static_cast<int>(rows) || b.n_frames != static_cast<int>(cols))
            throw ShapeError("dump_features: blocks of differing shape");
        f.write(reinterpret_cast<const char*>(b.v.data()),
                static_cast<std::streamsize>(b.v.size() * sizeof(float)));
    }
    if (!f) throw IoError("write failed: " + path);
}

std::vector<FeatureBlock> load_features(const std::string& path, const FrontEndConfig& cfg) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open feature dump: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MPFD", 4) != 0)
        throw FormatError("not a feature dump: " + path);
    std::uint32_t n = 0, rows = 0, cols = 0;
    std::uint64_t h = 0;
    f.read(reinterpret_cast<char*>(&n), 4);
    f.read(reinterpret_cast<char*>(&rows), 4);
    f.read(reinterpret_cast<char*>(&cols), 4);
    f.read(reinterpret_cast<char*>(&h), 8);
    if (!f) throw FormatError("truncated feature dump header: " + path);
    if (h != cfg.hash())
        throw FormatError("feature dump was produced by a different front-end config: " + path);
    std::vector<FeatureBlock> blocks;
    blocks.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        FeatureBlock b(static_cast<int>(rows), static_cast<int>(cols));
        f.read(reinterpret_cast<char*>(b.v.data()),
               static_cast<std::streamsize>(b.v.size() * sizeof(float)));
        if (!f) throw FormatError("truncated feature dump payload: " + path);
        blocks.push_back(std::move(b));
    }
    return blocks;
}

}  // namespace mpvad
