#include "mpvad/baseline.hpp"

#include <algorithm>
#include <cmath>

#include "mpvad/rng.hpp"

namespace mpvad {

namespace {

constexpr double kFeatureFloorDb = -80.0;

double window_rms(std::span<const float> samples) {
    double sum_sq = 0.0;
    for (float s : samples) sum_sq += static_cast<double>(s) * s;
    return std::sqrt(sum_sq / std::max<std::size_t>(1, samples.size()));
}

}  // namespace

std::array<double, 4> estimate_ambient(std::span<const MultiChannelSegment> segments,
                                       std::span<const ActivityGrid> truths,
                                       int window_samples) {
    if (segments.size() != truths.size())
        throw ShapeError("estimate_ambient: segments/truths count mismatch");
    std::array<std::vector<double>, 4> silent_rms;
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const AudioBuffer& audio = segments[s].audio;
        const ActivityGrid& truth = truths[s];
        const int n_windows =
            std::min<int>(truth.n_windows, static_cast<int>(audio.num_samples()) / window_samples);
        for (int w = 0; w < n_windows; ++w) {
            if (truth.count(w) != 0) continue;
            for (int c = 0; c < 4; ++c) {
                const std::span<const float> win(audio.channels[c].data() + w * window_samples,
                                                 static_cast<std::size_t>(window_samples));
                silent_rms[c].push_back(window_rms(win));
            }
        }
    }
    std::array<double, 4> refs{};
    for (int c = 0; c < 4; ++c) {
        if (silent_rms[c].empty())
            throw Error("estimate_ambient: calibration set has no all-silent window");
        std::vector<double>& v = silent_rms[c];
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        refs[c] = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
    return refs;
}

EnergyFeature energy_feature(const std::array<std::span<const float>, 4>& window,
                             const std::array<double, 4>& refs) {
    EnergyFeature f;
    for (int c = 0; c < 4; ++c) {
        if (refs[c] <= 0.0) throw Error("energy_feature: nonpositive ambient reference");
        const double rms = window_rms(window[c]);
        const double db = 20.0 * std::log10(std::max(rms, 1e-12) / refs[c]);
        f.db[c] = std::max(db, kFeatureFloorDb);
    }
    return f;
}

std::array<LinearSvm, 4> svm_train(std::span<const EnergyFeature> features,
                                   std::span<const std::array<std::uint8_t, 4>> labels,
                                   const SvmTrainConfig& cfg) {
    if (features.size() != labels.size()) throw ShapeError("svm_train: feature/label mismatch");
    if (features.empty()) throw Error("svm_train: no training data");

    std::array<LinearSvm, 4> svms;
    for (int c = 0; c < 4; ++c) {
        bool has_pos = false, has_neg = false;
        for (const auto& l : labels) (l[c] ? has_pos : has_neg) = true;
        if (!has_pos || !has_neg)
            throw Error("svm_train: channel " + std::to_string(c) +
                        " has a single class only");
    }

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(features.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int c = 0; c < 4; ++c) {
        LinearSvm& svm = svms[c];
        long t = 0;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            for (std::size_t i = order.size() - 1; i > 0; --i)
                std::swap(order[i], order[rng.below(i + 1)]);
            for (std::size_t i : order) {
                ++t;
                const double lr = 1.0 / (cfg.lambda * static_cast<double>(t));
                const double y = labels[i][c] ? 1.0 : -1.0;
                double score = svm.b;
                for (int k = 0; k < 4; ++k) score += svm.w[k] * features[i].db[k];
                const double shrink = 1.0 - lr * cfg.lambda;
                for (int k = 0; k < 4; ++k) svm.w[k] *= shrink;
                if (y * score < 1.0) {
                    for (int k = 0; k < 4; ++k) svm.w[k] += lr * y * features[i].db[k];
                    svm.b += lr * y;  // bias unregularized
                }
            }
        }
        for (double w : svm.w)
            if (!std::isfinite(w)) throw Error("svm_train: diverged (non-finite weights)");
    }
    return svms;
}

std::array<std::uint8_t, 4> svm_predict(const std::array<LinearSvm, 4>& svms,
                                        const EnergyFeature& f) {
    std::array<std::uint8_t, 4> out{};
    for (int c = 0; c < 4; ++c) {
        double score = svms[c].b;
        for (int k = 0; k < 4; ++k) score += svms[c].w[k] * f.db[k];
        out[c] = score > 0.0 ? 1 : 0;
    }
    return out;
}

EnergyModel train_energy_baseline(const CorpusManifest& manifest, const SvmTrainConfig& cfg) {
    if (manifest.entries.empty()) throw Error("cannot train energy baseline on empty manifest");

    std::vector<MultiChannelSegment> segments;
    std::vector<ActivityGrid> truths;
    segments.reserve(manifest.entries.size());
    for (const CorpusEntry& e : manifest.entries) {
        MultiChannelSegment seg;
        seg.audio = read_wav(manifest.resolve(e.wav_path));
        seg.plan = load_plan(manifest.resolve(e.plan_path));
        segments.push_back(std::move(seg));
        truths.push_back(load_labels(manifest.resolve(e.labels_path)));
    }

    EnergyModel model;
    model.refs = estimate_ambient(segments, truths);

    std::vector<EnergyFeature> features;
    std::vector<std::array<std::uint8_t, 4>> labels;
    constexpr int kWin = 16000;
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const AudioBuffer& audio = segments[s].audio;
        const int n_windows =
            std::min<int>(truths[s].n_windows, static_cast<int>(audio.num_samples()) / kWin);
        for (int w = 0; w < n_windows; ++w) {
            std::array<std::span<const float>, 4> spans;
            for (int c = 0; c < 4; ++c)
                spans[c] = std::span<const float>(audio.channels[c].data() + w * kWin, kWin);
            features.push_back(energy_feature(spans, model.refs));
            std::array<std::uint8_t, 4> l{};
            for (int c = 0; c < 4; ++c) l[c] = truths[s].at(c, w);
            labels.push_back(l);
        }
    }
    model.svms = svm_train(features, labels, cfg);
    return model;
}

ActivityGrid energy_predict_segment(const EnergyModel& model, const AudioBuffer& audio,
                                    int window_samples) {
    if (audio.num_channels() != 4) throw ShapeError("energy baseline expects 4 channels");
    const int n_windows = static_cast<int>(audio.num_samples()) / window_samples;
    ActivityGrid grid(n_windows);
    for (int w = 0; w < n_windows; ++w) {
        std::array<std::span<const float>, 4> spans;
        for (int c = 0; c < 4; ++c)
            spans[c] = std::span<const float>(audio.channels[c].data() + w * window_samples,
                                              static_cast<std::size_t>(window_samples));
        const std::array<std::uint8_t, 4> pred = svm_predict(model.svms, energy_feature(spans, model.refs));
        for (int c = 0; c < 4; ++c) grid.at(c, w) = pred[c];
    }
    return grid;
}

Checkpoint energy_to_checkpoint(const EnergyModel& model, const FrontEndConfig& fe) {
    Checkpoint ckpt;
    ckpt.kind = ModelKind::energy;
    ckpt.fe_hash = fe.hash();
    MatF w(4, 4), b(4, 1), refs(4, 1);
    for (int c = 0; c < 4; ++c) {
        for (int k = 0; k < 4; ++k) w.at(c, k) = static_cast<float>(model.svms[c].w[k]);
        b.v[c] = static_cast<float>(model.svms[c].b);
        refs.v[c] = static_cast<float>(model.refs[c]);
    }
    ckpt.best = {w, b, refs};
    ckpt.final_params = ckpt.best;
    return ckpt;
}

EnergyModel energy_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != ModelKind::energy)
        throw FormatError("checkpoint does not hold an energy baseline");
    if (ckpt.best.size() != 3 || ckpt.best[0].rows != 4 || ckpt.best[0].cols != 4)
        throw FormatError("energy checkpoint has wrong tensor layout");
    EnergyModel model;
    for (int c = 0; c < 4; ++c) {
        for (int k = 0; k < 4; ++k) model.svms[c].w[k] = ckpt.best[0].at(c, k);
        model.svms[c].b = ckpt.best[1].v[c];
        model.refs[c] = ckpt.best[2].v[c];
    }
    return model;
}

}  // namespace mpvad
