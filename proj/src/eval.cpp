#include "mpvad/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mpvad/rng.hpp"

using nlohmann::json;

namespace mpvad {

namespace {

void check_same_shape(const ActivityGrid& pred, const ActivityGrid& truth) {
    if (pred.n_windows != truth.n_windows)
        throw ShapeError("activity grids have different window counts");
}

double span_energy(std::span<const float> x) {
    double e = 0.0;
    for (float s : x) e += static_cast<double>(s) * s;
    return e;
}

}  // namespace

double frame_accuracy(const ActivityGrid& pred, const ActivityGrid& truth) {
    check_same_shape(pred, truth);
    if (truth.n_windows == 0) return 0.0;
    std::int64_t correct = 0;
    const std::int64_t total = 4LL * truth.n_windows;
    for (int c = 0; c < 4; ++c)
        for (int w = 0; w < truth.n_windows; ++w)
            if (pred.at(c, w) == truth.at(c, w)) ++correct;
    return static_cast<double>(correct) / static_cast<double>(total);
}

std::array<std::optional<double>, 5> accuracy_by_count(const ActivityGrid& pred,
                                                       const ActivityGrid& truth) {
    check_same_shape(pred, truth);
    std::array<std::int64_t, 5> correct{}, total{};
    for (int w = 0; w < truth.n_windows; ++w) {
        const int k = truth.count(w);
        for (int c = 0; c < 4; ++c) {
            ++total[k];
            if (pred.at(c, w) == truth.at(c, w)) ++correct[k];
        }
    }
    std::array<std::optional<double>, 5> out;
    for (int k = 0; k < 5; ++k)
        if (total[k] > 0)
            out[k] = static_cast<double>(correct[k]) / static_cast<double>(total[k]);
    return out;
}

std::array<std::array<std::int64_t, 5>, 5> counting_confusion(const ActivityGrid& pred,
                                                              const ActivityGrid& truth) {
    check_same_shape(pred, truth);
    std::array<std::array<std::int64_t, 5>, 5> confusion{};
    for (int w = 0; w < truth.n_windows; ++w)
        ++confusion[truth.count(w)][pred.count(w)];
    return confusion;
}

EvalReport evaluate_grids(std::span<const ActivityGrid> preds,
                          std::span<const ActivityGrid> truths, const std::string& condition) {
    if (preds.size() != truths.size())
        throw ShapeError("evaluate_grids: pred/truth segment count mismatch");

    EvalReport report;
    report.condition = condition;
    std::int64_t cells_correct = 0, cells_total = 0;
    std::array<std::int64_t, 5> group_correct{}, group_total{};
    std::array<std::int64_t, 4> tp{}, fp{}, fn{};

    for (std::size_t s = 0; s < preds.size(); ++s) {
        const ActivityGrid& pred = preds[s];
        const ActivityGrid& truth = truths[s];
        check_same_shape(pred, truth);
        report.total_windows += truth.n_windows;
        for (int w = 0; w < truth.n_windows; ++w) {
            const int k = truth.count(w);
            ++report.confusion[k][pred.count(w)];
            for (int c = 0; c < 4; ++c) {
                const bool match = pred.at(c, w) == truth.at(c, w);
                cells_correct += match;
                ++cells_total;
                group_correct[k] += match;
                ++group_total[k];
                if (pred.at(c, w) && truth.at(c, w)) ++tp[c];
                if (pred.at(c, w) && !truth.at(c, w)) ++fp[c];
                if (!pred.at(c, w) && truth.at(c, w)) ++fn[c];
            }
        }
    }

    report.overall_accuracy =
        cells_total ? static_cast<double>(cells_correct) / cells_total : 0.0;
    for (int k = 0; k < 5; ++k)
        if (group_total[k] > 0)
            report.accuracy_by_count[k] =
                static_cast<double>(group_correct[k]) / static_cast<double>(group_total[k]);
    for (int c = 0; c < 4; ++c) {
        report.precision[c] = (tp[c] + fp[c]) ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 1.0;
        report.recall[c] = (tp[c] + fn[c]) ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 1.0;
    }
    return report;
}

std::string EvalReport::to_json_string() const {
    json j;
    j["condition"] = condition;
    j["overall_accuracy"] = overall_accuracy;
    j["total_windows"] = total_windows;
    json by_count = json::array();
    for (int k = 0; k < 5; ++k) {
        if (accuracy_by_count[k])
            by_count.push_back(*accuracy_by_count[k]);
        else
            by_count.push_back(nullptr);
    }
    j["accuracy_by_count"] = by_count;
    json conf = json::array();
    for (int r = 0; r < 5; ++r) {
        json row = json::array();
        for (int c = 0; c < 5; ++c) row.push_back(confusion[r][c]);
        conf.push_back(row);
    }
    j["counting_confusion"] = conf;
    j["precision"] = precision;
    j["recall"] = recall;
    return j.dump(2);
}

void EvalReport::write_confusion_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write confusion CSV: " + path);
    f << "true\\pred,0,1,2,3,4\n";
    for (int r = 0; r < 5; ++r) {
        f << r;
        for (int c = 0; c < 5; ++c) f << ',' << confusion[r][c];
        f << '\n';
    }
}

std::vector<float> mask_envelope(const ActivityGrid& pred, int channel, int window_samples,
                                 int fade_samples) {
    const std::size_t total = static_cast<std::size_t>(pred.n_windows) * window_samples;
    std::vector<float> env(total, 0.0f);

    // Merge consecutive active seconds into spans, then ramp inside each span
    // so inactive seconds stay exactly zero.
    int w = 0;
    while (w < pred.n_windows) {
        if (!pred.at(channel, w)) {
            ++w;
            continue;
        }
        int end = w;
        while (end < pred.n_windows && pred.at(channel, end)) ++end;
        const std::size_t a = static_cast<std::size_t>(w) * window_samples;
        const std::size_t b = static_cast<std::size_t>(end) * window_samples;
        for (std::size_t k = a; k < b; ++k) env[k] = 1.0f;
        for (int k = 0; k < fade_samples && a + k < b; ++k)
            env[a + k] = static_cast<float>(k + 1) / static_cast<float>(fade_samples);
        for (int k = 0; k < fade_samples && b - 1 - k >= a; ++k)
            env[b - 1 - k] = std::min(env[b - 1 - k],
                                      static_cast<float>(k + 1) / static_cast<float>(fade_samples));
        w = end;
    }
    return env;
}

MultiChannelSegment mask_enhance(const MultiChannelSegment& recording, const ActivityGrid& pred,
                                 double fade_ms) {
    const int window_samples = recording.audio.sample_rate;  // 1 s windows
    const std::size_t covered =
        static_cast<std::size_t>(pred.n_windows) * window_samples;
    if (covered < recording.audio.num_samples())
        throw ShapeError("mask_enhance: grid does not cover the recording");

    const int fade_samples =
        std::max(1, static_cast<int>(std::lround(fade_ms / 1000.0 * recording.audio.sample_rate)));

    MultiChannelSegment out;
    out.plan = recording.plan;
    out.audio = recording.audio;
    for (int c = 0; c < recording.audio.num_channels(); ++c) {
        const std::vector<float> env = mask_envelope(pred, c, window_samples, fade_samples);
        std::vector<float>& ch = out.audio.channels[c];
        for (std::size_t k = 0; k < ch.size(); ++k) ch[k] *= env[k];
    }
    return out;
}

LeakageReport leakage_metrics(const MultiChannelSegment& masked, const ActivityGrid& pred,
                              const SegmentPlan& plan, double fade_ms) {
    const int fs = plan.sample_rate;
    const int window_samples = fs;
    const int fade_samples = std::max(1, static_cast<int>(std::lround(fade_ms / 1000.0 * fs)));

    // Re-render the clean own-talk component and the full unmasked mix.
    const std::array<AudioBuffer, 4> sources = prepare_sources(plan);
    const AudioBuffer own = render_own_component(plan, sources);
    const RenderResult rendered = render_segment(plan, sources);
    const AudioBuffer& unmasked = rendered.segment.audio;
    const ActivityGrid truth = derive_labels(plan);

    if (pred.n_windows < truth.n_windows)
        throw ShapeError("leakage_metrics: prediction grid too short");

    LeakageReport report;
    for (int c = 0; c < 4; ++c) {
        const std::vector<float> env = mask_envelope(pred, c, window_samples, fade_samples);

        double own_total = 0.0, own_masked = 0.0;
        for (std::size_t k = 0; k < own.channels[c].size(); ++k) {
            const double s = own.channels[c][k];
            own_total += s * s;
            const double m = s * env[k];
            own_masked += m * m;
        }
        report.retained_target[c] = own_total > 0.0 ? own_masked / own_total : 1.0;

        double silent_unmasked = 0.0, silent_masked = 0.0;
        for (int w = 0; w < truth.n_windows; ++w) {
            if (truth.at(c, w)) continue;
            const std::size_t a = static_cast<std::size_t>(w) * window_samples;
            silent_unmasked += span_energy(
                std::span<const float>(unmasked.channels[c].data() + a, window_samples));
            silent_masked += span_energy(
                std::span<const float>(masked.audio.channels[c].data() + a, window_samples));
            if (pred.at(c, w)) ++report.false_alarm_seconds[c];
        }
        for (int w = 0; w < truth.n_windows; ++w)
            if (truth.at(c, w) && !pred.at(c, w)) ++report.miss_seconds[c];

        report.residual_crosstalk[c] =
            silent_unmasked > 0.0 ? silent_masked / silent_unmasked : 0.0;
    }
    return report;
}

std::string LeakageReport::to_json_string() const {
    json j;
    j["retained_target"] = retained_target;
    j["residual_crosstalk"] = residual_crosstalk;
    j["false_alarm_seconds"] = false_alarm_seconds;
    j["miss_seconds"] = miss_seconds;
    return j.dump(2);
}

RtfResult rtf_benchmark(const Predictor& pred, const FrontEndConfig& fe, double audio_seconds,
                        int runs, std::uint64_t seed) {
    if (runs < 1) throw Error("rtf_benchmark needs at least one run");
    const MatD mel = mel_matrix(fe);
    const std::size_t n =
        static_cast<std::size_t>(audio_seconds * fe.sample_rate);
    AudioBuffer audio(4, n, fe.sample_rate);
    Rng rng(seed);
    for (int c = 0; c < 4; ++c)
        for (float& s : audio.channels[c]) s = static_cast<float>(0.05 * rng.normal());

    predict_segment(pred, audio, fe, mel);  // warm-up

    std::vector<double> rtfs(runs);
    for (int r = 0; r < runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        predict_segment(pred, audio, fe, mel);
        const auto t1 = std::chrono::steady_clock::now();
        const double wall = std::chrono::duration<double>(t1 - t0).count();
        rtfs[r] = wall / audio.duration_s();
    }
    std::sort(rtfs.begin(), rtfs.end());

    RtfResult result;
    result.runs = runs;
    result.audio_seconds_per_run = audio.duration_s();
    for (double r : rtfs) result.mean += r;
    result.mean /= runs;
    const int p95_index = std::min(runs - 1, static_cast<int>(std::ceil(0.95 * runs)) - 1);
    result.p95 = rtfs[std::max(0, p95_index)];
    return result;
}

}  // namespace mpvad
