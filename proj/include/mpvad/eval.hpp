#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>

#include "mpvad/models.hpp"
#include "mpvad/sim.hpp"

namespace mpvad {

struct EvalReport {
    double overall_accuracy = 0.0;
    std::array<std::optional<double>, 5> accuracy_by_count;  // absent when no such window
    std::array<std::array<std::int64_t, 5>, 5> confusion{};  // [true count][predicted count]
    std::array<double, 4> precision{};
    std::array<double, 4> recall{};
    std::string condition;
    std::int64_t total_windows = 0;

    std::string to_json_string() const;
    void write_confusion_csv(const std::string& path) const;
};

/// Fraction of (channel, second) cells where pred equals truth.
double frame_accuracy(const ActivityGrid& pred, const ActivityGrid& truth);

/// Cell accuracy grouped by the true active-talker count of each window.
std::array<std::optional<double>, 5> accuracy_by_count(const ActivityGrid& pred,
                                                       const ActivityGrid& truth);

/// confusion[r][c] = windows with true count r and predicted count c.
std::array<std::array<std::int64_t, 5>, 5> counting_confusion(const ActivityGrid& pred,
                                                              const ActivityGrid& truth);

/// Aggregates the full metric suite over a corpus worth of grids.
EvalReport evaluate_grids(std::span<const ActivityGrid> preds,
                          std::span<const ActivityGrid> truths, const std::string& condition);

/// Per-sample mask envelope for a prediction row: 1 inside predicted-active
/// seconds with linear fade ramps placed inside the active span, 0 outside.
std::vector<float> mask_envelope(const ActivityGrid& pred, int channel, int window_samples,
                                 int fade_samples);

/// Zeroes seconds predicted inactive (10 ms linear fades inside the kept
/// spans). The plan rides along unchanged.
MultiChannelSegment mask_enhance(const MultiChannelSegment& recording, const ActivityGrid& pred,
                                 double fade_ms = 10.0);

struct LeakageReport {
    std::array<double, 4> retained_target{};     // masked / unmasked own-talk energy
    std::array<double, 4> residual_crosstalk{};  // masked / unmasked energy in own-silent seconds
    std::array<int, 4> false_alarm_seconds{};
    std::array<int, 4> miss_seconds{};

    std::string to_json_string() const;
};

/// Re-renders the plan's clean components to score the masked recording.
LeakageReport leakage_metrics(const MultiChannelSegment& masked, const ActivityGrid& pred,
                              const SegmentPlan& plan, double fade_ms = 10.0);

struct RtfResult {
    double mean = 0.0;
    double p95 = 0.0;
    int runs = 0;
    double audio_seconds_per_run = 0.0;
};

/// Wall-clock (featurization + forward) / audio duration, single thread,
/// over at least 30 runs on synthetic audio.
RtfResult rtf_benchmark(const Predictor& pred, const FrontEndConfig& fe, double audio_seconds,
                        int runs = 30, std::uint64_t seed = 7);

}  // namespace mpvad
