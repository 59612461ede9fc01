#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mpvad/models.hpp"
#include "mpvad/sim.hpp"

namespace mpvad {

/// Per-channel RMS in dB relative to that channel's ambient reference,
/// floored at -80 dB.
struct EnergyFeature {
    std::array<double, 4> db{};
};

struct LinearSvm {
    std::array<double, 4> w{};
    double b = 0.0;
};

/// The full energy baseline: one SVM per channel over the 4-dim
/// multichannel energy feature, plus the calibration references.
struct EnergyModel {
    std::array<LinearSvm, 4> svms;
    std::array<double, 4> refs{};  // ambient RMS per channel
};

/// Median RMS over all-silent windows (true talker count 0) per channel.
/// Throws if the calibration set has no such window.
std::array<double, 4> estimate_ambient(std::span<const MultiChannelSegment> segments,
                                       std::span<const ActivityGrid> truths,
                                       int window_samples = 16000);

EnergyFeature energy_feature(const std::array<std::span<const float>, 4>& window,
                             const std::array<double, 4>& refs);

struct SvmTrainConfig {
    double lambda = 1e-3;
    int epochs = 50;
    std::uint64_t seed = 1;
};

/// L2-regularized hinge loss by sub-gradient descent (lr 1/(lambda t)).
/// Each channel's SVM consumes the full 4-dim feature.
std::array<LinearSvm, 4> svm_train(std::span<const EnergyFeature> features,
                                   std::span<const std::array<std::uint8_t, 4>> labels,
                                   const SvmTrainConfig& cfg);

/// decision_c = w_c . f + b_c > 0; ties break to inactive.
std::array<std::uint8_t, 4> svm_predict(const std::array<LinearSvm, 4>& svms,
                                        const EnergyFeature& f);

/// Full calibration + training pass over a labeled corpus.
EnergyModel train_energy_baseline(const CorpusManifest& manifest, const SvmTrainConfig& cfg);

/// Per-window predictions for a whole segment.
ActivityGrid energy_predict_segment(const EnergyModel& model, const AudioBuffer& audio,
                                    int window_samples = 16000);

Checkpoint energy_to_checkpoint(const EnergyModel& model, const FrontEndConfig& fe);
EnergyModel energy_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mpvad
