#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mpvad/audio.hpp"

namespace mpvad {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

double distance(const Vec2& a, const Vec2& b);

/// Talker/mic geometry. Mic i is the personal mic of talker i and points at
/// that talker.
struct LayoutConfig {
    std::array<Vec2, 4> talkers;
    std::array<Vec2, 4> mics;
    double speed_of_sound = 343.0;

    /// Talkers at {0, 60, 120, 180} degrees on a semicircle, each mic 1 m
    /// outward from its talker.
    static LayoutConfig semicircle(double radius_m = 1.25, double mic_distance_m = 1.0);

    /// Talkers on the vertices of a square, facing outward.
    static LayoutConfig square(double half_diagonal_m = 1.25, double mic_distance_m = 1.0);
};

struct RoomConfig {
    double t60_s = 0.45;  // 0 disables reverberation
    double drr_ref_min_db = 14.0;  // direct-to-reverberant ratio at 1 m
    double drr_ref_max_db = 17.0;
    double cross_gain_jitter_db = 2.0;
    double directivity_cone_deg = 60.0;  // half-angle of the on-axis zone
    double directivity_att_db = 10.0;    // attenuation beyond the cone
    double rir_tail_s = 0.25;
};

/// One acoustic path from a talker to a mic: amplitude, propagation delay
/// and (optionally) a synthetic impulse response whose peak tap sits at the
/// delay.
struct PathParams {
    double gain = 1.0;
    double delay_s = 0.0;
    double drr_db = 0.0;
    double t60_s = 0.0;  // 0 means pure gain + delay
    double rir_tail_s = 0.25;
    std::uint64_t rir_seed = 0;

    bool has_rir() const { return t60_s > 0.0; }
};

/// paths[j][i] is the path from talker j to mic i.
using PathMatrix = std::array<std::array<PathParams, 4>, 4>;

struct SourceRef {
    enum class Kind { synth, file };
    Kind kind = Kind::synth;
    std::uint64_t seed = 0;  // synth mode
    std::string path;        // file mode
};

struct ChannelPlan {
    bool active = false;
    SourceRef source;
    double start_s = 0.0;
    double end_s = 0.0;
    double target_rms_db = -25.0;
    double mic_gain_db = 0.0;
};

/// Everything needed to re-render a segment deterministically; doubles as
/// the label ground truth.
struct SegmentPlan {
    std::string segment_id;
    std::string condition = "setA";
    std::uint64_t seed = 0;
    double duration_s = 20.0;
    int sample_rate = 16000;
    double noise_floor_db = -60.0;
    bool noise_enabled = true;
    std::uint64_t noise_seed = 0;
    std::array<ChannelPlan, 4> channels;
    PathMatrix paths;

    std::size_t total_samples() const {
        return static_cast<std::size_t>(duration_s * sample_rate + 0.5);
    }
    int num_windows() const { return static_cast<int>(duration_s); }

    /// Throws on violated invariants (interval bounds, diagonal dominance).
    void validate() const;
};

/// Per-channel, per-second binary labels or predictions.
struct ActivityGrid {
    int n_windows = 0;
    std::vector<std::uint8_t> v;  // 4 x n_windows, row-major

    ActivityGrid() = default;
    explicit ActivityGrid(int windows)
        : n_windows(windows), v(static_cast<std::size_t>(4) * windows, 0) {}

    std::uint8_t at(int ch, int w) const { return v[static_cast<std::size_t>(ch) * n_windows + w]; }
    std::uint8_t& at(int ch, int w) { return v[static_cast<std::size_t>(ch) * n_windows + w]; }

    /// Number of active channels in window w.
    int count(int w) const {
        int n = 0;
        for (int c = 0; c < 4; ++c) n += at(c, w);
        return n;
    }
};

struct MultiChannelSegment {
    AudioBuffer audio;  // 4 channels
    SegmentPlan plan;
};

struct SimConfig {
    double p_active = 0.6;
    std::vector<double> rms_levels_db = {-35.0, -25.0, -15.0};
    LayoutConfig layout = LayoutConfig::semicircle();
    RoomConfig room;
    std::string condition = "setA";
    SourceRef::Kind source_mode = SourceRef::Kind::synth;
    std::vector<std::string> source_pool;  // wav paths, file mode
    double min_utterance_s = 4.0;
    double max_utterance_s = 16.0;
    double duration_s = 20.0;
    int sample_rate = 16000;
    double noise_floor_db = -60.0;
    bool noise_enabled = true;
    std::array<double, 4> mic_gain_db = {0.0, 0.0, 0.0, 0.0};
};

/// Named acoustic conditions. setA is the training condition; setB and setC
/// change room, layout and per-channel mic gains to create train/eval
/// mismatch.
SimConfig condition_preset(const std::string& name);

/// Deterministic speech-like mono signal: harmonic voiced stretches with a
/// drifting f0 in [80, 300] Hz alternating with formant-shaped noise bursts
/// every 200-400 ms.
AudioBuffer gen_synthetic_utterance(double duration_s, std::uint64_t seed,
                                    int sample_rate = 16000);

PathMatrix derive_paths(const LayoutConfig& layout, const RoomConfig& room, std::uint64_t seed);

/// Renders the impulse response for one path (direct tap plus exponentially
/// decaying noise tail at the path's DRR). Empty when the path has no rir.
AudioBuffer render_rir(const PathParams& path, int sample_rate);

SegmentPlan build_segment_plan(const SimConfig& config, std::uint64_t seed);

/// Window (c, w) is active iff the channel's utterance interval overlaps
/// [w, w+1) by at least 200 ms.
ActivityGrid derive_labels(const SegmentPlan& plan);

/// Builds the four source tracks for a plan: utterances synthesized or
/// loaded, placed at their interval and normalized to the target RMS over
/// the interval. Inactive channels give silent tracks.
std::array<AudioBuffer, 4> prepare_sources(const SegmentPlan& plan);

struct RenderResult {
    MultiChannelSegment segment;
    std::array<std::int64_t, 4> clipped_samples{};
};

/// Mixes x_i = sum_j path_ji(s_j) + noise, applies per-channel mic gain and
/// clips to [-1, 1] (clips counted, not rejected).
RenderResult render_segment(const SegmentPlan& plan, const std::array<AudioBuffer, 4>& sources);

/// Clean own-talk component per channel: path_ii(s_i), mic gain applied,
/// no noise. Used by the enhancement leakage metrics.
AudioBuffer render_own_component(const SegmentPlan& plan,
                                 const std::array<AudioBuffer, 4>& sources);

struct CorpusEntry {
    std::string segment_id;
    std::string wav_path;     // relative to the manifest directory
    std::string plan_path;
    std::string labels_path;
    std::string condition;
    std::uint64_t seed = 0;
};

struct CorpusManifest {
    std::string root_dir;
    std::vector<CorpusEntry> entries;

    std::string resolve(const std::string& rel) const;
    double total_audio_seconds() const;
};

/// Writes n segments (4-channel float32 WAVs), their plans and label grids,
/// plus a line-delimited manifest. Deterministic given the seed, regardless
/// of thread count.
CorpusManifest generate_corpus(const SimConfig& config, int n_segments,
                               const std::string& out_dir, std::uint64_t seed, int threads = 1);

void save_manifest(const std::string& path, const CorpusManifest& manifest);
CorpusManifest load_manifest(const std::string& path);
std::uint64_t manifest_file_hash(const std::string& path);

void save_plan(const std::string& path, const SegmentPlan& plan);
SegmentPlan load_plan(const std::string& path);
void save_labels(const std::string& path, const std::string& segment_id, const ActivityGrid& grid);
ActivityGrid load_labels(const std::string& path);

}  // namespace mpvad
