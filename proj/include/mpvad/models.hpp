#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mpvad/features.hpp"
#include "mpvad/nn.hpp"
#include "mpvad/sim.hpp"

namespace mpvad {

/// Single-channel VAD: parameters shared across channels, channels never
/// interact. GRU(40 -> 64), FC 64 -> 16 tanh, FC 16 -> 1 sigmoid.
template <typename T>
struct ScModelT {
    GruParams<T> gru;
    Mat<T> fc1_w, fc1_b;
    Mat<T> fc2_w, fc2_b;

    ScModelT() = default;
    ScModelT(int input_dim, int hidden_dim, int fc_dim)
        : gru(input_dim, hidden_dim),
          fc1_w(fc_dim, hidden_dim),
          fc1_b(fc_dim, 1),
          fc2_w(1, fc_dim),
          fc2_b(1, 1) {}

    std::vector<Mat<T>*> tensors() {
        std::vector<Mat<T>*> out = gru.tensors();
        out.insert(out.end(), {&fc1_w, &fc1_b, &fc2_w, &fc2_b});
        return out;
    }
    std::vector<const Mat<T>*> tensors() const {
        std::vector<const Mat<T>*> out = gru.tensors();
        out.insert(out.end(), {&fc1_w, &fc1_b, &fc2_w, &fc2_b});
        return out;
    }

    template <typename U>
    ScModelT<U> cast() const {
        ScModelT<U> out(gru.input_dim, gru.hidden_dim, fc1_w.rows);
        auto src = tensors();
        auto dst = out.tensors();
        for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
        return out;
    }
};

/// Multi-channel VAD: features of all four channels are concatenated
/// frame-wise before a shared GRU(160 -> 16); the pooled representation
/// feeds four channel-specific FC layers and one shared classifier.
template <typename T>
struct McModelT {
    GruParams<T> gru;
    std::array<Mat<T>, 4> ch_w;
    std::array<Mat<T>, 4> ch_b;
    Mat<T> cls_w, cls_b;

    McModelT() = default;
    McModelT(int input_dim, int hidden_dim, int fc_dim) : gru(input_dim, hidden_dim) {
        for (int c = 0; c < 4; ++c) {
            ch_w[c] = Mat<T>(fc_dim, hidden_dim);
            ch_b[c] = Mat<T>(fc_dim, 1);
        }
        cls_w = Mat<T>(1, fc_dim);
        cls_b = Mat<T>(1, 1);
    }

    std::vector<Mat<T>*> tensors() {
        std::vector<Mat<T>*> out = gru.tensors();
        for (int c = 0; c < 4; ++c) out.push_back(&ch_w[c]);
        for (int c = 0; c < 4; ++c) out.push_back(&ch_b[c]);
        out.push_back(&cls_w);
        out.push_back(&cls_b);
        return out;
    }
    std::vector<const Mat<T>*> tensors() const {
        std::vector<const Mat<T>*> out = gru.tensors();
        for (int c = 0; c < 4; ++c) out.push_back(&ch_w[c]);
        for (int c = 0; c < 4; ++c) out.push_back(&ch_b[c]);
        out.push_back(&cls_w);
        out.push_back(&cls_b);
        return out;
    }

    template <typename U>
    McModelT<U> cast() const {
        McModelT<U> out(gru.input_dim, gru.hidden_dim, cls_w.cols);
        auto src = tensors();
        auto dst = out.tensors();
        for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
        return out;
    }
};

using ScModel = ScModelT<float>;
using McModel = McModelT<float>;

ScModel init_sc_model(Rng& rng, int input_dim = 40, int hidden_dim = 64, int fc_dim = 16);
McModel init_mc_model(Rng& rng, int input_dim = 160, int hidden_dim = 16, int fc_dim = 16);

/// FeatureBlock (mel x frames) transposed into a GRU input sequence
/// (frames x mel).
template <typename T>
Mat<T> to_sequence(const FeatureBlock& block) {
    Mat<T> seq(block.n_frames, block.n_mels);
    for (int t = 0; t < block.n_frames; ++t)
        for (int m = 0; m < block.n_mels; ++m) seq.at(t, m) = static_cast<T>(block.at(m, t));
    return seq;
}

/// Frame-wise concatenation of the four channel blocks (frames x 4*mel),
/// channel order as given.
template <typename T>
Mat<T> to_concat_sequence(const std::array<FeatureBlock, 4>& blocks) {
    const int frames = blocks[0].n_frames;
    const int mels = blocks[0].n_mels;
    Mat<T> seq(frames, 4 * mels);
    for (int c = 0; c < 4; ++c)
        for (int t = 0; t < frames; ++t)
            for (int m = 0; m < mels; ++m)
                seq.at(t, c * mels + m) = static_cast<T>(blocks[c].at(m, t));
    return seq;
}

template <typename T>
struct ScCache {
    GruCache<T> gru;
    std::vector<T> pooled, fc1_pre, fc1_out;
    T prob = T(0);
};

template <typename T>
struct McCache {
    GruCache<T> gru;
    std::vector<T> pooled;
    std::array<std::vector<T>, 4> ch_pre, ch_out;
    std::array<T, 4> probs{};
};

/// One channel's sequence through the SC stack. Pass cache to enable
/// backward.
template <typename T>
T sc_forward_seq(const ScModelT<T>& m, const Mat<T>& seq, ScCache<T>* cache = nullptr);

template <typename T>
void sc_backward_seq(const ScModelT<T>& m, const ScCache<T>& cache, T d_prob,
                     ScModelT<T>& grads);

template <typename T>
std::array<T, 4> mc_forward_seq(const McModelT<T>& m, const Mat<T>& seq,
                                McCache<T>* cache = nullptr);

template <typename T>
void mc_backward_seq(const McModelT<T>& m, const McCache<T>& cache,
                     const std::array<T, 4>& d_probs, McModelT<T>& grads);

/// Per-channel activity posteriors on one 1 s window.
std::array<float, 4> sc_forward(const ScModel& m, const std::array<FeatureBlock, 4>& blocks);
std::array<float, 4> mc_forward(const McModel& m, const std::array<FeatureBlock, 4>& blocks);

struct FusionConfig {
    double alpha = 0.75;  // weight on the MC posterior
    double threshold = 0.5;
};

struct FuseResult {
    std::array<float, 4> prob{};
    std::array<std::uint8_t, 4> active{};
};

/// p = alpha * p_mc + (1 - alpha) * p_sc, decision at the threshold.
FuseResult fuse(const std::array<float, 4>& p_sc, const std::array<float, 4>& p_mc,
                const FusionConfig& cfg);

/// Channel-shuffle augmentation: position k of the output takes original
/// channel perm[k], labels move consistently.
void permute_example(std::array<FeatureBlock, 4>& blocks, std::array<std::uint8_t, 4>& labels,
                     const std::array<int, 4>& perm);

enum class ModelKind : std::uint32_t { sc = 1, mc = 2, energy = 3 };

struct TrainMeta {
    std::uint64_t seed = 0;
    std::uint32_t epochs = 0;
    std::uint64_t manifest_hash = 0;
};

/// Versioned binary container. Holds both the best-on-validation and the
/// final parameters; loading validates the front-end config hash.
struct Checkpoint {
    ModelKind kind = ModelKind::sc;
    std::uint64_t fe_hash = 0;
    TrainMeta meta;
    std::vector<MatF> best;
    std::vector<MatF> final_params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path, const FrontEndConfig& expected);

ScModel sc_from_checkpoint(const Checkpoint& ckpt, bool use_best = true);
McModel mc_from_checkpoint(const Checkpoint& ckpt, bool use_best = true);
std::vector<MatF> snapshot_tensors(std::span<const MatF* const> tensors);

struct TrainConfig {
    int batch_windows = 32;
    int epochs = 30;
    double lr = 1e-3;  // initial; halves every lr_half_life_epochs when set
    int lr_half_life_epochs = 0;
    double weight_decay = 0.01;
    double grad_clip_norm = 5.0;
    double val_fraction = 0.05;
    std::optional<bool> augment;  // default: on for MC, off for SC
};

struct TrainLogEntry {
    int epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<TrainLogEntry> log;
    int best_epoch = -1;
};

/// Featurized training window (all four channels plus labels).
struct WindowExample {
    std::array<FeatureBlock, 4> blocks;
    std::array<std::uint8_t, 4> labels{};
    int segment_index = 0;
    int window_index = 0;
};

/// Featurizes every 1 s window of every manifest segment.
std::vector<WindowExample> load_window_examples(const CorpusManifest& manifest,
                                                const FrontEndConfig& fe, const MatD& mel);

/// BCE training with AdamW; deterministic given the seed (single worker).
TrainResult train_model(ModelKind kind, const CorpusManifest& manifest,
                        const FrontEndConfig& fe, const TrainConfig& cfg, std::uint64_t seed);

void save_train_log(const std::string& path, std::span<const TrainLogEntry> log);

/// Inference over a whole segment with any combination of models; fused
/// when both are present.
struct Predictor {
    const ScModel* sc = nullptr;
    const McModel* mc = nullptr;
    FusionConfig fusion;
};

ActivityGrid predict_segment(const Predictor& pred, const AudioBuffer& audio,
                             const FrontEndConfig& fe, const MatD& mel,
                             MatF* probs_out = nullptr);

struct GradCheckCase {
    std::string name;
    double max_rel_err = 0.0;
};

/// Finite-difference verification of every backward pass (GRU, FC, BCE,
/// full SC and MC models at toy dims) in 64-bit mode.
std::vector<GradCheckCase> run_model_grad_checks(std::uint64_t seed);

}  // namespace mpvad
