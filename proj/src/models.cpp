#include "mpvad/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <utility>
#include <numeric>

#include <json.hpp>

using nlohmann::json;

namespace mpvad {

ScModel init_sc_model(Rng& rng, int input_dim, int hidden_dim, int fc_dim) {
    ScModel m(input_dim, hidden_dim, fc_dim);
    m.gru = init_gru<float>(input_dim, hidden_dim, rng);
    init_uniform(m.fc1_w, hidden_dim, rng);
    init_uniform(m.fc2_w, fc_dim, rng);
    return m;
}

McModel init_mc_model(Rng& rng, int input_dim, int hidden_dim, int fc_dim) {
    McModel m(input_dim, hidden_dim, fc_dim);
    m.gru = init_gru<float>(input_dim, hidden_dim, rng);
    for (int c = 0; c < 4; ++c) init_uniform(m.ch_w[c], hidden_dim, rng);
    init_uniform(m.cls_w, fc_dim, rng);
    return m;
}

template <typename T>
T sc_forward_seq(const ScModelT<T>& m, const Mat<T>& seq, ScCache<T>* cache) {
    GruCache<T>* gc = cache ? &cache->gru : nullptr;
    const Mat<T> states = gru_forward(m.gru, seq, {}, gc);

    const int H = m.gru.hidden_dim;
    std::vector<T> pooled(H, T(0));
    for (int t = 0; t < states.rows; ++t) {
        const T* row = states.row(t);
        for (int i = 0; i < H; ++i) pooled[i] += row[i];
    }
    const T inv_steps = T(1) / static_cast<T>(states.rows);
    for (T& x : pooled) x *= inv_steps;

    std::vector<T> fc1_out(m.fc1_w.rows);
    fc_forward(m.fc1_w, m.fc1_b, pooled.data(), fc1_out.data());
    for (T& x : fc1_out) x = std::tanh(x);

    T logit;
    fc_forward(m.fc2_w, m.fc2_b, fc1_out.data(), &logit);
    const T prob = sigmoid(logit);

    if (cache) {
        cache->pooled = std::move(pooled);
        cache->fc1_out = std::move(fc1_out);
        cache->prob = prob;
    }
    return prob;
}

template <typename T>
void sc_backward_seq(const ScModelT<T>& m, const ScCache<T>& cache, T d_prob,
                     ScModelT<T>& grads) {
    const T p = cache.prob;
    const T d_logit = d_prob * p * (T(1) - p);

    std::vector<T> d_fc1_out(m.fc1_w.rows, T(0));
    fc_backward(m.fc2_w, cache.fc1_out.data(), &d_logit, grads.fc2_w, grads.fc2_b,
                d_fc1_out.data());
    for (int i = 0; i < m.fc1_w.rows; ++i)
        d_fc1_out[i] *= T(1) - cache.fc1_out[i] * cache.fc1_out[i];

    std::vector<T> d_pooled(m.gru.hidden_dim, T(0));
    fc_backward(m.fc1_w, cache.pooled.data(), d_fc1_out.data(), grads.fc1_w, grads.fc1_b,
                d_pooled.data());

    const int steps = cache.gru.x.rows;
    Mat<T> d_states(steps, m.gru.hidden_dim);
    const T inv_steps = T(1) / static_cast<T>(steps);
    for (int t = 0; t < steps; ++t) {
        T* row = d_states.row(t);
        for (int i = 0; i < m.gru.hidden_dim; ++i) row[i] = d_pooled[i] * inv_steps;
    }
    gru_backward(m.gru, cache.gru, d_states, grads.gru);
}

template <typename T>
std::array<T, 4> mc_forward_seq(const McModelT<T>& m, const Mat<T>& seq, McCache<T>* cache) {
    GruCache<T>* gc = cache ? &cache->gru : nullptr;
    const Mat<T> states = gru_forward(m.gru, seq, {}, gc);

    const int H = m.gru.hidden_dim;
    std::vector<T> pooled(H, T(0));
    for (int t = 0; t < states.rows; ++t) {
        const T* row = states.row(t);
        for (int i = 0; i < H; ++i) pooled[i] += row[i];
    }
    const T inv_steps = T(1) / static_cast<T>(states.rows);
    for (T& x : pooled) x *= inv_steps;

    std::array<T, 4> probs{};
    for (int c = 0; c < 4; ++c) {
        std::vector<T> out(m.ch_w[c].rows);
        fc_forward(m.ch_w[c], m.ch_b[c], pooled.data(), out.data());
        for (T& x : out) x = std::tanh(x);
        T logit;
        fc_forward(m.cls_w, m.cls_b, out.data(), &logit);
        probs[c] = sigmoid(logit);
        if (cache) cache->ch_out[c] = std::move(out);
    }
    if (cache) {
        cache->pooled = std::move(pooled);
        cache->probs = probs;
    }
    return probs;
}

template <typename T>
void mc_backward_seq(const McModelT<T>& m, const McCache<T>& cache,
                     const std::array<T, 4>& d_probs, McModelT<T>& grads) {
    std::vector<T> d_pooled(m.gru.hidden_dim, T(0));
    for (int c = 0; c < 4; ++c) {
        const T p = cache.probs[c];
        const T d_logit = d_probs[c] * p * (T(1) - p);
        std::vector<T> d_out(m.ch_w[c].rows, T(0));
        fc_backward(m.cls_w, cache.ch_out[c].data(), &d_logit, grads.cls_w, grads.cls_b,
                    d_out.data());
        for (int i = 0; i < m.ch_w[c].rows; ++i)
            d_out[i] *= T(1) - cache.ch_out[c][i] * cache.ch_out[c][i];
        fc_backward(m.ch_w[c], cache.pooled.data(), d_out.data(), grads.ch_w[c], grads.ch_b[c],
                    d_pooled.data());
    }

    const int steps = cache.gru.x.rows;
    Mat<T> d_states(steps, m.gru.hidden_dim);
    const T inv_steps = T(1) / static_cast<T>(steps);
    for (int t = 0; t < steps; ++t) {
        T* row = d_states.row(t);
        for (int i = 0; i < m.gru.hidden_dim; ++i) row[i] = d_pooled[i] * inv_steps;
    }
    gru_backward(m.gru, cache.gru, d_states, grads.gru);
}

template float sc_forward_seq<float>(const ScModelT<float>&, const Mat<float>&, ScCache<float>*);
template double sc_forward_seq<double>(const ScModelT<double>&, const Mat<double>&,
                                       ScCache<double>*);
template void sc_backward_seq<float>(const ScModelT<float>&, const ScCache<float>&, float,
                                     ScModelT<float>&);
template void sc_backward_seq<double>(const ScModelT<double>&, const ScCache<double>&, double,
                                      ScModelT<double>&);
template std::array<float, 4> mc_forward_seq<float>(const McModelT<float>&, const Mat<float>&,
                                                    McCache<float>*);
template std::array<double, 4> mc_forward_seq<double>(const McModelT<double>&,
                                                      const Mat<double>&, McCache<double>*);
template void mc_backward_seq<float>(const McModelT<float>&, const McCache<float>&,
                                     const std::array<float, 4>&, McModelT<float>&);
template void mc_backward_seq<double>(const McModelT<double>&, const McCache<double>&,
                                      const std::array<double, 4>&, McModelT<double>&);

std::array<float, 4> sc_forward(const ScModel& m, const std::array<FeatureBlock, 4>& blocks) {
    std::array<float, 4> probs{};
    for (int c = 0; c < 4; ++c)
        probs[c] = sc_forward_seq<float>(m, to_sequence<float>(blocks[c]), nullptr);
    return probs;
}

std::array<float, 4> mc_forward(const McModel& m, const std::array<FeatureBlock, 4>& blocks) {
    return mc_forward_seq<float>(m, to_concat_sequence<float>(blocks), nullptr);
}

FuseResult fuse(const std::array<float, 4>& p_sc, const std::array<float, 4>& p_mc,
                const FusionConfig& cfg) {
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw Error("fusion alpha must be in [0, 1]");
    FuseResult out;
    for (int c = 0; c < 4; ++c) {
        const double p = cfg.alpha * p_mc[c] + (1.0 - cfg.alpha) * p_sc[c];
        out.prob[c] = static_cast<float>(p);
        out.active[c] = p >= cfg.threshold ? 1 : 0;
    }
    return out;
}

void permute_example(std::array<FeatureBlock, 4>& blocks, std::array<std::uint8_t, 4>& labels,
                     const std::array<int, 4>& perm) {
    std::array<bool, 4> seen{};
    for (int k : perm) {
        if (k < 0 || k > 3 || seen[k]) throw Error("invalid channel permutation");
        seen[k] = true;
    }
    std::array<FeatureBlock, 4> b = blocks;
    std::array<std::uint8_t, 4> l = labels;
    for (int k = 0; k < 4; ++k) {
        blocks[k] = std::move(b[perm[k]]);
        labels[k] = l[perm[k]];
    }
}

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'P', 'V', 'D'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct BinWriter {
    std::ofstream f;
    explicit BinWriter(const std::string& path) : f(path, std::ios::binary | std::ios::trunc) {
        if (!f) throw IoError("cannot open for writing: " + path);
    }
    void bytes(const void* p, std::size_t n) {
        f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
};

struct BinReader {
    std::string data;
    std::size_t pos = 0;
    std::string path;
    explicit BinReader(const std::string& p) : path(p) {
        std::ifstream f(p, std::ios::binary);
        if (!f) throw IoError("cannot open checkpoint: " + p);
        data.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }
    void bytes(void* out, std::size_t n) {
        if (pos + n > data.size()) throw FormatError("corrupt or truncated checkpoint: " + path);
        std::memcpy(out, data.data() + pos, n);
        pos += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
};

void write_blob(BinWriter& w, const std::vector<MatF>& tensors) {
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const MatF& t : tensors) {
        w.u32(static_cast<std::uint32_t>(t.rows));
        w.u32(static_cast<std::uint32_t>(t.cols));
        w.bytes(t.v.data(), t.v.size() * sizeof(float));
    }
}

std::vector<MatF> read_blob(BinReader& r) {
    const std::uint32_t n = r.u32();
    if (n > 4096) throw FormatError("corrupt checkpoint (tensor count): " + r.path);
    std::vector<MatF> tensors;
    tensors.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        if (rows > (1u << 20) || cols > (1u << 20))
            throw FormatError("corrupt checkpoint (tensor shape): " + r.path);
        MatF t(static_cast<int>(rows), static_cast<int>(cols));
        r.bytes(t.v.data(), t.v.size() * sizeof(float));
        tensors.push_back(std::move(t));
    }
    return tensors;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    BinWriter w(path);
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(ckpt.kind));
    w.u64(ckpt.fe_hash);
    w.u64(ckpt.meta.seed);
    w.u32(ckpt.meta.epochs);
    w.u64(ckpt.meta.manifest_hash);
    write_blob(w, ckpt.best);
    write_blob(w, ckpt.final_params);
    if (!w.f) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path, const FrontEndConfig& expected) {
    BinReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError("not a checkpoint file: " + path);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " +
                          path);
    Checkpoint ckpt;
    ckpt.kind = static_cast<ModelKind>(r.u32());
    ckpt.fe_hash = r.u64();
    if (ckpt.fe_hash != expected.hash())
        throw FormatError(
            "checkpoint was trained with a different front-end config (hash mismatch): " + path);
    ckpt.meta.seed = r.u64();
    ckpt.meta.epochs = r.u32();
    ckpt.meta.manifest_hash = r.u64();
    ckpt.best = read_blob(r);
    ckpt.final_params = read_blob(r);
    return ckpt;
}

std::vector<MatF> snapshot_tensors(std::span<const MatF* const> tensors) {
    std::vector<MatF> out;
    out.reserve(tensors.size());
    for (const MatF* t : tensors) out.push_back(*t);
    return out;
}

namespace {

template <typename Model>
void load_tensors_into(Model& model, const std::vector<MatF>& blob, const char* what) {
    auto dst = model.tensors();
    if (blob.size() != dst.size())
        throw FormatError(std::string(what) + ": checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (blob[i].rows != dst[i]->rows || blob[i].cols != dst[i]->cols)
            throw FormatError(std::string(what) + ": checkpoint tensor shape mismatch");
        *dst[i] = blob[i];
    }
}

}  // namespace

ScModel sc_from_checkpoint(const Checkpoint& ckpt, bool use_best) {
    if (ckpt.kind != ModelKind::sc) throw FormatError("checkpoint does not hold an SC model");
    const std::vector<MatF>& blob = use_best ? ckpt.best : ckpt.final_params;
    if (blob.size() != 13) throw FormatError("SC checkpoint has wrong tensor count");
    const int hidden = blob[0].rows, input = blob[0].cols, fc_dim = blob[9].rows;
    ScModel m(input, hidden, fc_dim);
    load_tensors_into(m, blob, "sc");
    return m;
}

McModel mc_from_checkpoint(const Checkpoint& ckpt, bool use_best) {
    if (ckpt.kind != ModelKind::mc) throw FormatError("checkpoint does not hold an MC model");
    const std::vector<MatF>& blob = use_best ? ckpt.best : ckpt.final_params;
    if (blob.size() != 19) throw FormatError("MC checkpoint has wrong tensor count");
    const int hidden = blob[0].rows, input = blob[0].cols, fc_dim = blob[9].rows;
    McModel m(input, hidden, fc_dim);
    load_tensors_into(m, blob, "mc");
    return m;
}

std::vector<WindowExample> load_window_examples(const CorpusManifest& manifest,
                                                const FrontEndConfig& fe, const MatD& mel) {
    std::vector<WindowExample> examples;
    const int win = fe.window_samples();
    for (std::size_t s = 0; s < manifest.entries.size(); ++s) {
        const CorpusEntry& entry = manifest.entries[s];
        const AudioBuffer audio = read_wav(manifest.resolve(entry.wav_path));
        if (audio.num_channels() != 4)
            throw FormatError("corpus segment is not 4-channel: " + entry.wav_path);
        const ActivityGrid labels = load_labels(manifest.resolve(entry.labels_path));
        const int n_windows =
            std::min<int>(labels.n_windows, static_cast<int>(audio.num_samples()) / win);
        for (int w = 0; w < n_windows; ++w) {
            WindowExample ex;
            ex.segment_index = static_cast<int>(s);
            ex.window_index = w;
            std::array<std::span<const float>, 4> spans;
            for (int c = 0; c < 4; ++c)
                spans[c] = std::span<const float>(audio.channels[c].data() + w * win, win);
            ex.blocks = featurize_window(spans, fe, mel);
            for (int c = 0; c < 4; ++c) ex.labels[c] = labels.at(c, w);
            examples.push_back(std::move(ex));
        }
    }
    return examples;
}

namespace {

double bce_term(double p, double y, double inv_terms, double* d_prob) {
    const double pc = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
    if (d_prob) {
        const bool clamped = p < kBceClamp || p > 1.0 - kBceClamp;
        *d_prob = clamped ? 0.0 : (pc - y) / (pc * (1.0 - pc)) * inv_terms;
    }
    return -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
}

std::array<int, 4> random_permutation(Rng& rng) {
    std::array<int, 4> perm = {0, 1, 2, 3};
    for (int i = 3; i > 0; --i)
        std::swap(perm[i], perm[static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
    return perm;
}

struct EvalStats {
    double loss_sum = 0.0;
    std::int64_t terms = 0;
    std::int64_t correct = 0;
    double mean_loss() const { return terms ? loss_sum / terms : 0.0; }
    double accuracy() const { return terms ? static_cast<double>(correct) / terms : 0.0; }
};

}  // namespace

TrainResult train_model(ModelKind kind, const CorpusManifest& manifest,
                        const FrontEndConfig& fe, const TrainConfig& cfg, std::uint64_t seed) {
    if (kind != ModelKind::sc && kind != ModelKind::mc)
        throw Error("train_model handles sc and mc kinds only");
    if (manifest.entries.empty()) throw Error("cannot train on an empty manifest");

    const MatD mel = mel_matrix(fe);
    const std::vector<WindowExample> examples = load_window_examples(manifest, fe, mel);

    // Validation split: the last val_fraction of manifest segments.
    const int n_segments = static_cast<int>(manifest.entries.size());
    const int n_val_segments =
        n_segments >= 2
            ? std::max(1, static_cast<int>(std::llround(cfg.val_fraction * n_segments)))
            : 0;
    const int first_val_segment = n_segments - n_val_segments;
    std::vector<int> train_windows, val_windows;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].segment_index >= first_val_segment)
            val_windows.push_back(static_cast<int>(i));
        else
            train_windows.push_back(static_cast<int>(i));
    }
    if (train_windows.empty()) throw Error("no training windows after validation split");

    const bool augment = cfg.augment.value_or(kind == ModelKind::mc);
    Rng rng(derive_seed(seed, 0x7261696eull));  // train stream
    Rng init_rng(derive_seed(seed, 0x696e6974ull));

    ScModel sc, sc_grads;
    McModel mc, mc_grads;
    std::vector<MatF*> params, grads;
    if (kind == ModelKind::sc) {
        sc = init_sc_model(init_rng);
        sc_grads = ScModel(sc.gru.input_dim, sc.gru.hidden_dim, sc.fc1_w.rows);
        params = sc.tensors();
        grads = sc_grads.tensors();
    } else {
        mc = init_mc_model(init_rng);
        mc_grads = McModel(mc.gru.input_dim, mc.gru.hidden_dim, mc.cls_w.cols);
        params = mc.tensors();
        grads = mc_grads.tensors();
    }
    const std::vector<const MatF*> const_grads(grads.begin(), grads.end());

    AdamW<float> opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;

    const auto eval_window = [&](const WindowExample& ex, EvalStats& stats) {
        std::array<float, 4> probs;
        if (kind == ModelKind::sc)
            probs = sc_forward(sc, ex.blocks);
        else
            probs = mc_forward(mc, ex.blocks);
        for (int c = 0; c < 4; ++c) {
            stats.loss_sum += bce_term(probs[c], ex.labels[c], 0.0, nullptr);
            stats.correct += ((probs[c] >= 0.5f ? 1 : 0) == ex.labels[c]) ? 1 : 0;
            ++stats.terms;
        }
    };

    TrainResult result;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<MatF> best_snapshot;
    int best_epoch = -1;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.lr_half_life_epochs > 0)
            opt.lr = cfg.lr * std::pow(0.5, static_cast<double>(epoch) / cfg.lr_half_life_epochs);

        // Seeded shuffle of training windows.
        for (int i = static_cast<int>(train_windows.size()) - 1; i > 0; --i)
            std::swap(train_windows[i],
                      train_windows[rng.below(static_cast<std::uint64_t>(i + 1))]);

        EvalStats train_stats;
        for (std::size_t start = 0; start < train_windows.size();
             start += static_cast<std::size_t>(cfg.batch_windows)) {
            const std::size_t end =
                std::min(train_windows.size(), start + static_cast<std::size_t>(cfg.batch_windows));
            const double inv_terms = 1.0 / (4.0 * static_cast<double>(end - start));
            for (MatF* g : grads) g->fill(0.0f);

            for (std::size_t b = start; b < end; ++b) {
                const WindowExample& stored = examples[train_windows[b]];
                std::array<FeatureBlock, 4> blocks;
                std::array<std::uint8_t, 4> labels = stored.labels;
                if (augment) {
                    blocks = stored.blocks;
                    permute_example(blocks, labels, random_permutation(rng));
                }
                const std::array<FeatureBlock, 4>& use_blocks =
                    augment ? blocks : stored.blocks;

                if (kind == ModelKind::sc) {
                    for (int c = 0; c < 4; ++c) {
                        ScCache<float> cache;
                        const float p =
                            sc_forward_seq(sc, to_sequence<float>(use_blocks[c]), &cache);
                        double d_prob;
                        train_stats.loss_sum += bce_term(p, labels[c], inv_terms, &d_prob);
                        train_stats.correct +=
                            ((p >= 0.5f ? 1 : 0) == labels[c]) ? 1 : 0;
                        ++train_stats.terms;
                        sc_backward_seq(sc, cache, static_cast<float>(d_prob), sc_grads);
                    }
                } else {
                    McCache<float> cache;
                    const std::array<float, 4> probs =
                        mc_forward_seq(mc, to_concat_sequence<float>(use_blocks), &cache);
                    std::array<float, 4> d_probs{};
                    for (int c = 0; c < 4; ++c) {
                        double d_prob;
                        train_stats.loss_sum += bce_term(probs[c], labels[c], inv_terms, &d_prob);
                        train_stats.correct +=
                            ((probs[c] >= 0.5f ? 1 : 0) == labels[c]) ? 1 : 0;
                        ++train_stats.terms;
                        d_probs[c] = static_cast<float>(d_prob);
                    }
                    mc_backward_seq(mc, cache, d_probs, mc_grads);
                }
            }

            clip_grad_norm<float>(grads, cfg.grad_clip_norm);
            opt.step(params, const_grads);
        }

        if (!std::isfinite(train_stats.loss_sum))
            throw Error("non-finite training loss at epoch " + std::to_string(epoch) +
                        "; aborting");

        result.log.push_back(
            {epoch, "train", train_stats.mean_loss(), train_stats.accuracy()});

        if (!val_windows.empty()) {
            EvalStats val_stats;
            for (int idx : val_windows) eval_window(examples[idx], val_stats);
            result.log.push_back({epoch, "val", val_stats.mean_loss(), val_stats.accuracy()});
            if (val_stats.mean_loss() < best_val_loss) {
                best_val_loss = val_stats.mean_loss();
                best_snapshot = snapshot_tensors(
                    std::vector<const MatF*>(params.begin(), params.end()));
                best_epoch = epoch;
            }
        }
    }

    Checkpoint ckpt;
    ckpt.kind = kind;
    ckpt.fe_hash = fe.hash();
    ckpt.meta.seed = seed;
    ckpt.meta.epochs = static_cast<std::uint32_t>(cfg.epochs);
    ckpt.final_params =
        snapshot_tensors(std::vector<const MatF*>(params.begin(), params.end()));
    ckpt.best = best_snapshot.empty() ? ckpt.final_params : std::move(best_snapshot);

    result.checkpoint = std::move(ckpt);
    result.best_epoch = best_epoch;
    return result;
}

void save_train_log(const std::string& path, std::span<const TrainLogEntry> log) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write training log: " + path);
    for (const TrainLogEntry& e : log) {
        json j{{"epoch", e.epoch}, {"split", e.split}, {"loss", e.loss},
               {"accuracy", e.accuracy}};
        f << j.dump() << '\n';
    }
}

std::vector<GradCheckCase> run_model_grad_checks(std::uint64_t seed) {
    std::vector<GradCheckCase> cases;
    Rng rng(seed);

    const auto fill_rand = [&](Mat<double>& m, double scale) {
        for (double& x : m.v) x = rng.uniform(-scale, scale);
    };

    {  // GRU: loss = sum_t w_t . h_t, params plus the input sequence checked
        const int input = 5, hidden = 4, steps = 6;
        GruParams<double> p = init_gru<double>(input, hidden, rng);
        fill_rand(p.bz, 0.3);
        fill_rand(p.br, 0.3);
        fill_rand(p.bh, 0.3);
        Mat<double> x(steps, input);
        fill_rand(x, 1.0);
        Mat<double> weights(steps, hidden);
        fill_rand(weights, 1.0);

        const auto loss = [&]() {
            const Mat<double> states = gru_forward(p, x, {});
            double acc = 0.0;
            for (std::size_t i = 0; i < states.v.size(); ++i) acc += states.v[i] * weights.v[i];
            return acc;
        };
        GruCache<double> cache;
        gru_forward(p, x, {}, &cache);
        GruParams<double> grads(input, hidden);
        Mat<double> dx;
        gru_backward(p, cache, weights, grads, &dx);

        std::vector<Mat<double>*> params = p.tensors();
        params.push_back(&x);
        std::vector<const Mat<double>*> analytic = std::as_const(grads).tensors();
        analytic.push_back(&dx);
        cases.push_back({"gru", grad_check(loss, params, analytic).max_rel_err});
    }

    {  // FC: loss = w . (Wx + b)
        const int rows = 4, cols = 6;
        Mat<double> w(rows, cols), b(rows, 1), x(cols, 1), mix(rows, 1);
        fill_rand(w, 1.0);
        fill_rand(b, 1.0);
        fill_rand(x, 1.0);
        fill_rand(mix, 1.0);
        const auto loss = [&]() {
            std::vector<double> y(rows);
            fc_forward(w, b, x.v.data(), y.data());
            double acc = 0.0;
            for (int i = 0; i < rows; ++i) acc += mix.v[i] * y[i];
            return acc;
        };
        std::vector<double> y(rows);
        fc_forward(w, b, x.v.data(), y.data());
        Mat<double> dw(rows, cols), db(rows, 1), dx(cols, 1);
        fc_backward(w, x.v.data(), mix.v.data(), dw, db, dx.v.data());
        std::vector<Mat<double>*> params = {&w, &b, &x};
        std::vector<const Mat<double>*> analytic = {&dw, &db, &dx};
        cases.push_back({"fc", grad_check(loss, params, analytic).max_rel_err});
    }

    {  // BCE on interior probabilities
        const int n = 8;
        Mat<double> p(n, 1), y(n, 1);
        for (int i = 0; i < n; ++i) {
            p.v[i] = rng.uniform(0.05, 0.95);
            y.v[i] = rng.below(2) ? 1.0 : 0.0;
        }
        const auto loss = [&]() {
            return bce_loss<double>(p.v, y.v);
        };
        Mat<double> dp(n, 1);
        bce_loss<double>(p.v, y.v, dp.v);
        std::vector<Mat<double>*> params = {&p};
        std::vector<const Mat<double>*> analytic = {&dp};
        cases.push_back({"bce", grad_check(loss, params, analytic).max_rel_err});
    }

    {  // full SC model at toy dims, BCE loss on one window
        const int input = 6, hidden = 5, fc_dim = 3, steps = 7;
        ScModelT<double> m(input, hidden, fc_dim);
        m.gru = init_gru<double>(input, hidden, rng);
        init_uniform(m.fc1_w, hidden, rng);
        init_uniform(m.fc2_w, fc_dim, rng);
        fill_rand(m.fc1_b, 0.2);
        fill_rand(m.fc2_b, 0.2);
        Mat<double> seq(steps, input);
        fill_rand(seq, 1.0);
        const std::vector<double> target = {1.0};

        const auto loss = [&]() {
            const double p = sc_forward_seq<double>(m, seq, nullptr);
            const std::vector<double> probs = {p};
            return bce_loss<double>(probs, target);
        };
        ScCache<double> cache;
        const double prob = sc_forward_seq<double>(m, seq, &cache);
        std::vector<double> probs = {prob}, d_probs(1);
        bce_loss<double>(probs, target, d_probs);
        ScModelT<double> grads(input, hidden, fc_dim);
        sc_backward_seq<double>(m, cache, d_probs[0], grads);
        std::vector<Mat<double>*> params = m.tensors();
        const std::vector<const Mat<double>*> analytic = std::as_const(grads).tensors();
        cases.push_back({"sc_model", grad_check(loss, params, analytic).max_rel_err});
    }

    {  // full MC model at toy dims, mean BCE over the four channels
        const int input = 12, hidden = 5, fc_dim = 4, steps = 7;
        McModelT<double> m(input, hidden, fc_dim);
        m.gru = init_gru<double>(input, hidden, rng);
        for (int c = 0; c < 4; ++c) {
            init_uniform(m.ch_w[c], hidden, rng);
            fill_rand(m.ch_b[c], 0.2);
        }
        init_uniform(m.cls_w, fc_dim, rng);
        fill_rand(m.cls_b, 0.2);
        Mat<double> seq(steps, input);
        fill_rand(seq, 1.0);
        std::vector<double> target(4);
        for (double& t : target) t = rng.below(2) ? 1.0 : 0.0;

        const auto loss = [&]() {
            const std::array<double, 4> p = mc_forward_seq<double>(m, seq, nullptr);
            const std::vector<double> probs(p.begin(), p.end());
            return bce_loss<double>(probs, target);
        };
        McCache<double> cache;
        const std::array<double, 4> p = mc_forward_seq<double>(m, seq, &cache);
        std::vector<double> probs(p.begin(), p.end()), d_p(4);
        bce_loss<double>(probs, target, d_p);
        McModelT<double> grads(input, hidden, fc_dim);
        mc_backward_seq<double>(m, cache, {d_p[0], d_p[1], d_p[2], d_p[3]}, grads);
        std::vector<Mat<double>*> params = m.tensors();
        const std::vector<const Mat<double>*> analytic = std::as_const(grads).tensors();
        cases.push_back({"mc_model", grad_check(loss, params, analytic).max_rel_err});
    }
    return cases;
}

ActivityGrid predict_segment(const Predictor& pred, const AudioBuffer& audio,
                             const FrontEndConfig& fe, const MatD& mel, MatF* probs_out) {
    if (!pred.sc && !pred.mc) throw Error("predict_segment needs at least one model");
    if (audio.num_channels() != 4) throw ShapeError("predict_segment expects 4 channels");

    const int win = fe.window_samples();
    const int n_windows = static_cast<int>(audio.num_samples()) / win;
    ActivityGrid grid(n_windows);
    if (probs_out) *probs_out = MatF(4, n_windows);

    for (int w = 0; w < n_windows; ++w) {
        std::array<std::span<const float>, 4> spans;
        for (int c = 0; c < 4; ++c)
            spans[c] = std::span<const float>(audio.channels[c].data() + w * win, win);
        const std::array<FeatureBlock, 4> blocks = featurize_window(spans, fe, mel);

        std::array<float, 4> probs{};
        if (pred.sc && pred.mc) {
            probs = fuse(sc_forward(*pred.sc, blocks), mc_forward(*pred.mc, blocks),
                         pred.fusion)
                        .prob;
        } else if (pred.sc) {
            probs = sc_forward(*pred.sc, blocks);
        } else {
            probs = mc_forward(*pred.mc, blocks);
        }
        for (int c = 0; c < 4; ++c) {
            grid.at(c, w) = probs[c] >= pred.fusion.threshold ? 1 : 0;
            if (probs_out) probs_out->at(c, w) = probs[c];
        }
    }
    return grid;
}

}  // namespace mpvad
