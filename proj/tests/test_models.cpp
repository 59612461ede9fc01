#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mpvad/models.hpp"

using namespace mpvad;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mpvad_test_models" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::array<FeatureBlock, 4> random_blocks(std::uint64_t seed) {
    Rng rng(seed);
    std::array<FeatureBlock, 4> blocks;
    for (auto& b : blocks) {
        b = FeatureBlock(40, 99);
        for (float& v : b.v) v = static_cast<float>(rng.uniform(-1.5, 1.5));
    }
    return blocks;
}

// Straight-line MC reference in double: no caching, plain loops following
// the layer definitions. Oracle for mc_forward.
std::array<double, 4> mc_reference(const McModelT<double>& m,
                                   const std::array<FeatureBlock, 4>& blocks) {
    const int frames = blocks[0].n_frames;
    const int mels = blocks[0].n_mels;
    const int H = m.gru.hidden_dim;

    std::vector<double> h(H, 0.0), pooled(H, 0.0);
    for (int t = 0; t < frames; ++t) {
        std::vector<double> x(4 * mels);
        for (int c = 0; c < 4; ++c)
            for (int k = 0; k < mels; ++k) x[c * mels + k] = blocks[c].at(k, t);
        std::vector<double> hn(H);
        for (int i = 0; i < H; ++i) {
            double az = m.gru.bz.v[i], ar = m.gru.br.v[i];
            for (int d = 0; d < 4 * mels; ++d) {
                az += m.gru.wz.at(i, d) * x[d];
                ar += m.gru.wr.at(i, d) * x[d];
            }
            for (int j = 0; j < H; ++j) {
                az += m.gru.uz.at(i, j) * h[j];
                ar += m.gru.ur.at(i, j) * h[j];
            }
            (void)ar;
            double ah = m.gru.bh.v[i];
            for (int d = 0; d < 4 * mels; ++d) ah += m.gru.wh.at(i, d) * x[d];
            for (int j = 0; j < H; ++j) {
                double arj = m.gru.br.v[j];
                for (int d = 0; d < 4 * mels; ++d) arj += m.gru.wr.at(j, d) * x[d];
                for (int k = 0; k < H; ++k) arj += m.gru.ur.at(j, k) * h[k];
                const double rj = 1.0 / (1.0 + std::exp(-arj));
                ah += m.gru.uh.at(i, j) * rj * h[j];
            }
            const double z = 1.0 / (1.0 + std::exp(-az));
            hn[i] = (1.0 - z) * h[i] + z * std::tanh(ah);
        }
        h = hn;
        for (int i = 0; i < H; ++i) pooled[i] += h[i];
    }
    for (double& v : pooled) v /= frames;

    std::array<double, 4> probs{};
    for (int c = 0; c < 4; ++c) {
        std::vector<double> u(m.ch_w[c].rows);
        for (int i = 0; i < m.ch_w[c].rows; ++i) {
            double acc = m.ch_b[c].v[i];
            for (int j = 0; j < H; ++j) acc += m.ch_w[c].at(i, j) * pooled[j];
            u[i] = std::tanh(acc);
        }
        double logit = m.cls_b.v[0];
        for (int i = 0; i < m.cls_w.cols; ++i) logit += m.cls_w.at(0, i) * u[i];
        probs[c] = 1.0 / (1.0 + std::exp(-logit));
    }
    return probs;
}

CorpusManifest tiny_corpus(const std::string& name, int segments, std::uint64_t seed,
                           double p_active = 0.6) {
    SimConfig cfg = condition_preset("setA");
    cfg.p_active = p_active;
    return generate_corpus(cfg, segments, temp_dir(name), seed, 2);
}

}  // namespace

TEST_CASE("sc channels are independent and share parameters") {
    Rng rng(5);
    const ScModel m = init_sc_model(rng);
    std::array<FeatureBlock, 4> blocks = random_blocks(17);

    SUBCASE("duplicated channel features give identical probabilities") {
        blocks[1] = blocks[0];
        const std::array<float, 4> p = sc_forward(m, blocks);
        CHECK(p[0] == p[1]);
    }
    SUBCASE("permuting input channels permutes outputs identically") {
        const std::array<float, 4> p = sc_forward(m, blocks);
        std::array<FeatureBlock, 4> permuted = {blocks[2], blocks[0], blocks[3], blocks[1]};
        const std::array<float, 4> q = sc_forward(m, permuted);
        CHECK(q[0] == p[2]);
        CHECK(q[1] == p[0]);
        CHECK(q[2] == p[3]);
        CHECK(q[3] == p[1]);
    }
    SUBCASE("zero weights produce sigma(0) = 0.5 everywhere") {
        ScModel zero(40, 64, 16);
        std::array<FeatureBlock, 4> flat;
        for (auto& b : flat) b = FeatureBlock(40, 99);
        for (float p : sc_forward(zero, flat)) CHECK(p == 0.5f);
    }
}

TEST_CASE("mc forward semantics") {
    Rng rng(6);
    const McModel m = init_mc_model(rng);

    SUBCASE("zero weights give 0.5 on all channels") {
        McModel zero(160, 16, 16);
        std::array<FeatureBlock, 4> flat;
        for (auto& b : flat) b = FeatureBlock(40, 99);
        for (float p : mc_forward(zero, flat)) CHECK(p == 0.5f);
    }
    SUBCASE("channel-specific FCs break symmetry on identical inputs") {
        std::array<FeatureBlock, 4> blocks = random_blocks(23);
        blocks[1] = blocks[0];
        blocks[2] = blocks[0];
        blocks[3] = blocks[0];
        const std::array<float, 4> p = mc_forward(m, blocks);
        bool any_differ = false;
        for (int c = 1; c < 4; ++c) any_differ = any_differ || (p[c] != p[0]);
        CHECK(any_differ);
    }
    SUBCASE("matches the straight-line reference within 1e-5") {
        Rng drng(61);
        McModelT<double> dm(160, 16, 16);
        dm.gru = init_gru<double>(160, 16, drng);
        for (int c = 0; c < 4; ++c) init_uniform(dm.ch_w[c], 16, drng);
        init_uniform(dm.cls_w, 16, drng);
        const std::array<FeatureBlock, 4> blocks = random_blocks(62);

        const std::array<double, 4> slow = mc_reference(dm, blocks);
        const std::array<double, 4> fast =
            mc_forward_seq<double>(dm, to_concat_sequence<double>(blocks), nullptr);
        for (int c = 0; c < 4; ++c) CHECK(std::abs(fast[c] - slow[c]) < 1e-5);
    }
}

TEST_CASE("fusion rule") {
    SUBCASE("alpha 0.75 arithmetic") {
        const FuseResult r =
            fuse({0.4f, 0.4f, 0.4f, 0.4f}, {0.8f, 0.8f, 0.8f, 0.8f}, {0.75, 0.5});
        for (int c = 0; c < 4; ++c) {
            CHECK(r.prob[c] == doctest::Approx(0.7f));
            CHECK(r.active[c] == 1);
        }
    }
    SUBCASE("endpoints reproduce the single models exactly") {
        const std::array<float, 4> sc = {0.1f, 0.6f, 0.3f, 0.9f};
        const std::array<float, 4> mc = {0.7f, 0.2f, 0.8f, 0.4f};
        CHECK(fuse(sc, mc, {1.0, 0.5}).prob == mc);
        CHECK(fuse(sc, mc, {0.0, 0.5}).prob == sc);
    }
    SUBCASE("fusion is monotone non-decreasing in each input") {
        Rng rng(9);
        for (int trial = 0; trial < 200; ++trial) {
            std::array<float, 4> sc, mc;
            for (int c = 0; c < 4; ++c) {
                sc[c] = static_cast<float>(rng.uniform());
                mc[c] = static_cast<float>(rng.uniform());
            }
            const FuseResult base = fuse(sc, mc, {0.75, 0.5});
            std::array<float, 4> sc_up = sc;
            const int c = static_cast<int>(rng.below(4));
            sc_up[c] = std::min(1.0f, sc_up[c] + 0.2f);
            const FuseResult bumped = fuse(sc_up, mc, {0.75, 0.5});
            CHECK(bumped.prob[c] >= base.prob[c]);
        }
    }
    SUBCASE("invalid alpha throws") {
        CHECK_THROWS_AS(fuse({}, {}, {1.5, 0.5}), Error);
    }
}

TEST_CASE("channel-shuffle augmentation") {
    std::array<FeatureBlock, 4> blocks = random_blocks(77);
    const std::array<FeatureBlock, 4> original = blocks;
    std::array<std::uint8_t, 4> labels = {0, 0, 1, 0};

    SUBCASE("identity permutation changes nothing") {
        permute_example(blocks, labels, {0, 1, 2, 3});
        for (int c = 0; c < 4; ++c) CHECK(blocks[c].v == original[c].v);
    }
    SUBCASE("labels follow their channel") {
        permute_example(blocks, labels, {2, 3, 0, 1});
        CHECK(labels[0] == 1);  // original channel 2's label moved to slot 0
        CHECK(blocks[0].v == original[2].v);
    }
    SUBCASE("a permutation followed by its inverse restores the original") {
        std::array<std::uint8_t, 4> l = {1, 0, 1, 0};
        permute_example(blocks, l, {1, 2, 3, 0});
        permute_example(blocks, l, {3, 0, 1, 2});  // inverse
        for (int c = 0; c < 4; ++c) CHECK(blocks[c].v == original[c].v);
        CHECK(l == std::array<std::uint8_t, 4>{1, 0, 1, 0});
    }
    SUBCASE("invalid permutations are rejected") {
        CHECK_THROWS_AS(permute_example(blocks, labels, {0, 0, 1, 2}), Error);
        CHECK_THROWS_AS(permute_example(blocks, labels, {0, 1, 2, 4}), Error);
    }
}

TEST_CASE("checkpoint round trip preserves outputs bit-exactly") {
    const FrontEndConfig fe;
    Rng rng(31);
    const ScModel sc = init_sc_model(rng);
    Checkpoint ckpt;
    ckpt.kind = ModelKind::sc;
    ckpt.fe_hash = fe.hash();
    ckpt.meta = {11, 3, 99};
    ckpt.best = snapshot_tensors(std::as_const(sc).tensors());
    ckpt.final_params = ckpt.best;

    const std::string path = temp_dir("ckpt") + "/sc.ckpt";
    save_checkpoint(path, ckpt);
    const Checkpoint loaded = load_checkpoint(path, fe);
    CHECK(loaded.meta.seed == 11);
    CHECK(loaded.meta.epochs == 3);
    CHECK(loaded.meta.manifest_hash == 99);
    const ScModel back = sc_from_checkpoint(loaded);

    for (int trial = 0; trial < 10; ++trial) {
        const std::array<FeatureBlock, 4> blocks = random_blocks(1000 + trial);
        const std::array<float, 4> a = sc_forward(sc, blocks);
        const std::array<float, 4> b = sc_forward(back, blocks);
        CHECK(a == b);  // bit-exact
    }
}

TEST_CASE("checkpoint rejects corruption and config mismatch") {
    const FrontEndConfig fe;
    Rng rng(32);
    const McModel mc = init_mc_model(rng);
    Checkpoint ckpt;
    ckpt.kind = ModelKind::mc;
    ckpt.fe_hash = fe.hash();
    ckpt.best = snapshot_tensors(std::as_const(mc).tensors());
    ckpt.final_params = ckpt.best;
    const std::string dir = temp_dir("ckpt_bad");
    const std::string path = dir + "/mc.ckpt";
    save_checkpoint(path, ckpt);

    SUBCASE("truncated file raises a format error, not a crash") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(dir + "/trunc.ckpt", std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(load_checkpoint(dir + "/trunc.ckpt", fe), FormatError);
    }
    SUBCASE("garbage magic is rejected") {
        std::ofstream out(dir + "/junk.ckpt", std::ios::binary | std::ios::trunc);
        out << "not a checkpoint at all";
        out.close();
        CHECK_THROWS_AS(load_checkpoint(dir + "/junk.ckpt", fe), FormatError);
    }
    SUBCASE("a different front-end config is refused") {
        FrontEndConfig other;
        other.n_mels = 39;
        CHECK_THROWS_AS(load_checkpoint(path, other), FormatError);
    }
    SUBCASE("wrong-kind extraction is refused") {
        const Checkpoint loaded = load_checkpoint(path, fe);
        CHECK_THROWS_AS(sc_from_checkpoint(loaded), FormatError);
    }
}

TEST_CASE("training runs, learns and is deterministic") {
    const FrontEndConfig fe;

    SUBCASE("one epoch on a two-segment corpus completes") {
        const CorpusManifest manifest = tiny_corpus("c2", 2, 41);
        TrainConfig cfg;
        cfg.epochs = 1;
        const TrainResult r = train_model(ModelKind::mc, manifest, fe, cfg, 1);
        CHECK(r.log.size() >= 1);
        CHECK(std::isfinite(r.log[0].loss));
    }

    SUBCASE("training loss decreases over three epochs on twenty segments") {
        const CorpusManifest manifest = tiny_corpus("c20", 20, 42);
        TrainConfig cfg;
        cfg.epochs = 3;
        const TrainResult r = train_model(ModelKind::mc, manifest, fe, cfg, 2);
        double loss0 = -1, loss2 = -1;
        for (const TrainLogEntry& e : r.log) {
            if (e.split != "train") continue;
            if (e.epoch == 0) loss0 = e.loss;
            if (e.epoch == 2) loss2 = e.loss;
        }
        REQUIRE(loss0 > 0);
        CHECK(loss2 < loss0);
    }

    SUBCASE("same seed and manifest give bit-identical checkpoints") {
        const CorpusManifest manifest = tiny_corpus("cdet", 3, 43);
        TrainConfig cfg;
        cfg.epochs = 2;
        const TrainResult a = train_model(ModelKind::mc, manifest, fe, cfg, 7);
        const TrainResult b = train_model(ModelKind::mc, manifest, fe, cfg, 7);
        REQUIRE(a.checkpoint.final_params.size() == b.checkpoint.final_params.size());
        for (std::size_t i = 0; i < a.checkpoint.final_params.size(); ++i)
            CHECK(a.checkpoint.final_params[i].v == b.checkpoint.final_params[i].v);

        const TrainResult c = train_model(ModelKind::mc, manifest, fe, cfg, 8);
        bool differs = false;
        for (std::size_t i = 0; i < c.checkpoint.final_params.size(); ++i)
            differs = differs || (a.checkpoint.final_params[i].v !=
                                  c.checkpoint.final_params[i].v);
        CHECK(differs);
    }

    SUBCASE("all-zero labels drive predictions below 0.1 within five epochs") {
        const CorpusManifest manifest = tiny_corpus("czero", 10, 44, /*p_active=*/0.0);
        TrainConfig cfg;
        cfg.epochs = 5;
        cfg.augment = false;
        const TrainResult r = train_model(ModelKind::mc, manifest, fe, cfg, 3);
        const McModel m = mc_from_checkpoint(r.checkpoint, /*use_best=*/false);

        const MatD mel = mel_matrix(fe);
        const std::vector<WindowExample> windows = load_window_examples(manifest, fe, mel);
        double mean_prob = 0.0;
        std::int64_t n = 0;
        for (const WindowExample& ex : windows) {
            for (float p : mc_forward(m, ex.blocks)) {
                mean_prob += p;
                ++n;
            }
        }
        mean_prob /= static_cast<double>(n);
        CHECK(mean_prob < 0.1);
    }

    SUBCASE("empty manifest is rejected") {
        CorpusManifest empty;
        TrainConfig cfg;
        CHECK_THROWS_AS(train_model(ModelKind::mc, empty, fe, cfg, 1), Error);
    }
}

TEST_CASE("gain invariance carries through to model decisions") {
    const FrontEndConfig fe;
    const MatD mel = mel_matrix(fe);
    Rng rng(55);
    const McModel mc = init_mc_model(rng);
    const ScModel sc = init_sc_model(rng);

    SimConfig cfg = condition_preset("setA");
    const SegmentPlan plan = build_segment_plan(cfg, 1717);
    const RenderResult rendered = render_segment(plan, prepare_sources(plan));
    const AudioBuffer& audio = rendered.segment.audio;

    Predictor pred{&sc, &mc, {0.75, 0.5}};
    MatF probs_base;
    predict_segment(pred, audio, fe, mel, &probs_base);

    for (double gain : {0.01, 10.0}) {
        AudioBuffer scaled = audio;
        for (int c = 0; c < 4; ++c)
            for (float& s : scaled.channels[c]) s = static_cast<float>(s * gain);
        MatF probs;
        const ActivityGrid grid = predict_segment(pred, scaled, fe, mel, &probs);
        float worst = 0.0f;
        for (std::size_t i = 0; i < probs.v.size(); ++i)
            worst = std::max(worst, std::abs(probs.v[i] - probs_base.v[i]));
        CHECK(worst <= 1e-4f);
        (void)grid;
    }
}
