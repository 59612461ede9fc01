#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>

#include "mpvad/fft.hpp"
#include "mpvad/rng.hpp"
#include "mpvad/sim.hpp"

using namespace mpvad;
namespace fs = std::filesystem;

namespace {

double rms_of(std::span<const float> x) {
    double acc = 0.0;
    for (float s : x) acc += static_cast<double>(s) * s;
    return std::sqrt(acc / std::max<std::size_t>(1, x.size()));
}

double band_energy_db(const std::vector<float>& x, double lo_hz, double hi_hz, int fs) {
    const int n = 1 << 15;
    Fft plan(n);
    std::vector<std::complex<double>> buf(n, {0.0, 0.0});
    for (int i = 0; i < n && i < static_cast<int>(x.size()); ++i) buf[i] = {x[i], 0.0};
    plan.transform(buf.data(), false);
    double energy = 1e-30;
    for (int k = 0; k <= n / 2; ++k) {
        const double f = static_cast<double>(k) * fs / n;
        if (f >= lo_hz && f < hi_hz) energy += std::norm(buf[k]);
    }
    return 10.0 * std::log10(energy);
}

std::string temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mpvad_test_sim" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

SegmentPlan minimal_plan() {
    SegmentPlan plan;
    plan.segment_id = "manual";
    plan.noise_enabled = false;
    for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) {
            plan.paths[j][i].gain = (j == i) ? 1.0 : 0.0;
            plan.paths[j][i].delay_s = 0.0;
            plan.paths[j][i].t60_s = 0.0;
        }
    return plan;
}

}  // namespace

TEST_CASE("synthetic utterance determinism and length") {
    const AudioBuffer a = gen_synthetic_utterance(2.0, 99);
    const AudioBuffer b = gen_synthetic_utterance(2.0, 99);
    REQUIRE(a.num_samples() == 32000);
    CHECK(a.channels[0] == b.channels[0]);

    const AudioBuffer c = gen_synthetic_utterance(2.0, 100);
    CHECK(a.channels[0] != c.channels[0]);
}

TEST_CASE("synthetic utterance has a speech-like long-term spectrum") {
    const AudioBuffer utt = gen_synthetic_utterance(4.0, 1234);
    const double low = band_energy_db(utt.channels[0], 100.0, 1000.0, 16000);
    const double high = band_energy_db(utt.channels[0], 6000.0, 8000.0, 16000);
    CHECK(low - high > 20.0);
}

TEST_CASE("plan activity probability endpoints") {
    SimConfig cfg = condition_preset("setA");
    cfg.p_active = 0.0;
    for (int s = 0; s < 10; ++s) {
        const SegmentPlan plan = build_segment_plan(cfg, 1000 + s);
        for (const ChannelPlan& ch : plan.channels) CHECK_FALSE(ch.active);
    }
    cfg.p_active = 1.0;
    for (int s = 0; s < 10; ++s) {
        const SegmentPlan plan = build_segment_plan(cfg, 2000 + s);
        for (const ChannelPlan& ch : plan.channels) {
            CHECK(ch.active);
            CHECK(ch.start_s >= 0.0);
            CHECK(ch.end_s > ch.start_s);
            CHECK(ch.end_s <= 20.0 + 1e-9);
        }
    }
}

TEST_CASE("segment-level activation follows the binomial law") {
    // binomial(4, 0.6): P(k=0) = 0.4^4 = 2.56%
    SimConfig cfg = condition_preset("setA");
    const int n = 10000;
    int zero_active = 0;
    for (int s = 0; s < n; ++s) {
        const SegmentPlan plan = build_segment_plan(cfg, derive_seed(777, s));
        int active = 0;
        for (const ChannelPlan& ch : plan.channels) active += ch.active;
        if (active == 0) ++zero_active;
    }
    const double fraction = static_cast<double>(zero_active) / n;
    CHECK(std::abs(fraction - 0.0256) < 0.005);
}

TEST_CASE("derive_paths geometry") {
    const LayoutConfig layout = LayoutConfig::semicircle();
    RoomConfig room;

    SUBCASE("t60 = 0 leaves pure gain+delay paths") {
        room.t60_s = 0.0;
        const PathMatrix paths = derive_paths(layout, room, 5);
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i) {
                CHECK_FALSE(paths[j][i].has_rir());
                CHECK(render_rir(paths[j][i], 16000).channels.empty());
            }
    }

    SUBCASE("1 m direct path delays by 2.915 ms, 47 samples at 16 kHz") {
        const PathMatrix paths = derive_paths(layout, room, 6);
        const double delay = paths[0][0].delay_s;
        CHECK(delay == doctest::Approx(1.0 / 343.0).epsilon(1e-9));
        CHECK(std::lround(delay * 16000.0) == 47);
    }

    SUBCASE("own path dominates every column of the default layout") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const PathMatrix paths = derive_paths(layout, room, seed);
            for (int i = 0; i < 4; ++i) {
                CHECK(paths[i][i].gain == doctest::Approx(1.0));
                for (int j = 0; j < 4; ++j)
                    if (j != i) CHECK(paths[j][i].gain < paths[i][i].gain);
            }
        }
    }

    SUBCASE("square layout also keeps diagonal dominance") {
        const LayoutConfig square = LayoutConfig::square();
        const PathMatrix paths = derive_paths(square, room, 9);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                if (j != i) CHECK(paths[j][i].gain < paths[i][i].gain);
    }
}

TEST_CASE("rir peak tap sits at the path delay and matches the DRR") {
    PathParams p;
    p.delay_s = 0.003;
    p.drr_db = 10.0;
    p.t60_s = 0.4;
    p.rir_seed = 31;
    const AudioBuffer rir = render_rir(p, 16000);
    REQUIRE_FALSE(rir.channels.empty());
    const std::vector<float>& h = rir.channels[0];

    std::size_t argmax = 0;
    for (std::size_t i = 1; i < h.size(); ++i)
        if (std::abs(h[i]) > std::abs(h[argmax])) argmax = i;
    CHECK(argmax == 48);  // round(0.003 * 16000)

    double direct = h[48] * h[48], tail = 0.0;
    for (std::size_t i = 49; i < h.size(); ++i) tail += static_cast<double>(h[i]) * h[i];
    CHECK(10.0 * std::log10(direct / tail) == doctest::Approx(10.0).epsilon(1e-6));
}

TEST_CASE("render with identity own path reproduces the source") {
    SegmentPlan plan = minimal_plan();
    plan.channels[0].active = true;
    plan.channels[0].source = {SourceRef::Kind::synth, 44, ""};
    plan.channels[0].start_s = 2.0;
    plan.channels[0].end_s = 10.0;
    plan.channels[0].target_rms_db = -25.0;

    const std::array<AudioBuffer, 4> sources = prepare_sources(plan);
    const RenderResult r = render_segment(plan, sources);

    REQUIRE(r.segment.audio.num_channels() == 4);
    REQUIRE(r.segment.audio.num_samples() == 320000);
    for (std::size_t k = 0; k < 320000; k += 11) {
        CHECK(r.segment.audio.channels[0][k] == doctest::Approx(sources[0].channels[0][k]));
        CHECK(r.segment.audio.channels[1][k] == 0.0f);
        CHECK(r.segment.audio.channels[2][k] == 0.0f);
        CHECK(r.segment.audio.channels[3][k] == 0.0f);
    }

    // RMS over the utterance interval matches the plan target
    const std::span<const float> interval(r.segment.audio.channels[0].data() + 32000, 128000);
    CHECK(20.0 * std::log10(rms_of(interval)) == doctest::Approx(-25.0).epsilon(1e-4));
}

TEST_CASE("mixing is linear in the sources when noise is disabled") {
    SimConfig cfg = condition_preset("setA");
    cfg.noise_enabled = false;
    cfg.p_active = 1.0;
    const SegmentPlan plan = build_segment_plan(cfg, 71);

    std::array<AudioBuffer, 4> a = prepare_sources(plan);
    std::array<AudioBuffer, 4> b = a;
    std::array<AudioBuffer, 4> sum = a;
    for (int c = 0; c < 4; ++c)
        for (std::size_t k = 0; k < b[c].num_samples(); ++k) {
            b[c].channels[0][k] *= 0.25f;  // keep the sum clip-free
            a[c].channels[0][k] *= 0.50f;
            sum[c].channels[0][k] = a[c].channels[0][k] + b[c].channels[0][k];
        }

    const RenderResult ra = render_segment(plan, a);
    const RenderResult rb = render_segment(plan, b);
    const RenderResult rsum = render_segment(plan, sum);
    for (int c = 0; c < 4; ++c)
        for (std::size_t k = 0; k < 320000; k += 37)
            CHECK(std::abs(ra.segment.audio.channels[c][k] + rb.segment.audio.channels[c][k] -
                           rsum.segment.audio.channels[c][k]) < 1e-6);
}

TEST_CASE("cross gain of -10 dB lands 10 dB below own-talk RMS") {
    SegmentPlan plan = minimal_plan();
    for (int c = 0; c < 2; ++c) {
        plan.channels[c].active = true;
        plan.channels[c].source = {SourceRef::Kind::synth, 50u + c, ""};
        plan.channels[c].start_s = 0.0;
        plan.channels[c].end_s = 20.0;
        plan.channels[c].target_rms_db = -25.0;
    }
    plan.paths[1][0].gain = std::pow(10.0, -10.0 / 20.0);  // talker 1 -> mic 0

    // render talker 1's contribution alone: cross-talk into mic 0, own into mic 1
    SegmentPlan solo = plan;
    solo.channels[0].active = false;
    solo.channels[0].start_s = solo.channels[0].end_s = 0.0;
    const std::array<AudioBuffer, 4> solo_sources = prepare_sources(solo);
    const RenderResult r = render_segment(solo, solo_sources);

    const double cross_rms = rms_of(r.segment.audio.channels[0]);
    const double own_rms = rms_of(r.segment.audio.channels[1]);
    CHECK(20.0 * std::log10(cross_rms / own_rms) == doctest::Approx(-10.0).epsilon(0.01));
}

TEST_CASE("clipping is counted, not rejected") {
    SegmentPlan plan = minimal_plan();
    plan.channels[0].active = true;
    plan.channels[0].source = {SourceRef::Kind::synth, 61, ""};
    plan.channels[0].start_s = 0.0;
    plan.channels[0].end_s = 20.0;
    plan.channels[0].target_rms_db = -25.0;
    plan.channels[0].mic_gain_db = 40.0;  // drive it into the rails

    const std::array<AudioBuffer, 4> sources = prepare_sources(plan);
    const RenderResult r = render_segment(plan, sources);
    CHECK(r.clipped_samples[0] > 0);
    for (float s : r.segment.audio.channels[0]) {
        CHECK(s <= 1.0f);
        CHECK(s >= -1.0f);
    }
}

TEST_CASE("derive_labels applies the 200 ms overlap rule") {
    SegmentPlan plan = minimal_plan();

    SUBCASE("inactive channel gives an all-zero row") {
        const ActivityGrid grid = derive_labels(plan);
        for (int w = 0; w < 20; ++w) CHECK(grid.at(0, w) == 0);
    }

    SUBCASE("full-segment interval gives an all-one row") {
        plan.channels[2].active = true;
        plan.channels[2].source = {SourceRef::Kind::synth, 1, ""};
        plan.channels[2].start_s = 0.0;
        plan.channels[2].end_s = 20.0;
        const ActivityGrid grid = derive_labels(plan);
        for (int w = 0; w < 20; ++w) CHECK(grid.at(2, w) == 1);
    }

    SUBCASE("interval (1.9, 5.0): window 1 misses the 200 ms bar") {
        plan.channels[1].active = true;
        plan.channels[1].source = {SourceRef::Kind::synth, 1, ""};
        plan.channels[1].start_s = 1.9;
        plan.channels[1].end_s = 5.0;
        const ActivityGrid grid = derive_labels(plan);
        CHECK(grid.at(1, 0) == 0);
        CHECK(grid.at(1, 1) == 0);  // 100 ms overlap < 200 ms
        CHECK(grid.at(1, 2) == 1);
        CHECK(grid.at(1, 3) == 1);
        CHECK(grid.at(1, 4) == 1);
        CHECK(grid.at(1, 5) == 0);
    }

    SUBCASE("exactly 200 ms of overlap counts as active") {
        plan.channels[1].active = true;
        plan.channels[1].source = {SourceRef::Kind::synth, 1, ""};
        plan.channels[1].start_s = 1.8;
        plan.channels[1].end_s = 5.0;
        const ActivityGrid grid = derive_labels(plan);
        CHECK(grid.at(1, 1) == 1);
    }
}

TEST_CASE("active windows of the clean own component sit well above the noise floor") {
    SimConfig cfg = condition_preset("setA");
    for (std::uint64_t seed : {101u, 102u, 103u}) {
        const SegmentPlan plan = build_segment_plan(cfg, seed);
        const std::array<AudioBuffer, 4> sources = prepare_sources(plan);
        const AudioBuffer own = render_own_component(plan, sources);
        const ActivityGrid labels = derive_labels(plan);
        const double floor_rms = std::pow(10.0, plan.noise_floor_db / 20.0);
        for (int c = 0; c < 4; ++c)
            for (int w = 0; w < labels.n_windows; ++w) {
                if (!labels.at(c, w)) continue;
                const std::span<const float> win(own.channels[c].data() + w * 16000, 16000);
                CHECK(20.0 * std::log10(rms_of(win) / floor_rms) > 10.0);
            }
    }
}

TEST_CASE("plan and labels round trip through JSON") {
    SimConfig cfg = condition_preset("setB");
    const SegmentPlan plan = build_segment_plan(cfg, 909);
    const std::string dir = temp_dir("plan_roundtrip");
    save_plan(dir + "/p.json", plan);
    const SegmentPlan back = load_plan(dir + "/p.json");
    CHECK(back.seed == plan.seed);
    CHECK(back.noise_seed == plan.noise_seed);
    CHECK(back.condition == plan.condition);
    for (int c = 0; c < 4; ++c) {
        CHECK(back.channels[c].active == plan.channels[c].active);
        CHECK(back.channels[c].start_s == doctest::Approx(plan.channels[c].start_s));
        CHECK(back.channels[c].mic_gain_db == doctest::Approx(plan.channels[c].mic_gain_db));
    }
    for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) {
            CHECK(back.paths[j][i].gain == doctest::Approx(plan.paths[j][i].gain));
            CHECK(back.paths[j][i].rir_seed == plan.paths[j][i].rir_seed);
        }

    const ActivityGrid labels = derive_labels(plan);
    save_labels(dir + "/l.json", plan.segment_id, labels);
    const ActivityGrid lb = load_labels(dir + "/l.json");
    CHECK(lb.v == labels.v);

    // label grids depend only on the plan
    const ActivityGrid again = derive_labels(back);
    CHECK(again.v == labels.v);
}

TEST_CASE("generate_corpus writes a complete deterministic tree") {
    SimConfig cfg = condition_preset("setA");
    const std::string dir_a = temp_dir("corpus_a");
    const std::string dir_b = temp_dir("corpus_b");
    const CorpusManifest ma = generate_corpus(cfg, 3, dir_a, 7, 1);
    const CorpusManifest mb = generate_corpus(cfg, 3, dir_b, 7, 2);  // different thread count

    REQUIRE(ma.entries.size() == 3);
    for (const CorpusEntry& e : ma.entries) {
        CHECK(fs::exists(ma.resolve(e.wav_path)));
        CHECK(fs::exists(ma.resolve(e.plan_path)));
        CHECK(fs::exists(ma.resolve(e.labels_path)));
        const AudioBuffer audio = read_wav(ma.resolve(e.wav_path));
        CHECK(audio.num_channels() == 4);
        CHECK(audio.num_samples() == 320000);
    }

    // byte-identical across runs and thread counts
    for (std::size_t i = 0; i < ma.entries.size(); ++i) {
        const auto read_all = [](const std::string& p) {
            std::ifstream f(p, std::ios::binary);
            return std::string((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
        };
        CHECK(read_all(ma.resolve(ma.entries[i].wav_path)) ==
              read_all(mb.resolve(mb.entries[i].wav_path)));
        CHECK(read_all(ma.resolve(ma.entries[i].plan_path)) ==
              read_all(mb.resolve(mb.entries[i].plan_path)));
        CHECK(read_all(ma.resolve(ma.entries[i].labels_path)) ==
              read_all(mb.resolve(mb.entries[i].labels_path)));
    }

    const CorpusManifest loaded = load_manifest(dir_a + "/manifest.jsonl");
    CHECK(loaded.entries.size() == 3);
    CHECK(loaded.total_audio_seconds() == doctest::Approx(60.0));
    CHECK(manifest_file_hash(dir_a + "/manifest.jsonl") ==
          manifest_file_hash(dir_b + "/manifest.jsonl"));
}

TEST_CASE("talker-count histogram is reproducible from the manifest alone") {
    SimConfig cfg = condition_preset("setA");
    const std::string dir = temp_dir("corpus_hist");
    const CorpusManifest manifest = generate_corpus(cfg, 4, dir, 21, 2);

    std::array<std::int64_t, 5> from_files{}, from_plans{};
    for (const CorpusEntry& e : manifest.entries) {
        const ActivityGrid stored = load_labels(manifest.resolve(e.labels_path));
        const ActivityGrid derived = derive_labels(load_plan(manifest.resolve(e.plan_path)));
        for (int w = 0; w < stored.n_windows; ++w) {
            ++from_files[stored.count(w)];
            ++from_plans[derived.count(w)];
        }
    }
    CHECK(from_files == from_plans);
}

TEST_CASE("corpus mode requires a source pool") {
    SimConfig cfg = condition_preset("setA");
    cfg.source_mode = SourceRef::Kind::file;
    cfg.p_active = 1.0;
    CHECK_THROWS_AS(build_segment_plan(cfg, 3), Error);
}

TEST_CASE("render rejects sources shorter than the planned interval") {
    SegmentPlan plan = minimal_plan();
    plan.channels[0].active = true;
    plan.channels[0].source = {SourceRef::Kind::synth, 1, ""};
    plan.channels[0].start_s = 0.0;
    plan.channels[0].end_s = 10.0;

    std::array<AudioBuffer, 4> sources;
    for (auto& s : sources) s = AudioBuffer(1, 1000, 16000);  // way short
    CHECK_THROWS_AS(render_segment(plan, sources), Error);
}

TEST_CASE("condition presets differ where they should") {
    const SimConfig a = condition_preset("setA");
    const SimConfig b = condition_preset("setB");
    const SimConfig c = condition_preset("setC");
    CHECK(a.room.t60_s != b.room.t60_s);
    CHECK(a.mic_gain_db != c.mic_gain_db);
    CHECK(c.mic_gain_db[0] == 10.0);
    CHECK(c.layout.talkers[0].x != a.layout.talkers[0].x);
    CHECK_THROWS_AS(condition_preset("setZ"), Error);
}
