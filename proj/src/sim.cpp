#include "mpvad/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "mpvad/fft.hpp"
#include "mpvad/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mpvad {

namespace {

double db_to_lin(double db) { return std::pow(10.0, db / 20.0); }

/// Two-pole resonator (formant filter).
struct Resonator {
    double a1 = 0.0, a2 = 0.0, scale = 1.0;
    double y1 = 0.0, y2 = 0.0;

    void configure(double freq_hz, double bw_hz, double fs) {
        const double r = std::exp(-M_PI * bw_hz / fs);
        a1 = 2.0 * r * std::cos(2.0 * M_PI * freq_hz / fs);
        a2 = -r * r;
        scale = 1.0 - r;
    }
    double process(double x) {
        const double y = scale * x + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        return y;
    }
};

struct OnePoleLp {
    double a = 0.0, y1 = 0.0;
    void configure(double cutoff_hz, double fs) { a = std::exp(-2.0 * M_PI * cutoff_hz / fs); }
    double process(double x) {
        y1 = (1.0 - a) * x + a * y1;
        return y1;
    }
};

double utterance_duration_s(const SourceRef& source, double cap_s) {
    if (source.kind == SourceRef::Kind::synth) return cap_s;  // caller draws it
    const AudioBuffer buf = read_wav(source.path);
    return std::min(buf.duration_s(), cap_s);
}

}  // namespace

double distance(const Vec2& a, const Vec2& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

LayoutConfig LayoutConfig::semicircle(double radius_m, double mic_distance_m) {
    LayoutConfig layout;
    const double angles_deg[4] = {0.0, 60.0, 120.0, 180.0};
    for (int i = 0; i < 4; ++i) {
        const double a = angles_deg[i] * M_PI / 180.0;
        layout.talkers[i] = {radius_m * std::cos(a), radius_m * std::sin(a)};
        const double out = radius_m + mic_distance_m;
        layout.mics[i] = {out * std::cos(a), out * std::sin(a)};
    }
    return layout;
}

LayoutConfig LayoutConfig::square(double half_diagonal_m, double mic_distance_m) {
    LayoutConfig layout;
    const double angles_deg[4] = {45.0, 135.0, 225.0, 315.0};
    for (int i = 0; i < 4; ++i) {
        const double a = angles_deg[i] * M_PI / 180.0;
        layout.talkers[i] = {half_diagonal_m * std::cos(a), half_diagonal_m * std::sin(a)};
        const double out = half_diagonal_m + mic_distance_m;
        layout.mics[i] = {out * std::cos(a), out * std::sin(a)};
    }
    return layout;
}

SimConfig condition_preset(const std::string& name) {
    SimConfig cfg;
    cfg.condition = name;
    if (name == "setA") {
        return cfg;
    }
    if (name == "setB") {
        cfg.room.t60_s = 0.65;
        cfg.room.drr_ref_min_db = 8.0;
        cfg.room.drr_ref_max_db = 14.0;
        cfg.noise_floor_db = -55.0;
        cfg.mic_gain_db = {6.0, -6.0, 3.0, -3.0};
        return cfg;
    }
    if (name == "setC") {
        cfg.layout = LayoutConfig::square();
        cfg.room.t60_s = 0.7;
        cfg.room.drr_ref_min_db = 7.0;
        cfg.room.drr_ref_max_db = 13.0;
        cfg.noise_floor_db = -52.0;
        cfg.mic_gain_db = {10.0, -10.0, 10.0, -10.0};
        return cfg;
    }
    throw Error("unknown condition preset: " + name);
}

AudioBuffer gen_synthetic_utterance(double duration_s, std::uint64_t seed, int sample_rate) {
    if (duration_s <= 0.0) throw Error("utterance duration must be positive");
    const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
    const double fs = sample_rate;
    Rng rng(seed);

    // Per-utterance "speaker": three formants plus a noise-burst filter.
    Resonator f1, f2, f3, burst;
    f1.configure(rng.uniform(400.0, 700.0), 90.0, fs);
    f2.configure(rng.uniform(1100.0, 1800.0), 140.0, fs);
    f3.configure(rng.uniform(2300.0, 2900.0), 200.0, fs);
    burst.configure(rng.uniform(1800.0, 3000.0), 700.0, fs);
    OnePoleLp burst_lp1, burst_lp2;
    burst_lp1.configure(2800.0, fs);
    burst_lp2.configure(2800.0, fs);

    double f0 = rng.uniform(110.0, 240.0);
    double phase = 0.0;

    AudioBuffer out(1, n, sample_rate);
    std::vector<float>& y = out.channels[0];

    bool voiced = true;
    std::size_t t = 0;
    while (t < n) {
        const std::size_t seg_len = static_cast<std::size_t>(rng.uniform(0.2, 0.4) * fs);
        const std::size_t seg_end = std::min(n, t + seg_len);
        const double f0_target = std::clamp(f0 + rng.uniform(-50.0, 50.0), 80.0, 300.0);
        const double f0_start = f0;
        const double mod_hz = rng.uniform(2.0, 5.0);
        const double mod_phase = rng.uniform(0.0, 2.0 * M_PI);
        const double level = voiced ? 1.0 : rng.uniform(0.2, 0.35);
        const std::size_t ramp = static_cast<std::size_t>(0.02 * fs);

        for (std::size_t k = t; k < seg_end; ++k) {
            const double frac = static_cast<double>(k - t) / std::max<std::size_t>(1, seg_end - t);
            double sample;
            if (voiced) {
                f0 = f0_start + (f0_target - f0_start) * frac;
                phase += f0 / fs;
                double excite = 0.0;
                if (phase >= 1.0) {
                    phase -= 1.0;
                    excite = rng.uniform(0.9, 1.1);
                }
                excite += 0.01 * rng.normal();  // aspiration
                sample = 0.6 * f1.process(excite) + 0.35 * f2.process(excite) +
                         0.18 * f3.process(excite);
            } else {
                sample = burst_lp2.process(
                    burst_lp1.process(burst.process(rng.normal() * 0.6)));
            }
            double env = level * (0.85 + 0.15 * std::sin(2.0 * M_PI * mod_hz * k / fs + mod_phase));
            const std::size_t into = k - t;
            const std::size_t left = seg_end - k;
            if (into < ramp) env *= static_cast<double>(into + 1) / ramp;
            if (left <= ramp) env *= static_cast<double>(left) / ramp;
            y[k] = static_cast<float>(sample * env);
        }
        t = seg_end;
        voiced = !voiced;
    }

    float peak = 0.0f;
    for (float s : y) peak = std::max(peak, std::abs(s));
    if (peak > 0.0f) {
        const float scale = 0.5f / peak;
        for (float& s : y) s *= scale;
    }
    return out;
}

PathMatrix derive_paths(const LayoutConfig& layout, const RoomConfig& room, std::uint64_t seed) {
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            if (distance(layout.talkers[j], layout.mics[i]) <= 0.0)
                throw Error("layout has coincident talker/mic positions");
        }

    Rng rng(seed);
    const double base_drr = rng.uniform(room.drr_ref_min_db, room.drr_ref_max_db);

    PathMatrix paths;
    for (int i = 0; i < 4; ++i) {  // mic
        const double d_own = distance(layout.talkers[i], layout.mics[i]);
        const Vec2 axis = {layout.talkers[i].x - layout.mics[i].x,
                           layout.talkers[i].y - layout.mics[i].y};
        const double axis_norm = std::sqrt(axis.x * axis.x + axis.y * axis.y);
        for (int j = 0; j < 4; ++j) {  // talker
            PathParams& p = paths[j][i];
            const double d = distance(layout.talkers[j], layout.mics[i]);
            p.delay_s = d / layout.speed_of_sound;

            const Vec2 to_talker = {layout.talkers[j].x - layout.mics[i].x,
                                    layout.talkers[j].y - layout.mics[i].y};
            const double cos_angle =
                (axis.x * to_talker.x + axis.y * to_talker.y) / (axis_norm * d);
            const double angle_deg = std::acos(std::clamp(cos_angle, -1.0, 1.0)) * 180.0 / M_PI;
            const double directivity =
                (angle_deg <= room.directivity_cone_deg) ? 1.0
                                                         : db_to_lin(-room.directivity_att_db);

            const double jitter =
                (j == i) ? 1.0
                         : db_to_lin(rng.uniform(-room.cross_gain_jitter_db,
                                                 room.cross_gain_jitter_db));
            p.gain = (j == i) ? 1.0 : (d_own / d) * directivity * jitter;

            // DRR shrinks with distance (7.5 dB per doubling; the shotgun's
            // diffuse-field rejection steepens the free-field slope): far
            // sources sound noticeably more reverberant than the own path.
            p.drr_db = base_drr - 25.0 * std::log10(std::max(d, 1e-6));
            p.t60_s = room.t60_s;
            p.rir_tail_s = room.rir_tail_s;
            p.rir_seed = rng.next_u64();
        }
    }
    return paths;
}

AudioBuffer render_rir(const PathParams& path, int sample_rate) {
    if (!path.has_rir()) return {};
    const long direct = std::lround(path.delay_s * sample_rate);
    const long tail = std::lround(path.rir_tail_s * sample_rate);
    AudioBuffer rir(1, static_cast<std::size_t>(direct + tail + 1), sample_rate);
    std::vector<float>& h = rir.channels[0];
    h[direct] = 1.0f;

    Rng rng(path.rir_seed);
    double energy = 0.0;
    std::vector<double> raw(tail);
    for (long k = 0; k < tail; ++k) {
        const double t = static_cast<double>(k + 1) / sample_rate;
        raw[k] = rng.normal() * std::exp(-6.91 * t / path.t60_s);
        energy += raw[k] * raw[k];
    }
    if (energy > 0.0) {
        const double scale = std::sqrt(std::pow(10.0, -path.drr_db / 10.0) / energy);
        for (long k = 0; k < tail; ++k)
            h[direct + 1 + k] = static_cast<float>(raw[k] * scale);
    }
    return rir;
}

SegmentPlan build_segment_plan(const SimConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    SegmentPlan plan;
    plan.seed = seed;
    plan.condition = config.condition;
    plan.duration_s = config.duration_s;
    plan.sample_rate = config.sample_rate;
    plan.noise_floor_db = config.noise_floor_db;
    plan.noise_enabled = config.noise_enabled;
    plan.noise_seed = rng.next_u64();
    plan.paths = derive_paths(config.layout, config.room, rng.next_u64());

    for (int c = 0; c < 4; ++c) {
        ChannelPlan& ch = plan.channels[c];
        ch.mic_gain_db = config.mic_gain_db[c];
        ch.active = rng.uniform() < config.p_active;
        if (!ch.active) continue;

        double dur;
        if (config.source_mode == SourceRef::Kind::synth) {
            ch.source.kind = SourceRef::Kind::synth;
            ch.source.seed = rng.next_u64();
            dur = rng.uniform(config.min_utterance_s,
                              std::min(config.max_utterance_s, config.duration_s));
        } else {
            if (config.source_pool.empty())
                throw Error("source pool is empty in corpus mode");
            ch.source.kind = SourceRef::Kind::file;
            ch.source.path = config.source_pool[rng.below(config.source_pool.size())];
            dur = utterance_duration_s(ch.source, config.duration_s);
        }
        ch.start_s = rng.uniform(0.0, config.duration_s - dur);
        ch.end_s = ch.start_s + dur;
        ch.target_rms_db =
            config.rms_levels_db[rng.below(config.rms_levels_db.size())];
    }
    plan.validate();
    return plan;
}

void SegmentPlan::validate() const {
    for (int c = 0; c < 4; ++c) {
        const ChannelPlan& ch = channels[c];
        if (!ch.active) {
            if (ch.end_s > ch.start_s)
                throw Error("inactive channel " + std::to_string(c) + " has an interval");
            continue;
        }
        if (!(ch.start_s >= 0.0 && ch.start_s < ch.end_s && ch.end_s <= duration_s + 1e-9))
            throw Error("channel " + std::to_string(c) + " interval out of bounds");
    }
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            if (j != i && !(paths[j][i].gain < paths[i][i].gain))
                throw Error("cross path gain exceeds own path gain in column " +
                            std::to_string(i));
}

ActivityGrid derive_labels(const SegmentPlan& plan) {
    ActivityGrid grid(plan.num_windows());
    constexpr double kMinOverlapS = 0.2;
    for (int c = 0; c < 4; ++c) {
        const ChannelPlan& ch = plan.channels[c];
        if (!ch.active) continue;
        for (int w = 0; w < grid.n_windows; ++w) {
            const double overlap =
                std::min(ch.end_s, static_cast<double>(w + 1)) -
                std::max(ch.start_s, static_cast<double>(w));
            grid.at(c, w) = (overlap >= kMinOverlapS - 1e-9) ? 1 : 0;
        }
    }
    return grid;
}

std::array<AudioBuffer, 4> prepare_sources(const SegmentPlan& plan) {
    std::array<AudioBuffer, 4> tracks;
    const std::size_t total = plan.total_samples();
    for (int c = 0; c < 4; ++c) {
        tracks[c] = AudioBuffer(1, total, plan.sample_rate);
        const ChannelPlan& ch = plan.channels[c];
        if (!ch.active) continue;

        const std::size_t n0 = static_cast<std::size_t>(std::llround(ch.start_s * plan.sample_rate));
        const std::size_t n1 = static_cast<std::size_t>(std::llround(ch.end_s * plan.sample_rate));
        const std::size_t len = n1 - n0;

        std::vector<float> raw;
        if (ch.source.kind == SourceRef::Kind::synth) {
            raw = gen_synthetic_utterance(static_cast<double>(len) / plan.sample_rate,
                                          ch.source.seed, plan.sample_rate)
                      .channels[0];
        } else {
            AudioBuffer buf = read_wav(ch.source.path);
            if (buf.sample_rate != plan.sample_rate) buf = resample(buf, plan.sample_rate);
            raw.assign(buf.num_samples(), 0.0f);
            for (const auto& channel : buf.channels)
                for (std::size_t k = 0; k < raw.size(); ++k)
                    raw[k] += channel[k] / buf.num_channels();
        }
        if (raw.size() + 1 < len)
            throw Error("source for channel " + std::to_string(c) +
                        " is shorter than its planned interval");

        double sum_sq = 0.0;
        const std::size_t used = std::min(len, raw.size());
        for (std::size_t k = 0; k < used; ++k)
            sum_sq += static_cast<double>(raw[k]) * raw[k];
        const double rms = std::sqrt(sum_sq / std::max<std::size_t>(1, len));
        const double gain = (rms > 0.0) ? db_to_lin(ch.target_rms_db) / rms : 0.0;

        std::vector<float>& track = tracks[c].channels[0];
        for (std::size_t k = 0; k < used; ++k)
            track[n0 + k] = static_cast<float>(raw[k] * gain);
    }
    return tracks;
}

RenderResult render_segment(const SegmentPlan& plan, const std::array<AudioBuffer, 4>& sources) {
    plan.validate();
    const std::size_t total = plan.total_samples();
    for (int c = 0; c < 4; ++c) {
        if (plan.channels[c].active &&
            (sources[c].num_channels() != 1 || sources[c].num_samples() < total))
            throw Error("source track for channel " + std::to_string(c) +
                        " is shorter than its planned interval");
    }

    RenderResult out;
    out.segment.plan = plan;
    out.segment.audio = AudioBuffer(4, total, plan.sample_rate);

    for (int i = 0; i < 4; ++i) {
        std::vector<double> acc(total, 0.0);
        for (int j = 0; j < 4; ++j) {
            const ChannelPlan& src_ch = plan.channels[j];
            if (!src_ch.active) continue;
            const PathParams& p = plan.paths[j][i];
            const std::vector<float>& src = sources[j].channels[0];
            const std::size_t n0 =
                static_cast<std::size_t>(std::llround(src_ch.start_s * plan.sample_rate));
            const std::size_t n1 =
                static_cast<std::size_t>(std::llround(src_ch.end_s * plan.sample_rate));

            if (p.has_rir()) {
                const AudioBuffer rir = render_rir(p, plan.sample_rate);
                const std::span<const float> slice(src.data() + n0, n1 - n0);
                const std::vector<float> conv = fft_convolve(slice, rir.channels[0]);
                const std::size_t limit = std::min(conv.size(), total - n0);
                for (std::size_t k = 0; k < limit; ++k)
                    acc[n0 + k] += p.gain * conv[k];
            } else {
                const std::size_t d =
                    static_cast<std::size_t>(std::lround(p.delay_s * plan.sample_rate));
                for (std::size_t k = n0; k < n1 && k + d < total; ++k)
                    acc[k + d] += p.gain * src[k];
            }
        }
        if (plan.noise_enabled) {
            Rng noise_rng(derive_seed(plan.noise_seed, static_cast<std::uint64_t>(i)));
            const double sigma = db_to_lin(plan.noise_floor_db);
            for (std::size_t k = 0; k < total; ++k) acc[k] += sigma * noise_rng.normal();
        }
        const double mic_gain = db_to_lin(plan.channels[i].mic_gain_db);
        std::vector<float>& dst = out.segment.audio.channels[i];
        for (std::size_t k = 0; k < total; ++k) {
            double s = acc[k] * mic_gain;
            if (s > 1.0) {
                s = 1.0;
                ++out.clipped_samples[i];
            } else if (s < -1.0) {
                s = -1.0;
                ++out.clipped_samples[i];
            }
            dst[k] = static_cast<float>(s);
        }
    }
    return out;
}

AudioBuffer render_own_component(const SegmentPlan& plan,
                                 const std::array<AudioBuffer, 4>& sources) {
    const std::size_t total = plan.total_samples();
    AudioBuffer out(4, total, plan.sample_rate);
    for (int i = 0; i < 4; ++i) {
        const ChannelPlan& ch = plan.channels[i];
        if (!ch.active) continue;
        const PathParams& p = plan.paths[i][i];
        const std::vector<float>& src = sources[i].channels[0];
        const std::size_t n0 = static_cast<std::size_t>(std::llround(ch.start_s * plan.sample_rate));
        const std::size_t n1 = static_cast<std::size_t>(std::llround(ch.end_s * plan.sample_rate));
        std::vector<double> acc(total, 0.0);
        if (p.has_rir()) {
            const AudioBuffer rir = render_rir(p, plan.sample_rate);
            const std::span<const float> slice(src.data() + n0, n1 - n0);
            const std::vector<float> conv = fft_convolve(slice, rir.channels[0]);
            const std::size_t limit = std::min(conv.size(), total - n0);
            for (std::size_t k = 0; k < limit; ++k) acc[n0 + k] += p.gain * conv[k];
        } else {
            const std::size_t d = static_cast<std::size_t>(std::lround(p.delay_s * plan.sample_rate));
            for (std::size_t k = n0; k < n1 && k + d < total; ++k) acc[k + d] += p.gain * src[k];
        }
        const double mic_gain = db_to_lin(ch.mic_gain_db);
        for (std::size_t k = 0; k < total; ++k)
            out.channels[i][k] = static_cast<float>(acc[k] * mic_gain);
    }
    return out;
}

namespace {

json source_to_json(const SourceRef& s) {
    return json{{"kind", s.kind == SourceRef::Kind::synth ? "synth" : "file"},
                {"seed", s.seed},
                {"path", s.path}};
}

SourceRef source_from_json(const json& j) {
    SourceRef s;
    s.kind = (j.at("kind").get<std::string>() == "synth") ? SourceRef::Kind::synth
                                                          : SourceRef::Kind::file;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.path = j.at("path").get<std::string>();
    return s;
}

}  // namespace

void save_plan(const std::string& path, const SegmentPlan& plan) {
    json j;
    j["segment_id"] = plan.segment_id;
    j["condition"] = plan.condition;
    j["seed"] = plan.seed;
    j["duration_s"] = plan.duration_s;
    j["sample_rate"] = plan.sample_rate;
    j["noise_floor_db"] = plan.noise_floor_db;
    j["noise_enabled"] = plan.noise_enabled;
    j["noise_seed"] = plan.noise_seed;
    json channels = json::array();
    for (const ChannelPlan& ch : plan.channels) {
        channels.push_back(json{{"active", ch.active},
                                {"source", source_to_json(ch.source)},
                                {"start_s", ch.start_s},
                                {"end_s", ch.end_s},
                                {"target_rms_db", ch.target_rms_db},
                                {"mic_gain_db", ch.mic_gain_db}});
    }
    j["channels"] = channels;
    json paths = json::array();
    for (int tj = 0; tj < 4; ++tj) {
        json row = json::array();
        for (int mi = 0; mi < 4; ++mi) {
            const PathParams& p = plan.paths[tj][mi];
            row.push_back(json{{"gain", p.gain},
                               {"delay_s", p.delay_s},
                               {"drr_db", p.drr_db},
                               {"t60_s", p.t60_s},
                               {"rir_tail_s", p.rir_tail_s},
                               {"rir_seed", p.rir_seed}});
        }
        paths.push_back(row);
    }
    j["paths"] = paths;

    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write plan: " + path);
    f << j.dump(2) << '\n';
}

SegmentPlan load_plan(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open plan: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError("malformed plan JSON " + path + ": " + e.what());
    }
    SegmentPlan plan;
    plan.segment_id = j.at("segment_id").get<std::string>();
    plan.condition = j.at("condition").get<std::string>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.duration_s = j.at("duration_s").get<double>();
    plan.sample_rate = j.at("sample_rate").get<int>();
    plan.noise_floor_db = j.at("noise_floor_db").get<double>();
    plan.noise_enabled = j.at("noise_enabled").get<bool>();
    plan.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    for (int c = 0; c < 4; ++c) {
        const json& jc = j.at("channels").at(c);
        ChannelPlan& ch = plan.channels[c];
        ch.active = jc.at("active").get<bool>();
        ch.source = source_from_json(jc.at("source"));
        ch.start_s = jc.at("start_s").get<double>();
        ch.end_s = jc.at("end_s").get<double>();
        ch.target_rms_db = jc.at("target_rms_db").get<double>();
        ch.mic_gain_db = jc.at("mic_gain_db").get<double>();
    }
    for (int tj = 0; tj < 4; ++tj)
        for (int mi = 0; mi < 4; ++mi) {
            const json& jp = j.at("paths").at(tj).at(mi);
            PathParams& p = plan.paths[tj][mi];
            p.gain = jp.at("gain").get<double>();
            p.delay_s = jp.at("delay_s").get<double>();
            p.drr_db = jp.at("drr_db").get<double>();
            p.t60_s = jp.at("t60_s").get<double>();
            p.rir_tail_s = jp.at("rir_tail_s").get<double>();
            p.rir_seed = jp.at("rir_seed").get<std::uint64_t>();
        }
    return plan;
}

void save_labels(const std::string& path, const std::string& segment_id,
                 const ActivityGrid& grid) {
    json j;
    j["segment_id"] = segment_id;
    j["n_windows"] = grid.n_windows;
    json rows = json::array();
    for (int c = 0; c < 4; ++c) {
        json row = json::array();
        for (int w = 0; w < grid.n_windows; ++w) row.push_back(static_cast<int>(grid.at(c, w)));
        rows.push_back(row);
    }
    j["grid"] = rows;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write labels: " + path);
    f << j.dump(2) << '\n';
}

ActivityGrid load_labels(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open labels: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError("malformed labels JSON " + path + ": " + e.what());
    }
    ActivityGrid grid(j.at("n_windows").get<int>());
    for (int c = 0; c < 4; ++c)
        for (int w = 0; w < grid.n_windows; ++w)
            grid.at(c, w) = static_cast<std::uint8_t>(j.at("grid").at(c).at(w).get<int>());
    return grid;
}

std::string CorpusManifest::resolve(const std::string& rel) const {
    if (rel.empty() || rel.front() == '/') return rel;
    return root_dir + "/" + rel;
}

double CorpusManifest::total_audio_seconds() const {
    double total = 0.0;
    for (const CorpusEntry& e : entries) total += load_plan(resolve(e.plan_path)).duration_s;
    return total;
}

void save_manifest(const std::string& path, const CorpusManifest& manifest) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write manifest: " + path);
    for (const CorpusEntry& e : manifest.entries) {
        json j{{"segment_id", e.segment_id}, {"wav", e.wav_path},
               {"plan", e.plan_path},        {"labels", e.labels_path},
               {"condition", e.condition},   {"seed", e.seed}};
        f << j.dump() << '\n';
    }
}

CorpusManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest: " + path);
    CorpusManifest m;
    m.root_dir = fs::path(path).parent_path().string();
    if (m.root_dir.empty()) m.root_dir = ".";
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError("malformed manifest line in " + path + ": " + e.what());
        }
        CorpusEntry e;
        e.segment_id = j.at("segment_id").get<std::string>();
        e.wav_path = j.at("wav").get<std::string>();
        e.plan_path = j.at("plan").get<std::string>();
        e.labels_path = j.at("labels").get<std::string>();
        e.condition = j.at("condition").get<std::string>();
        e.seed = j.at("seed").get<std::uint64_t>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::uint64_t manifest_file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open manifest: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes);
}

CorpusManifest generate_corpus(const SimConfig& config, int n_segments,
                               const std::string& out_dir, std::uint64_t seed, int threads) {
    fs::create_directories(out_dir);
    CorpusManifest manifest;
    manifest.root_dir = out_dir;
    manifest.entries.resize(n_segments);

    const auto render_one = [&](int k) {
        char name[32];
        std::snprintf(name, sizeof(name), "seg_%05d", k);
        const std::uint64_t seg_seed = derive_seed(seed, static_cast<std::uint64_t>(k));
        SegmentPlan plan = build_segment_plan(config, seg_seed);
        plan.segment_id = name;

        const std::array<AudioBuffer, 4> sources = prepare_sources(plan);
        const RenderResult rendered = render_segment(plan, sources);
        const ActivityGrid labels = derive_labels(plan);

        CorpusEntry& e = manifest.entries[k];
        e.segment_id = name;
        e.wav_path = std::string(name) + ".wav";
        e.plan_path = std::string(name) + ".plan.json";
        e.labels_path = std::string(name) + ".labels.json";
        e.condition = plan.condition;
        e.seed = seg_seed;

        write_wav(manifest.resolve(e.wav_path), rendered.segment.audio, WavEncoding::float32);
        save_plan(manifest.resolve(e.plan_path), plan);
        save_labels(manifest.resolve(e.labels_path), plan.segment_id, labels);
    };

    if (threads <= 1) {
        for (int k = 0; k < n_segments; ++k) render_one(k);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&] {
                for (int k = next.fetch_add(1); k < n_segments; k = next.fetch_add(1))
                    render_one(k);
            });
        for (std::thread& th : pool) th.join();
    }

    save_manifest(out_dir + "/manifest.jsonl", manifest);
    return manifest;
}

}  // namespace mpvad
