// mpvad: corpus simulation, training, evaluation, enhancement and streaming
// inference for multi-party cross-talk VAD.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpvad/baseline.hpp"
#include "mpvad/eval.hpp"
#include "mpvad/models.hpp"
#include "mpvad/sim.hpp"
#include "mpvad/streaming.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mpvad;

namespace {

void write_run_config(const std::string& out_dir, const std::string& subcommand,
                      const json& resolved) {
    fs::create_directories(out_dir);
    json j;
    j["subcommand"] = subcommand;
    j["config"] = resolved;
    std::ofstream f(out_dir + "/run_config.json", std::ios::trunc);
    f << j.dump(2) << '\n';
}

struct LoadedModels {
    std::optional<ScModel> sc;
    std::optional<McModel> mc;
    std::optional<EnergyModel> energy;
};

LoadedModels load_models(const std::string& sc_path, const std::string& mc_path,
                         const std::string& energy_path, const FrontEndConfig& fe) {
    LoadedModels m;
    if (!sc_path.empty()) m.sc = sc_from_checkpoint(load_checkpoint(sc_path, fe));
    if (!mc_path.empty()) m.mc = mc_from_checkpoint(load_checkpoint(mc_path, fe));
    if (!energy_path.empty()) m.energy = energy_from_checkpoint(load_checkpoint(energy_path, fe));
    return m;
}

int run_simulate(const std::string& out, int segments, std::uint64_t seed,
                 const std::string& condition, std::optional<double> p_active,
                 const std::string& source_dir, int threads) {
    SimConfig cfg = condition_preset(condition);
    if (p_active) cfg.p_active = *p_active;
    if (!source_dir.empty()) {
        cfg.source_mode = SourceRef::Kind::file;
        for (const auto& entry : fs::directory_iterator(source_dir))
            if (entry.path().extension() == ".wav")
                cfg.source_pool.push_back(entry.path().string());
        std::sort(cfg.source_pool.begin(), cfg.source_pool.end());
    }

    const std::string corpus_dir = out + "/corpus";
    write_run_config(out, "simulate",
                     json{{"segments", segments},
                          {"seed", seed},
                          {"condition", condition},
                          {"p_active", cfg.p_active},
                          {"source_dir", source_dir},
                          {"threads", threads}});
    const CorpusManifest manifest = generate_corpus(cfg, segments, corpus_dir, seed, threads);
    std::cout << json{{"manifest", corpus_dir + "/manifest.jsonl"},
                      {"segments", manifest.entries.size()},
                      {"total_audio_s", 20.0 * segments}}
                     .dump()
              << '\n';
    return 0;
}

int run_train(const std::string& out, const std::string& model, const std::string& corpus,
              std::uint64_t seed, int epochs, int batch, double lr, int lr_half_life,
              std::optional<bool> augment) {
    const FrontEndConfig fe;
    const CorpusManifest manifest = load_manifest(corpus);
    fs::create_directories(out + "/checkpoints");
    fs::create_directories(out + "/reports");
    write_run_config(out, "train",
                     json{{"model", model},
                          {"corpus", corpus},
                          {"seed", seed},
                          {"epochs", epochs},
                          {"batch", batch},
                          {"lr", lr}});

    const std::string ckpt_path = out + "/checkpoints/" + model + ".ckpt";
    if (model == "energy") {
        SvmTrainConfig cfg;
        cfg.seed = seed;
        const EnergyModel energy = train_energy_baseline(manifest, cfg);
        Checkpoint ckpt = energy_to_checkpoint(energy, fe);
        ckpt.meta.seed = seed;
        ckpt.meta.manifest_hash = manifest_file_hash(corpus);
        save_checkpoint(ckpt_path, ckpt);
        std::cout << json{{"checkpoint", ckpt_path}}.dump() << '\n';
        return 0;
    }

    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_windows = batch;
    cfg.lr = lr;
    cfg.lr_half_life_epochs = lr_half_life;
    cfg.augment = augment;
    const ModelKind kind = model == "sc" ? ModelKind::sc : ModelKind::mc;
    TrainResult result = train_model(kind, manifest, fe, cfg, seed);
    result.checkpoint.meta.manifest_hash = manifest_file_hash(corpus);
    save_checkpoint(ckpt_path, result.checkpoint);
    const std::string log_path = out + "/reports/train_log_" + model + ".jsonl";
    save_train_log(log_path, result.log);
    std::cout << json{{"checkpoint", ckpt_path},
                      {"log", log_path},
                      {"best_epoch", result.best_epoch}}
                     .dump()
              << '\n';
    return 0;
}

struct CorpusData {
    std::vector<MultiChannelSegment> segments;
    std::vector<ActivityGrid> truths;
};

CorpusData load_corpus(const CorpusManifest& manifest) {
    CorpusData data;
    for (const CorpusEntry& e : manifest.entries) {
        MultiChannelSegment seg;
        seg.audio = read_wav(manifest.resolve(e.wav_path));
        seg.plan = load_plan(manifest.resolve(e.plan_path));
        data.segments.push_back(std::move(seg));
        data.truths.push_back(load_labels(manifest.resolve(e.labels_path)));
    }
    return data;
}

int run_eval(const std::string& out, const std::string& corpus, const std::string& sc_path,
             const std::string& mc_path, const std::string& energy_path, double alpha,
             double threshold, bool oracle, const std::string& name) {
    const FrontEndConfig fe;
    const CorpusManifest manifest = load_manifest(corpus);
    const CorpusData data = load_corpus(manifest);
    const MatD mel = mel_matrix(fe);
    const LoadedModels models = load_models(sc_path, mc_path, energy_path, fe);
    fs::create_directories(out + "/reports");
    write_run_config(out, "eval",
                     json{{"corpus", corpus},
                          {"sc", sc_path},
                          {"mc", mc_path},
                          {"energy", energy_path},
                          {"fusion_alpha", alpha},
                          {"threshold", threshold},
                          {"oracle", oracle}});

    const std::string condition =
        manifest.entries.empty() ? "unknown" : manifest.entries.front().condition;
    const std::string suffix = name.empty() ? condition : name;

    const auto emit = [&](const std::string& label, std::span<const ActivityGrid> preds) {
        const EvalReport report = evaluate_grids(preds, data.truths, condition);
        const std::string base = out + "/reports/eval_" + label + "_" + suffix;
        std::ofstream f(base + ".json", std::ios::trunc);
        f << report.to_json_string() << '\n';
        report.write_confusion_csv(base + "_confusion.csv");
        std::cout << json{{"model", label},
                          {"condition", condition},
                          {"accuracy", report.overall_accuracy},
                          {"report", base + ".json"}}
                         .dump()
                  << '\n';
    };

    if (oracle) emit("oracle", data.truths);

    std::vector<ActivityGrid> sc_grids, mc_grids, fused_grids, energy_grids;
    for (const MultiChannelSegment& seg : data.segments) {
        if (models.sc) {
            Predictor p{&*models.sc, nullptr, {alpha, threshold}};
            sc_grids.push_back(predict_segment(p, seg.audio, fe, mel));
        }
        if (models.mc) {
            Predictor p{nullptr, &*models.mc, {alpha, threshold}};
            mc_grids.push_back(predict_segment(p, seg.audio, fe, mel));
        }
        if (models.sc && models.mc) {
            Predictor p{&*models.sc, &*models.mc, {alpha, threshold}};
            fused_grids.push_back(predict_segment(p, seg.audio, fe, mel));
        }
        if (models.energy) energy_grids.push_back(energy_predict_segment(*models.energy, seg.audio));
    }
    if (models.sc) emit("sc", sc_grids);
    if (models.mc) emit("mc", mc_grids);
    if (models.sc && models.mc) emit("fused", fused_grids);
    if (models.energy) emit("energy", energy_grids);
    if (!oracle && !models.sc && !models.mc && !models.energy)
        throw Error("eval needs --oracle or at least one checkpoint");
    return 0;
}

int run_infer(const std::string& wav, const std::string& sc_path, const std::string& mc_path,
              double alpha, double threshold, int chunk) {
    const FrontEndConfig fe;
    const LoadedModels models = load_models(sc_path, mc_path, "", fe);
    if (!models.sc && !models.mc) throw Error("infer needs --sc and/or --mc");

    const AudioBuffer audio = read_wav(wav);
    if (audio.num_channels() != 4) throw Error("infer expects a 4-channel WAV");

    StreamSession session(models.sc ? &*models.sc : nullptr, models.mc ? &*models.mc : nullptr,
                          {alpha, threshold}, fe);
    const std::size_t n = audio.num_samples();
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(chunk)) {
        const std::size_t len = std::min<std::size_t>(chunk, n - start);
        std::array<std::span<const float>, 4> spans;
        for (int c = 0; c < 4; ++c)
            spans[c] = std::span<const float>(audio.channels[c].data() + start, len);
        for (const StreamDecision& d : session.push(spans)) {
            std::cout << json{{"window", d.window_index},
                              {"prob", d.prob},
                              {"active", d.active}}
                             .dump()
                      << '\n';
        }
    }
    return 0;
}

int run_enhance(const std::string& out, const std::string& corpus, const std::string& sc_path,
                const std::string& mc_path, double alpha, double threshold, bool oracle) {
    const FrontEndConfig fe;
    const CorpusManifest manifest = load_manifest(corpus);
    const MatD mel = mel_matrix(fe);
    const LoadedModels models = load_models(sc_path, mc_path, "", fe);
    if (!oracle && !models.sc && !models.mc)
        throw Error("enhance needs --oracle or at least one checkpoint");
    fs::create_directories(out + "/enhanced");
    fs::create_directories(out + "/reports");
    write_run_config(out, "enhance",
                     json{{"corpus", corpus},
                          {"sc", sc_path},
                          {"mc", mc_path},
                          {"fusion_alpha", alpha},
                          {"threshold", threshold},
                          {"oracle", oracle}});

    std::ofstream report_file(out + "/reports/leakage.jsonl", std::ios::trunc);
    for (const CorpusEntry& e : manifest.entries) {
        MultiChannelSegment seg;
        seg.audio = read_wav(manifest.resolve(e.wav_path));
        seg.plan = load_plan(manifest.resolve(e.plan_path));

        ActivityGrid pred;
        if (oracle) {
            pred = derive_labels(seg.plan);
        } else {
            Predictor p{models.sc ? &*models.sc : nullptr, models.mc ? &*models.mc : nullptr,
                        {alpha, threshold}};
            pred = predict_segment(p, seg.audio, fe, mel);
        }

        const MultiChannelSegment masked = mask_enhance(seg, pred);
        const std::string masked_path = out + "/enhanced/" + e.segment_id + "_masked.wav";
        write_wav(masked_path, masked.audio, WavEncoding::float32);

        const LeakageReport leakage = leakage_metrics(masked, pred, seg.plan);
        json j = json::parse(leakage.to_json_string());
        j["segment_id"] = e.segment_id;
        j["masked_wav"] = masked_path;
        report_file << j.dump() << '\n';
    }
    std::cout << json{{"leakage_report", out + "/reports/leakage.jsonl"}}.dump() << '\n';
    return 0;
}

int run_bench(const std::string& sc_path, const std::string& mc_path, double seconds, int runs,
              std::uint64_t seed) {
    const FrontEndConfig fe;
    LoadedModels models = load_models(sc_path, mc_path, "", fe);
    if (!models.sc && !models.mc) {
        // No checkpoint given: benchmark a freshly initialized MC model (the
        // compute cost does not depend on the weights).
        Rng rng(seed);
        models.mc = init_mc_model(rng);
    }
    Predictor pred{models.sc ? &*models.sc : nullptr, models.mc ? &*models.mc : nullptr, {}};
    const RtfResult r = rtf_benchmark(pred, fe, seconds, runs, seed);
    std::cout << json{{"rtf_mean", r.mean},
                      {"rtf_p95", r.p95},
                      {"runs", r.runs},
                      {"audio_seconds_per_run", r.audio_seconds_per_run}}
                     .dump()
              << '\n';
    return 0;
}

int run_gradcheck(std::uint64_t seed) {
    constexpr double kTolerance = 1e-4;
    bool ok = true;
    for (const GradCheckCase& c : run_model_grad_checks(seed)) {
        const bool pass = c.max_rel_err < kTolerance;
        ok = ok && pass;
        std::cout << json{{"check", c.name},
                          {"max_rel_err", c.max_rel_err},
                          {"pass", pass}}
                         .dump()
                  << '\n';
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-party cross-talk VAD toolkit"};
    app.require_subcommand(1);
    app.set_config("--config");

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a labeled 4-channel corpus");
    std::string sim_out = "out";
    int sim_segments = 10;
    std::uint64_t sim_seed = 1;
    std::string sim_condition = "setA";
    double sim_p_active = -1.0;
    std::string sim_sources;
    int sim_threads = 1;
    sim->add_option("--out", sim_out, "output directory");
    sim->add_option("--segments", sim_segments, "number of 20 s segments")->required();
    sim->add_option("--seed", sim_seed, "corpus seed");
    sim->add_option("--condition", sim_condition, "condition preset: setA, setB or setC");
    sim->add_option("--p-active", sim_p_active, "override per-channel activity probability");
    sim->add_option("--sources", sim_sources, "directory of source WAVs (default: synthetic)");
    sim->add_option("--threads", sim_threads, "render threads");

    // train
    auto* train = app.add_subcommand("train", "train sc, mc or the energy baseline");
    std::string train_out = "out", train_model_name, train_corpus;
    std::uint64_t train_seed = 1;
    int train_epochs = 30, train_batch = 32, train_lr_half_life = 0;
    double train_lr = 1e-3;
    bool train_augment = false, train_no_augment = false;
    train->add_option("--out", train_out, "output directory");
    train->add_option("--model", train_model_name, "sc | mc | energy")
        ->required()
        ->check(CLI::IsMember({"sc", "mc", "energy"}));
    train->add_option("--corpus", train_corpus, "corpus manifest path")->required();
    train->add_option("--seed", train_seed, "training seed");
    train->add_option("--epochs", train_epochs, "training epochs");
    train->add_option("--batch", train_batch, "windows per batch");
    train->add_option("--lr", train_lr, "initial AdamW learning rate");
    train->add_option("--lr-half-life", train_lr_half_life,
                      "halve the learning rate every N epochs (0 = constant)");
    train->add_flag("--augment", train_augment, "force channel-shuffle augmentation on");
    train->add_flag("--no-augment", train_no_augment, "force channel-shuffle augmentation off");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "run the metric suite on a labeled corpus");
    std::string eval_out = "out", eval_corpus, eval_sc, eval_mc, eval_energy, eval_name;
    double eval_alpha = 0.75, eval_threshold = 0.5;
    bool eval_oracle = false;
    eval_cmd->add_option("--out", eval_out, "output directory");
    eval_cmd->add_option("--corpus", eval_corpus, "corpus manifest path")->required();
    eval_cmd->add_option("--sc", eval_sc, "SC checkpoint");
    eval_cmd->add_option("--mc", eval_mc, "MC checkpoint");
    eval_cmd->add_option("--energy", eval_energy, "energy baseline checkpoint");
    eval_cmd->add_option("--fusion-alpha", eval_alpha, "weight on the MC posterior");
    eval_cmd->add_option("--threshold", eval_threshold, "decision threshold");
    eval_cmd->add_flag("--oracle", eval_oracle, "evaluate ground-truth labels as predictions");
    eval_cmd->add_option("--name", eval_name, "report name suffix");

    // infer
    auto* infer = app.add_subcommand("infer", "streaming inference over a stored WAV");
    std::string infer_wav, infer_sc, infer_mc;
    double infer_alpha = 0.75, infer_threshold = 0.5;
    int infer_chunk = 1600;
    infer->add_option("--stream", infer_wav, "4-channel WAV to stream")->required();
    infer->add_option("--sc", infer_sc, "SC checkpoint");
    infer->add_option("--mc", infer_mc, "MC checkpoint");
    infer->add_option("--fusion-alpha", infer_alpha, "weight on the MC posterior");
    infer->add_option("--threshold", infer_threshold, "decision threshold");
    infer->add_option("--chunk", infer_chunk, "samples pushed per call");

    // enhance
    auto* enhance = app.add_subcommand("enhance", "mask predicted-inactive seconds and export");
    std::string enh_out = "out", enh_corpus, enh_sc, enh_mc;
    double enh_alpha = 0.75, enh_threshold = 0.5;
    bool enh_oracle = false;
    enhance->add_option("--out", enh_out, "output directory");
    enhance->add_option("--corpus", enh_corpus, "corpus manifest path")->required();
    enhance->add_option("--sc", enh_sc, "SC checkpoint");
    enhance->add_option("--mc", enh_mc, "MC checkpoint");
    enhance->add_option("--fusion-alpha", enh_alpha, "weight on the MC posterior");
    enhance->add_option("--threshold", enh_threshold, "decision threshold");
    enhance->add_flag("--oracle", enh_oracle, "mask with ground-truth labels");

    // bench
    auto* bench = app.add_subcommand("bench", "real-time-factor benchmark");
    std::string bench_sc, bench_mc;
    double bench_seconds = 20.0;
    int bench_runs = 30;
    std::uint64_t bench_seed = 7;
    bench->add_option("--sc", bench_sc, "SC checkpoint");
    bench->add_option("--mc", bench_mc, "MC checkpoint");
    bench->add_option("--seconds", bench_seconds, "audio seconds per run");
    bench->add_option("--runs", bench_runs, "number of timed runs");
    bench->add_option("--seed", bench_seed, "audio seed");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::uint64_t gc_seed = 3;
    gradcheck->add_option("--seed", gc_seed, "check seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed())
            return run_simulate(sim_out, sim_segments, sim_seed, sim_condition,
                                sim_p_active >= 0.0 ? std::optional<double>(sim_p_active)
                                                    : std::nullopt,
                                sim_sources, sim_threads);
        if (train->parsed()) {
            std::optional<bool> augment;
            if (train_augment) augment = true;
            if (train_no_augment) augment = false;
            return run_train(train_out, train_model_name, train_corpus, train_seed, train_epochs,
                             train_batch, train_lr, train_lr_half_life, augment);
        }
        if (eval_cmd->parsed())
            return run_eval(eval_out, eval_corpus, eval_sc, eval_mc, eval_energy, eval_alpha,
                            eval_threshold, eval_oracle, eval_name);
        if (infer->parsed())
            return run_infer(infer_wav, infer_sc, infer_mc, infer_alpha, infer_threshold,
                             infer_chunk);
        if (enhance->parsed())
            return run_enhance(enh_out, enh_corpus, enh_sc, enh_mc, enh_alpha, enh_threshold,
                               enh_oracle);
        if (bench->parsed())
            return run_bench(bench_sc, bench_mc, bench_seconds, bench_runs, bench_seed);
        if (gradcheck->parsed()) return run_gradcheck(gc_seed);
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}}.dump() << '\n';
        return 1;
    }
    return 0;
}
