// Command-line driver: synth, train, run, sweep, account and compare.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wav2vid/channel.hpp"
#include "wav2vid/errors.hpp"
#include "wav2vid/harness.hpp"
#include "wav2vid/media.hpp"

using namespace w2v;
using namespace w2v::harness;
namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> snr;
    std::optional<double> epsilon;
    std::optional<std::size_t> repeats;
    bool retrain = false;
};

/// "lo:hi:n" as n evenly spaced points (a single point when n is 1).
std::vector<double> parse_snr(const std::string& text)
{
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) {
        parts.push_back(p);
    }
    try {
        if (parts.size() != 3) {
            throw ConfigError("");
        }
        const double lo = std::stod(parts[0]);
        const double hi = std::stod(parts[1]);
        const long n = std::stol(parts[2]);
        if (n < 1 || hi < lo || (n == 1 && hi != lo)) {
            throw ConfigError("");
        }
        std::vector<double> out;
        for (long i = 0; i < n; ++i) {
            out.push_back(n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
        }
        return out;
    } catch (const std::exception&) {
        throw ConfigError("--snr expects lo:hi:n with lo <= hi and n >= 1, got '" + text + "'");
    }
}

PipelineConfig resolve(const Options& o)
{
    PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : load_config(o.config);
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    if (o.out) {
        cfg.output_dir = *o.out;
    }
    if (o.epsilon) {
        cfg.epsilon = *o.epsilon;
    }
    if (o.repeats) {
        cfg.sweep.repeats = *o.repeats;
    }
    if (o.snr) {
        cfg.sweep.snr_db = parse_snr(*o.snr);
    }
    cfg.validate();
    return cfg;
}

std::string training_csv(const TrainReport& r)
{
    std::string out = "stage,epoch,loss\n";
    auto rows = [&](const char* stage, const std::vector<double>& losses) {
        for (std::size_t i = 0; i < losses.size(); ++i) {
            out += std::string(stage) + "," + std::to_string(i) + "," + format_real(losses[i]) + "\n";
        }
    };
    rows("audio_pretrain", r.audio_pretrain.losses);
    rows("video_pretrain", r.video_pretrain.losses);
    rows("generator_sync_expert", r.generator.sync_expert.losses);
    rows("generator_total", r.generator.total.losses);
    rows("audio_finetune", r.audio_finetune.losses);
    rows("video_finetune", r.video_finetune.losses);
    return out;
}

Models train_and_save(const PipelineConfig& cfg)
{
    std::cerr << "training models\n";
    const auto t = train_all(cfg);
    save_models(t.models, cfg.output_dir / "models");
    write_text(cfg.output_dir / "training.csv", training_csv(t.report));
    std::cerr << "stage 2 ran " << t.report.rounds << " rounds" << (t.report.converged ? " and converged" : "")
              << "; models saved to " << (cfg.output_dir / "models").string() << "\n";
    return t.models;
}

/// Models from <out>/models when present, otherwise freshly trained and saved.
Models obtain_models(const PipelineConfig& cfg, bool retrain)
{
    const auto dir = cfg.output_dir / "models";
    if (!retrain && fs::exists(dir / "audio.w2vp")) {
        return load_models(cfg, dir);
    }
    return train_and_save(cfg);
}

void emit(const PipelineConfig& cfg, const std::string& name, const std::string& text)
{
    write_text(cfg.output_dir / name, text);
    std::cout << text;
    std::cerr << "wrote " << (cfg.output_dir / name).string() << "\n";
}

void cmd_synth(const PipelineConfig& cfg)
{
    fs::create_directories(cfg.output_dir);
    const auto scene = make_scene(cfg.scene);
    media::write_clip(scene.clip, cfg.output_dir / "scene.w2vc");
    std::cerr << "wrote " << (cfg.output_dir / "scene.w2vc").string() << "\n";
}

void cmd_train(const PipelineConfig& cfg)
{
    train_and_save(cfg);
}

void cmd_run(const PipelineConfig& cfg, bool retrain)
{
    const auto models = obtain_models(cfg, retrain);
    const auto scene = make_scene(cfg.scene);
    std::string metrics = "snr_db,nrmse,segsnr,psnr,msssim,fid,video_clips,total_clips\n";
    std::string accounting;
    for (std::size_t c = 0; c < cfg.channels.size(); ++c) {
        const auto& ch = cfg.channels[c];
        const auto res = run_pipeline(cfg, models, scene, ch);
        const auto out = res.output();
        const auto q = evaluate(scene.clip, out);
        std::size_t sent = 0;
        for (const auto& t : res.transmissions) {
            sent += t.gate.transmit_video ? 1 : 0;
        }
        metrics += format_real(ch.snr_db) + "," + format_real(q.nrmse) + "," + format_real(q.segsnr) + "," +
                   format_real(q.psnr) + "," + format_real(q.msssim) + "," + format_real(q.fid) + "," +
                   std::to_string(sent) + "," + std::to_string(res.transmissions.size()) + "\n";
        media::write_clip(out, cfg.output_dir / ("output_" + std::to_string(c) + ".w2vc"));
        if (c == 0) {
            accounting = accounting_csv(table2_accounting(cfg, res.transmissions, cfg.scene.duration_s));
        }
    }
    emit(cfg, "run.csv", metrics);
    emit(cfg, "accounting.csv", accounting);
}

void cmd_sweep(const PipelineConfig& cfg, bool retrain)
{
    const auto models = obtain_models(cfg, retrain);
    const auto scene = make_scene(cfg.scene);
    emit(cfg, "sweep.csv", sweep_csv(snr_sweep(cfg, models, scene, cfg.sweep.snr_db, cfg.sweep.repeats)));
}

void cmd_account(const PipelineConfig& cfg, bool retrain)
{
    std::vector<ClipTransmission> transmissions;
    if (!cfg.rates.wav2vid) {
        const auto models = obtain_models(cfg, retrain);
        transmissions = run_pipeline(cfg, models, make_scene(cfg.scene), cfg.channels.front()).transmissions;
    }
    emit(cfg, "accounting.csv", accounting_csv(table2_accounting(cfg, transmissions, cfg.scene.duration_s)));
}

void cmd_compare(const PipelineConfig& cfg, bool retrain)
{
    const auto models = obtain_models(cfg, retrain);
    const auto rep = compare_wav2vid_vs_txt2vid_audio(cfg, models);
    emit(cfg, "compare.csv", compare_csv(rep));
    std::cerr << (rep.wav2vid_wins() ? "Wav2Vid beats the surrogate on both means\n"
                                     : "Wav2Vid does not beat the surrogate on both means\n");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Wav2Vid semantic audiovisual transmission simulator"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "Master seed");
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--snr", o.snr, "SNR grid lo:hi:n in dB for sweeps");
    app.add_option("--epsilon", o.epsilon, "Pose gate threshold");
    app.add_option("--repeats", o.repeats, "Channel realizations per SNR point");
    app.add_flag("--retrain", o.retrain, "Train even when saved models exist");

    auto* synth = app.add_subcommand("synth", "Render the synthetic scene to scene.w2vc");
    auto* train = app.add_subcommand("train", "Train all models and save checkpoints");
    auto* run = app.add_subcommand("run", "Transmit the scene over each configured channel");
    auto* sweep = app.add_subcommand("sweep", "Quality metrics over an SNR grid");
    auto* account = app.add_subcommand("account", "Transmission accounting against the baselines");
    auto* compare = app.add_subcommand("compare", "Wav2Vid against the time-warped audio surrogate");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const auto cfg = resolve(o);
        fs::create_directories(cfg.output_dir);
        if (synth->parsed()) {
            cmd_synth(cfg);
        } else if (train->parsed()) {
            cmd_train(cfg);
        } else if (run->parsed()) {
            cmd_run(cfg, o.retrain);
        } else if (sweep->parsed()) {
            cmd_sweep(cfg, o.retrain);
        } else if (account->parsed()) {
            cmd_account(cfg, o.retrain);
        } else if (compare->parsed()) {
            cmd_compare(cfg, o.retrain);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const TrainingFailure& e) {
        std::cerr << "training failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
