#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wav2vid/errors.hpp"
#include "wav2vid/harness.hpp"
#include "wav2vid/media.hpp"
#include "wav2vid/nn.hpp"
#include "wav2vid/training.hpp"

using namespace w2v;
using namespace w2v::harness;

namespace {

PipelineConfig short_config(double seconds = 4.0, media::MotionProfile profile = media::MotionProfile::gentle)
{
    PipelineConfig cfg;
    cfg.scene.duration_s = seconds;
    cfg.scene.profile = profile;
    return cfg;
}

PipelineConfig tiny_training_config()
{
    PipelineConfig cfg = short_config(2.0);
    auto& t = cfg.training;
    t.audio_clips = 2;
    t.audio_epochs = 6;
    t.video_clips = 2;
    t.video_clip_s = 0.4;
    t.video_autoencoder_steps = 60;
    t.video_refiner_steps = 10;
    t.video_prior_steps = 10;
    t.generator_clips = 2;
    t.generator_clip_s = 1.0;
    t.generator_sync_epochs = 2;
    t.generator_epochs = 3;
    t.finetune_audio_clips = 1;
    t.finetune_video_clips = 1;
    t.finetune_round = 4;
    t.finetune_max_epochs = 12;
    return cfg;
}

const Models& untrained()
{
    static const Models m = make_models(PipelineConfig{});
    return m;
}

const TrainedModels& tiny_trained()
{
    static const TrainedModels t = train_all(tiny_training_config());
    return t;
}

std::size_t video_clips(const PipelineResult& r)
{
    return static_cast<std::size_t>(std::count_if(r.transmissions.begin(), r.transmissions.end(),
                                                  [](const ClipTransmission& t) { return t.gate.transmit_video; }));
}

std::string field(const std::string& csv, std::size_t line, std::size_t column)
{
    std::istringstream in(csv);
    std::string row;
    for (std::size_t i = 0; i <= line; ++i) {
        std::getline(in, row);
    }
    std::istringstream cells(row);
    std::string cell;
    for (std::size_t i = 0; i <= column; ++i) {
        std::getline(cells, cell, ',');
    }
    return cell;
}

} // namespace

// Configuration -------------------------------------------------------------------

TEST(Config, EmptyObjectKeepsDefaults)
{
    const auto cfg = parse_config("{}");
    EXPECT_EQ(cfg.scene.duration_s, 18.0);
    EXPECT_EQ(cfg.clip_seconds, 1.0);
    EXPECT_EQ(cfg.sweep.repeats, 20u);
    EXPECT_EQ(cfg.sweep.snr_db, (std::vector<double>{0, 5, 10, 15, 20}));
    EXPECT_FALSE(cfg.rates.wav2vid.has_value());
    EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, OverridesAreApplied)
{
    const auto cfg = parse_config(R"({
        "scene": {"seed": 7, "duration_s": 6, "profile": "turning"},
        "clip_seconds": 2, "epsilon": 1.5,
        "channels": [{"snr_db": 3, "fading": "awgn", "block_size": 8, "seed": 4}, {"snr_db": 12}],
        "rates": {"wav2vid": {"video": 10, "audio": 2}},
        "sweep": {"snr_db": [1, 2], "repeats": 3},
        "compare": {"seconds": 4},
        "seed": 99, "output_dir": "elsewhere"
    })");
    EXPECT_EQ(cfg.scene.seed, 7u);
    EXPECT_EQ(cfg.scene.profile, media::MotionProfile::turning);
    EXPECT_EQ(cfg.clip_seconds, 2.0);
    EXPECT_EQ(cfg.epsilon, 1.5);
    ASSERT_EQ(cfg.channels.size(), 2u);
    EXPECT_EQ(cfg.channels[0].fading, channel::Fading::awgn_only);
    EXPECT_EQ(cfg.channels[0].block_size, 8u);
    EXPECT_EQ(cfg.channels[1].snr_db, 12.0);
    ASSERT_TRUE(cfg.rates.wav2vid.has_value());
    EXPECT_EQ(cfg.rates.wav2vid->video, 10.0);
    EXPECT_EQ(cfg.sweep.repeats, 3u);
    EXPECT_EQ(cfg.seed, 99u);
    EXPECT_EQ(cfg.output_dir, std::filesystem::path("elsewhere"));
}

TEST(Config, RejectsBadInput)
{
    for (const char* text : {
             "not json",
             "[1, 2]",
             R"({"bogus": 1})",
             R"({"scene": {"duraton_s": 4}})",
             R"({"epsilon": "big"})",
             R"({"epsilon": -1})",
             R"({"scene": {"profile": "dancing"}})",
             R"({"scene": {"duration_s": 18}, "clip_seconds": 5})",
             R"({"clip_seconds": 0.01})",
             R"({"scene": {"fps": 30}})",
             R"({"sweep": {"repeats": 0}})",
             R"({"sweep": {"repeats": -2}})",
             R"({"channels": []})",
             R"({"channels": [{"fading": "rician"}]})",
             R"({"rates": {"traditional": {"video": 0, "audio": 0}}})",
             R"({"rates": {"dvst": {"video": -1}}})",
             R"({"generator": {"w_s": 0.8, "w_g": 0.5}})",
             R"({"training": {"finetune_audio_clips": 20}})",
             R"({"compare": {"seconds": 1}})",
             R"({"compare": {"warp_factor": 0.5}})",
         }) {
        EXPECT_THROW(parse_config(text), ConfigError) << text;
    }
}

TEST(Config, LoadsShippedConfigs)
{
    for (const char* name : {"table2.json", "desk.json", "smoke.json"}) {
        EXPECT_NO_THROW(load_config(std::filesystem::path(W2V_SOURCE_DIR) / "configs" / name)) << name;
    }
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

// Accounting ----------------------------------------------------------------------

TEST(Accounting, DeclaredRates)
{
    const auto cfg = load_config(std::filesystem::path(W2V_SOURCE_DIR) / "configs" / "table2.json");
    const auto rep = table2_accounting(cfg, {}, 18.0);
    ASSERT_EQ(rep.rows.size(), 4u);
    EXPECT_NEAR(rep.row("traditional").total_units, 16e6, 1.0);
    EXPECT_NEAR(rep.row("dvst").total_units, 11e6, 1.0);
    EXPECT_NEAR(rep.row("txt2vid").total_units, 2.6e6, 1.0);
    EXPECT_NEAR(rep.row("wav2vid").total_units, 2.6e6, 1.0);
    EXPECT_NEAR(rep.row("wav2vid").reduction_vs_traditional, 0.8375, 1e-9);
    EXPECT_NEAR(rep.row("dvst").reduction_vs_traditional, 0.3125, 1e-9);
    EXPECT_EQ(rep.row("traditional").reduction_vs_traditional, 0.0);
    EXPECT_EQ(rep.row("traditional").unit, "byte");
    for (const auto& r : rep.rows) {
        EXPECT_DOUBLE_EQ(r.total_units, r.video_units + r.audio_units + r.side_units) << r.method;
    }
    EXPECT_THROW(rep.row("mpeg"), InvalidArgument);
}

TEST(Accounting, MeasuredRowSumsTransmissions)
{
    const PipelineConfig cfg;
    std::vector<ClipTransmission> tx(3);
    for (std::size_t i = 0; i < 3; ++i) {
        tx[i].gate.transmit_video = i == 0;
        tx[i].video_symbols = i == 0 ? 1000 : 0;
        tx[i].video_side = i == 0 ? 75 : 0;
        tx[i].audio_symbols = 250;
        tx[i].audio_side = 1;
    }
    const auto w = table2_accounting(cfg, tx, 3.0).row("wav2vid");
    EXPECT_EQ(w.video_units, 1000.0);
    EXPECT_EQ(w.audio_units, 750.0);
    EXPECT_EQ(w.side_units, 78.0);
    EXPECT_EQ(w.total_units, 1828.0);
    EXPECT_EQ(w.unit, "symbol");

    for (auto& t : tx) {
        t.gate.transmit_video = false;
        t.video_symbols = t.video_side = 0;
    }
    EXPECT_EQ(table2_accounting(cfg, tx, 3.0).row("wav2vid").video_units, 0.0);
}

TEST(Accounting, CsvLayout)
{
    const auto cfg = load_config(std::filesystem::path(W2V_SOURCE_DIR) / "configs" / "table2.json");
    const auto csv = accounting_csv(table2_accounting(cfg, {}, 18.0));
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "method,video_units,audio_units,side_units,total_units,unit,reduction_vs_traditional");
    EXPECT_EQ(field(csv, 4, 0), "wav2vid");
    EXPECT_EQ(field(csv, 4, 4), "2.6e+06");
    EXPECT_EQ(field(csv, 4, 6), "0.8375");
}

// Pipeline ------------------------------------------------------------------------

TEST(Pipeline, StaticSceneSendsVideoOnlyForTheFirstClip)
{
    const auto cfg = short_config(4.0, media::MotionProfile::static_pose);
    const auto scene = make_scene(cfg.scene);
    const auto r = run_pipeline(cfg, untrained(), scene, cfg.channels.front());
    ASSERT_EQ(r.transmissions.size(), 4u);
    EXPECT_TRUE(r.transmissions[0].gate.transmit_video);
    for (std::size_t i = 1; i < 4; ++i) {
        EXPECT_FALSE(r.transmissions[i].gate.transmit_video) << i;
        EXPECT_EQ(r.transmissions[i].video_symbols, 0u);
    }
    EXPECT_EQ(r.video_streams.size(), 1u);
    const auto out = r.output();
    EXPECT_EQ(out.video.length(), scene.clip.video.length());
    EXPECT_EQ(out.audio.length(), scene.clip.audio.length());
}

TEST(Pipeline, ZeroThresholdOnTurningSceneSendsEveryClip)
{
    auto cfg = short_config(4.0, media::MotionProfile::turning);
    const auto scene = make_scene(cfg.scene);
    const auto scores = gate_scores(cfg, scene);
    cfg.epsilon = *std::min_element(scores.begin() + 1, scores.end());
    const auto r = run_pipeline(cfg, untrained(), scene, cfg.channels.front());
    EXPECT_EQ(video_clips(r), 4u);
}

TEST(Pipeline, MeterMatchesTransmissions)
{
    auto cfg = short_config(4.0, media::MotionProfile::turning);
    const auto scene = make_scene(cfg.scene);
    const auto r = run_pipeline(cfg, untrained(), scene, cfg.channels.front());
    std::size_t v = 0, a = 0;
    for (const auto& t : r.transmissions) {
        v += t.video_symbols;
        a += t.audio_symbols;
        EXPECT_EQ(t.audio_side, 1u);
    }
    EXPECT_EQ(r.meter.video, v);
    EXPECT_EQ(r.meter.audio, a);
    EXPECT_EQ(r.meter.passes, r.transmissions.size() + r.video_streams.size());
    const auto acc = table2_accounting(cfg, r.transmissions, cfg.scene.duration_s).row("wav2vid");
    EXPECT_EQ(acc.video_units, static_cast<double>(r.meter.video));
}

TEST(Pipeline, ZeroEpsilonMatchesAlwaysTransmitPath)
{
    auto cfg = short_config(3.0);
    cfg.epsilon = 0.0;
    const auto scene = make_scene(cfg.scene);
    const auto gated = run_pipeline(cfg, untrained(), scene, cfg.channels.front());
    const auto always = run_pipeline(cfg, untrained(), scene, cfg.channels.front(), GateMode::always);
    EXPECT_EQ(video_clips(gated), 3u);
    EXPECT_EQ(media::encode_clip(gated.output()), media::encode_clip(always.output()));
    EXPECT_EQ(gated.meter.video, always.meter.video);
}

TEST(Pipeline, GatingIsMonotoneInEpsilon)
{
    auto cfg = short_config(6.0);
    const auto scene = make_scene(cfg.scene);
    std::size_t prev = 7;
    for (double eps : {0.0, 1.0, 3.0, 5.0, 8.0, 90.0}) {
        cfg.epsilon = eps;
        const auto n = video_clips(run_pipeline(cfg, untrained(), scene, cfg.channels.front()));
        EXPECT_LE(n, prev) << eps;
        EXPECT_GE(n, 1u);
        prev = n;
    }
    EXPECT_EQ(prev, 1u);
}

TEST(Pipeline, Deterministic)
{
    const auto cfg = short_config(3.0, media::MotionProfile::turning);
    const auto scene = make_scene(cfg.scene);
    const auto a = run_pipeline(cfg, untrained(), scene, cfg.channels.front());
    const auto b = run_pipeline(cfg, untrained(), scene, cfg.channels.front());
    EXPECT_EQ(media::encode_clip(a.output()), media::encode_clip(b.output()));
    auto other = cfg.channels.front();
    other.seed = 1234;
    const auto c = run_pipeline(cfg, untrained(), scene, other);
    EXPECT_NE(media::encode_clip(a.output()), media::encode_clip(c.output()));
}

TEST(Pipeline, ErrorsNameTheClip)
{
    const auto cfg = short_config(2.0);
    const auto scene = make_scene(cfg.scene);
    auto ch = cfg.channels.front();
    ch.block_size = 0;
    try {
        run_pipeline(cfg, untrained(), scene, ch);
        FAIL() << "expected InvalidArgument";
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("clip 0"), std::string::npos) << e.what();
    }
}

// Time warp -----------------------------------------------------------------------

TEST(TimeWarp, IdentityAtUnitFactor)
{
    const auto scene = make_scene(short_config(2.0).scene);
    const auto out = time_warp(scene.clip.audio, 1.0, 0.3, 5);
    EXPECT_EQ(out.samples, scene.clip.audio.samples);
}

TEST(TimeWarp, MonotoneMappingWithTrailingSilence)
{
    media::AudioWaveform ramp;
    ramp.sample_rate = 8000.0;
    for (std::size_t i = 0; i < 16000; ++i) {
        ramp.samples.push_back(static_cast<double>(i) / 16000.0);
    }
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto out = time_warp(ramp, 1.3, 0.3, seed);
        ASSERT_EQ(out.length(), ramp.length());
        EXPECT_EQ(out.sample_rate, ramp.sample_rate);
        // A ramp read through a monotone map stays non-decreasing until the source runs out.
        std::size_t i = 1;
        for (; i < out.length() && out.samples[i] != 0.0; ++i) {
            EXPECT_GE(out.samples[i], out.samples[i - 1]) << seed << " " << i;
        }
        const double expected_end = 16000.0 / 1.3;
        EXPECT_NEAR(static_cast<double>(i), expected_end, 0.3 * 0.25 * 8000.0 * 0.3 + 2.0);
        for (; i < out.length(); ++i) {
            EXPECT_EQ(out.samples[i], 0.0);
        }
    }
}

TEST(TimeWarp, RejectsBadArguments)
{
    media::AudioWaveform a;
    a.sample_rate = 8000.0;
    a.samples.assign(100, 0.1);
    EXPECT_THROW(time_warp(a, 0.9, 0.1, 0), InvalidArgument);
    EXPECT_THROW(time_warp(a, 1.2, 0.5, 0), InvalidArgument);
    EXPECT_THROW(time_warp(a, 1.2, -0.1, 0), InvalidArgument);
}

TEST(Compare, IdentityWarpGivesEqualConditions)
{
    auto cfg = short_config();
    cfg.compare.seeds = 2;
    cfg.compare.seconds = 3.0;
    cfg.compare.warp_factor = 1.0;
    const auto rep = compare_wav2vid_vs_txt2vid_audio(cfg, untrained());
    ASSERT_EQ(rep.rows.size(), 2u);
    for (const auto& r : rep.rows) {
        EXPECT_EQ(r.wav2vid_r, r.surrogate_r);
        EXPECT_EQ(r.wav2vid_fid, r.surrogate_fid);
    }
    EXPECT_FALSE(rep.wav2vid_wins());
    const auto csv = compare_csv(rep);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "seed,wav2vid_sync_r,surrogate_sync_r,wav2vid_fid,surrogate_fid");
    EXPECT_EQ(field(csv, 3, 0), "mean");
}

// Sweep ---------------------------------------------------------------------------

TEST(Sweep, CsvRowsSortedWithSixDigits)
{
    const auto cfg = short_config(2.0);
    const auto scene = make_scene(cfg.scene);
    const std::vector<double> snr{20.0, 0.0, 10.0};
    const auto rep = snr_sweep(cfg, untrained(), scene, snr, 1);
    ASSERT_EQ(rep.rows.size(), 3u);
    EXPECT_EQ(rep.rows[0].snr_db, 0.0);
    EXPECT_EQ(rep.rows[2].snr_db, 20.0);
    for (const auto& r : rep.rows) {
        EXPECT_EQ(r.std.psnr, 0.0);
        EXPECT_EQ(r.std.nrmse, 0.0);
    }
    const auto csv = sweep_csv(rep);
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "snr_db,nrmse_mean,nrmse_std,segsnr_mean,segsnr_std,psnr_mean,psnr_std,msssim_mean,msssim_std,"
              "fid_mean,fid_std");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_EQ(field(csv, 2, 0), "10");
    EXPECT_EQ(field(csv, 2, 5), format_real(rep.rows[1].mean.psnr));
    EXPECT_THROW(snr_sweep(cfg, untrained(), scene, snr, 0), InvalidArgument);
}

TEST(Sweep, RepeatsGiveSpread)
{
    const auto cfg = short_config(2.0);
    const auto scene = make_scene(cfg.scene);
    const std::vector<double> snr{5.0};
    const auto rep = snr_sweep(cfg, untrained(), scene, snr, 3);
    EXPECT_EQ(rep.repeats, 3u);
    EXPECT_GT(rep.rows[0].std.nrmse, 0.0);
}

TEST(Reporting, FormatRealUsesSixSignificantDigits)
{
    EXPECT_EQ(format_real(0.8375), "0.8375");
    EXPECT_EQ(format_real(2.6e6), "2.6e+06");
    EXPECT_EQ(format_real(3.14159265), "3.14159");
    EXPECT_EQ(format_real(123456789.0), "1.23457e+08");
}

// Training ------------------------------------------------------------------------

TEST(TrainAll, FreezeContract)
{
    const auto& t = tiny_trained();
    using A = audio::AudioCodecModel;
    using V = video::VideoCodecModel;
    EXPECT_TRUE(t.models.audio.params.nets_equal(t.offline.audio.params, {A::kExtractor, A::kSynthesizer}));
    EXPECT_FALSE(t.models.audio.params.nets_equal(t.offline.audio.params, {A::kAggregator, A::kDecomposer}));
    EXPECT_TRUE(
        t.models.video.params.nets_equal(t.offline.video.params, {V::kExtractor, V::kSynthesizer, V::kRefiner}));
    EXPECT_FALSE(t.models.video.params.nets_equal(t.offline.video.params, {V::kProjection, V::kInverse}));
    EXPECT_TRUE(t.models.generator.params == t.offline.generator.params);
    EXPECT_FALSE(t.models == make_models(tiny_training_config()));
}

TEST(TrainAll, LogsAndRounds)
{
    const auto& t = tiny_trained();
    const auto& r = t.report;
    EXPECT_EQ(r.audio_pretrain.losses.size(), 6u);
    EXPECT_EQ(r.audio_finetune.losses.size(), r.video_finetune.losses.size());
    EXPECT_LE(r.audio_finetune.losses.size(), 12u);
    EXPECT_EQ(r.rounds, (r.audio_finetune.losses.size() + 3) / 4);
    EXPECT_EQ(r.converged, r.audio_finetune.losses.size() < 12u);
    EXPECT_LT(r.audio_pretrain.final(), r.audio_pretrain.initial());
    const auto s = smoothed(r.audio_finetune.losses, 4);
    EXPECT_LE(s.back(), s.front());
}

TEST(TrainAll, Deterministic)
{
    const auto again = train_all(tiny_training_config());
    EXPECT_TRUE(again.models == tiny_trained().models);
    EXPECT_EQ(again.report.audio_finetune.losses, tiny_trained().report.audio_finetune.losses);
}

TEST(TrainAll, RejectsInvalidConfig)
{
    auto cfg = tiny_training_config();
    cfg.training.finetune_video_clips = 5;
    EXPECT_THROW(train_all(cfg), ConfigError);
}

TEST(Checkpoints, SaveLoadRoundTrip)
{
    const auto dir = std::filesystem::temp_directory_path() / "w2v_harness_models";
    std::filesystem::remove_all(dir);
    save_models(tiny_trained().models, dir);
    for (const char* f : {"audio.w2vp", "video.w2vp", "generator.w2vp"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    }
    const auto loaded = load_models(tiny_training_config(), dir);
    // Compared at the float32 precision of the checkpoint.
    const auto& m = tiny_trained().models;
    EXPECT_EQ(nn::serialize_parameters(loaded.audio.params), nn::serialize_parameters(m.audio.params));
    EXPECT_EQ(nn::serialize_parameters(loaded.video.params), nn::serialize_parameters(m.video.params));
    EXPECT_EQ(nn::serialize_parameters(loaded.generator.params), nn::serialize_parameters(m.generator.params));
    EXPECT_EQ(loaded.video.params.frozen_names(), m.video.params.frozen_names());
    std::filesystem::remove(dir / "video.w2vp");
    EXPECT_THROW(load_models(tiny_training_config(), dir), IoError);
    std::filesystem::remove_all(dir);
}
