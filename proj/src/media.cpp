#include "wav2vid/media.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "binary_io.hpp"
#include "wav2vid/errors.hpp"
#include "wav2vid/rng.hpp"

namespace w2v::media {

namespace {

constexpr double kPi = std::numbers::pi;

inline double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline double deg2rad(double d) { return d * kPi / 180.0; }

std::array<std::array<double, 3>, 3> rotation(const Pose& p)
{
    // R = Rz(roll) * Ry(yaw) * Rx(pitch)
    const double cy = std::cos(deg2rad(p.yaw)), sy = std::sin(deg2rad(p.yaw));
    const double cp = std::cos(deg2rad(p.pitch)), sp = std::sin(deg2rad(p.pitch));
    const double cr = std::cos(deg2rad(p.roll)), sr = std::sin(deg2rad(p.roll));
    return {{{cr * cy, cr * sy * sp - sr * cp, cr * sy * cp + sr * sp},
             {sr * cy, sr * sy * sp + cr * cp, sr * sy * cp - cr * sp},
             {-sy, cy * sp, cy * cp}}};
}

} // namespace

void AudioWaveform::validate() const
{
    if (!(sample_rate > 0.0)) {
        throw InvalidArgument("audio sample rate must be positive");
    }
    if (samples.empty()) {
        throw InvalidArgument("audio waveform is empty");
    }
    for (double s : samples) {
        if (!std::isfinite(s)) {
            throw InvalidArgument("audio waveform contains non-finite samples");
        }
    }
}

void VideoClip::validate() const
{
    if (!(fps > 0.0) || !(peak > 0.0)) {
        throw InvalidArgument("video fps and peak must be positive");
    }
    if (frames.empty()) {
        throw InvalidArgument("video clip has no frames");
    }
    for (const auto& f : frames) {
        if (f.width != width || f.height != height || f.pixels.size() != width * height) {
            throw InvalidArgument("video frames must share the clip dimensions");
        }
        for (double v : f.pixels) {
            if (!(v >= 0.0 && v <= peak)) {
                throw InvalidArgument("video intensity outside [0, peak]");
            }
        }
    }
}

void AudiovisualClip::validate() const
{
    audio.validate();
    video.validate();
    if (std::abs(audio.duration() - video.duration()) > 1.0 / video.fps + 1e-9) {
        throw InvalidArgument("audio and video durations differ by more than one frame");
    }
}

void SceneParams::validate() const
{
    if (poses.size() != mouth_openness.size() || poses.empty()) {
        throw InvalidArgument("scene trajectories must be non-empty and of equal length");
    }
    for (const auto& p : poses) {
        if (std::abs(p.yaw) > 45.0 || std::abs(p.pitch) > 45.0 || std::abs(p.roll) > 45.0) {
            throw InvalidArgument("scene pose exceeds 45 degrees");
        }
    }
    for (double m : mouth_openness) {
        if (!(m >= 0.0 && m <= 1.0)) {
            throw InvalidArgument("mouth openness outside [0, 1]");
        }
    }
}

LandmarkModel canonical_landmarks()
{
    return {{{-0.35, 0.35, 0.45}, {0.35, 0.35, 0.45}, {0.0, 0.0, 0.75}, {-0.28, -0.45, 0.45}, {0.28, -0.45, 0.45}}};
}

MouthRegion mouth_region(const FacePlacement& face, std::size_t width, std::size_t height)
{
    MouthRegion r;
    const double cy = face.center_y + 0.45 * face.scale;
    const double y0 = std::round(cy - static_cast<double>(r.h) / 2.0);
    const double x0 = std::round(face.center_x - static_cast<double>(r.w) / 2.0);
    r.y0 = static_cast<std::size_t>(std::clamp(y0, 0.0, static_cast<double>(height - r.h)));
    r.x0 = static_cast<std::size_t>(std::clamp(x0, 0.0, static_cast<double>(width - r.w)));
    return r;
}

Landmarks2d project_landmarks(const LandmarkModel& model, const Pose& pose, const FacePlacement& face)
{
    const auto R = rotation(pose);
    Landmarks2d out;
    for (std::size_t i = 0; i < model.size(); ++i) {
        const auto& p = model[i];
        const double X = R[0][0] * p.x + R[0][1] * p.y + R[0][2] * p.z;
        const double Y = R[1][0] * p.x + R[1][1] * p.y + R[1][2] * p.z;
        out[i] = {face.center_x + face.scale * X, face.center_y - face.scale * Y};
    }
    return out;
}

Landmarks2d project_landmarks(const SceneParams& scene, std::size_t t)
{
    return project_landmarks(scene.landmarks, scene.poses.at(t), scene.face);
}

Frame render_frame(const SceneParams& scene, std::size_t t)
{
    const std::size_t W = scene.width, H = scene.height;
    Frame f(H, W);
    const auto lm = project_landmarks(scene, t);
    const double openness = scene.mouth_openness.at(t);
    const auto& face = scene.face;
    const double fa = 0.85 * face.scale, fb = 1.1 * face.scale;
    const double mx = 0.5 * (lm[3].x + lm[4].x), my = 0.5 * (lm[3].y + lm[4].y);
    const double ma = 0.28 * face.scale, mb = openness * 0.16 * face.scale;
    const auto& tex = scene.texture;

    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const double px = static_cast<double>(x), py = static_cast<double>(y);
            double v = 0.25 + tex.amplitude * std::sin(2.0 * kPi * (tex.freq_x * px / static_cast<double>(W) +
                                                                  tex.freq_y * py / static_cast<double>(H)) +
                                                       tex.phase);
            const double dx = (px - face.center_x) / fa, dy = (py - face.center_y) / fb;
            const double dist_px = (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(fa, fb);
            const double alpha = std::clamp(0.5 - dist_px, 0.0, 1.0);
            if (alpha > 0.0) {
                double skin = kFaceLevel;
                for (std::size_t k = 0; k < lm.size(); ++k) {
                    const double sigma = k < 3 ? 1.0 : 0.8;
                    const double depth = k < 3 ? 0.35 : 0.15;
                    const double ex = px - lm[k].x, ey = py - lm[k].y;
                    skin -= depth * std::exp(-(ex * ex + ey * ey) / (2.0 * sigma * sigma));
                }
                v = v * (1.0 - alpha) + skin * alpha;
            }
            if (mb > 1e-6 && std::abs(px - mx) <= ma + 1.0 && std::abs(py - my) <= mb + 1.0) {
                int inside = 0;
                for (int sy = 0; sy < 4; ++sy) {
                    for (int sx = 0; sx < 4; ++sx) {
                        const double qx = (px - 0.375 + 0.25 * sx - mx) / ma;
                        const double qy = (py - 0.375 + 0.25 * sy - my) / mb;
                        inside += (qx * qx + qy * qy <= 1.0) ? 1 : 0;
                    }
                }
                const double c = inside / 16.0;
                v = v * (1.0 - c) + kMouthLevel * c;
            }
            f(y, x) = f32(std::clamp(v, 0.0, 1.0));
        }
    }
    return f;
}

VideoClip render_video(const SceneParams& scene, double fps, double peak)
{
    VideoClip v;
    v.width = scene.width;
    v.height = scene.height;
    v.fps = fps;
    v.peak = peak;
    v.frames.reserve(scene.length());
    for (std::size_t t = 0; t < scene.length(); ++t) {
        v.frames.push_back(render_frame(scene, t));
    }
    return v;
}

std::size_t frame_count(const AudioWaveform& audio, double fps)
{
    const double n = static_cast<double>(audio.length()) * fps / audio.sample_rate;
    return static_cast<std::size_t>(std::ceil(n - 1e-9));
}

namespace {

std::size_t window_start(std::size_t t, double fps, double sample_rate)
{
    return static_cast<std::size_t>(std::ceil(static_cast<double>(t) * sample_rate / fps - 1e-9));
}

} // namespace

AudioWaveform frame_window(const AudioWaveform& audio, std::size_t t, double fps)
{
    if (!(fps > 0.0)) {
        throw InvalidArgument("fps must be positive");
    }
    if (t >= frame_count(audio, fps)) {
        throw InvalidArgument("frame index " + std::to_string(t) + " beyond audio end");
    }
    const std::size_t lo = window_start(t, fps, audio.sample_rate);
    const std::size_t hi = std::min(window_start(t + 1, fps, audio.sample_rate), audio.length());
    AudioWaveform w;
    w.sample_rate = audio.sample_rate;
    w.samples.assign(audio.samples.begin() + static_cast<std::ptrdiff_t>(lo),
                     audio.samples.begin() + static_cast<std::ptrdiff_t>(hi));
    return w;
}

std::vector<double> frame_rms(const AudioWaveform& audio, double fps, std::size_t frames)
{
    std::vector<double> rms(frames, 0.0);
    const std::size_t available = frame_count(audio, fps);
    for (std::size_t t = 0; t < std::min(frames, available); ++t) {
        const auto w = frame_window(audio, t, fps);
        double e = 0.0;
        for (double s : w.samples) {
            e += s * s;
        }
        rms[t] = w.samples.empty() ? 0.0 : std::sqrt(e / static_cast<double>(w.samples.size()));
    }
    return rms;
}

double mouth_darkness(const Frame& frame, const MouthRegion& region)
{
    double acc = 0.0;
    for (std::size_t y = region.y0; y < region.y0 + region.h; ++y) {
        for (std::size_t x = region.x0; x < region.x0 + region.w; ++x) {
            acc += std::max(0.0, kFaceLevel - frame(y, x));
        }
    }
    return acc / static_cast<double>(region.h * region.w);
}

// Scene synthesis -----------------------------------------------------------------

namespace {

std::vector<double> synth_audio(Rng& rng, std::size_t n, double sample_rate)
{
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double duration = static_cast<double>(n) / sample_rate;

    // Syllable envelope: alternating voiced segments and pauses, smoothed.
    std::vector<double> target(n, 0.0);
    double t0 = 0.0;
    while (t0 < duration) {
        const double len = 0.12 + 0.23 * u01(rng);
        const bool voiced = u01(rng) < 0.7;
        const double level = voiced ? 0.5 + 0.5 * u01(rng) : 0.0;
        const auto a = static_cast<std::size_t>(t0 * sample_rate);
        const auto b = std::min(n, static_cast<std::size_t>((t0 + len) * sample_rate));
        for (std::size_t i = a; i < b; ++i) {
            target[i] = level;
        }
        t0 += len;
    }
    std::vector<double> env(n);
    const double a_env = std::exp(-1.0 / (0.015 * sample_rate));
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        e = a_env * e + (1.0 - a_env) * target[i];
        env[i] = e;
    }

    struct Carrier {
        double freq, phase, amp, mod_freq, mod_phase;
    };
    std::array<Carrier, 3> carriers;
    for (auto& c : carriers) {
        c = {110.0 + 220.0 * u01(rng), 2.0 * kPi * u01(rng), 0.5 + 0.5 * u01(rng), 2.0 + 4.0 * u01(rng),
             2.0 * kPi * u01(rng)};
    }

    std::normal_distribution<double> gauss(0.0, 1.0);
    const double a_lp = std::exp(-2.0 * kPi * 400.0 / sample_rate);
    double lp = 0.0;
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        double tone = 0.0;
        for (const auto& c : carriers) {
            tone += c.amp * (1.0 + 0.3 * std::sin(2.0 * kPi * c.mod_freq * t + c.mod_phase)) *
                    std::sin(2.0 * kPi * c.freq * t + c.phase);
        }
        lp = a_lp * lp + (1.0 - a_lp) * gauss(rng);
        s[i] = env[i] * tone + 0.02 * lp;
    }
    return s;
}

std::vector<Pose> synth_poses(Rng& rng, std::size_t frames, double fps, MotionProfile profile)
{
    std::vector<Pose> poses(frames);
    if (profile == MotionProfile::static_pose) {
        return poses;
    }
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    struct Wave {
        double amp, freq, phase;
    };
    auto gentle_track = [&]() {
        std::array<Wave, 2> w;
        for (auto& x : w) {
            x = {0.5 + 1.5 * u01(rng), 0.05 + 0.25 * u01(rng), 2.0 * kPi * u01(rng)};
        }
        return w;
    };
    const auto yaw = gentle_track();
    const auto pitch = gentle_track();
    const auto roll = gentle_track();
    const double turn_phase = 2.0 * kPi * u01(rng);
    auto eval = [](const std::array<Wave, 2>& w, double t) {
        double v = 0.0;
        for (const auto& x : w) {
            v += x.amp * (std::sin(2.0 * kPi * x.freq * t + x.phase) - std::sin(x.phase));
        }
        return v;
    };
    for (std::size_t i = 0; i < frames; ++i) {
        const double t = static_cast<double>(i) / fps;
        auto& p = poses[i];
        p.pitch = eval(pitch, t);
        p.roll = eval(roll, t);
        if (profile == MotionProfile::turning) {
            p.yaw = 30.0 * std::sin(2.0 * kPi * t / 4.0 + turn_phase);
        } else {
            p.yaw = eval(yaw, t);
        }
    }
    return poses;
}

} // namespace

std::pair<AudiovisualClip, SceneParams> synth_scene(std::uint64_t seed, double duration_s, double fps,
                                                    double sample_rate, MotionProfile profile,
                                                    SceneOptions options)
{
    if (!(duration_s > 0.0) || !(fps > 0.0) || !(sample_rate > 0.0)) {
        throw InvalidArgument("synth_scene: duration, fps and sample rate must be positive");
    }
    if (options.width < 32 || options.height < 32) {
        throw InvalidArgument("synth_scene: frames must be at least 32x32");
    }
    const auto n_samples = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
    const auto n_frames = static_cast<std::size_t>(std::llround(duration_s * fps));
    if (n_samples == 0 || n_frames == 0) {
        throw InvalidArgument("synth_scene: duration too short for the sampling rates");
    }

    Rng rng(split_seed(seed, {0x5CE7E}));
    AudiovisualClip clip;
    clip.audio.sample_rate = f32(sample_rate);
    clip.audio.samples = synth_audio(rng, n_samples, sample_rate);

    auto rms = frame_rms(clip.audio, fps, n_frames);
    const double max_rms = *std::max_element(rms.begin(), rms.end());
    double gain = max_rms > 0.0 ? 0.35 / max_rms : 1.0;
    double peak_abs = 0.0;
    for (double s : clip.audio.samples) {
        peak_abs = std::max(peak_abs, std::abs(s));
    }
    if (peak_abs * gain > 0.99) {
        gain = 0.99 / peak_abs;
    }
    for (auto& s : clip.audio.samples) {
        s = f32(s * gain);
    }

    SceneParams scene;
    scene.width = options.width;
    scene.height = options.height;
    scene.face = {static_cast<double>(options.width) / 2.0, static_cast<double>(options.height) / 2.0,
                  0.3 * static_cast<double>(std::min(options.width, options.height))};
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    scene.texture = {1.0 + std::floor(3.0 * u01(rng)), 1.0 + std::floor(3.0 * u01(rng)), 2.0 * kPi * u01(rng), 0.06};
    scene.poses = synth_poses(rng, n_frames, fps, profile);

    rms = frame_rms(clip.audio, fps, n_frames);
    const double top = *std::max_element(rms.begin(), rms.end());
    scene.mouth_openness.resize(n_frames);
    for (std::size_t t = 0; t < n_frames; ++t) {
        scene.mouth_openness[t] = top > 0.0 ? std::clamp(rms[t] / top, 0.0, 1.0) : 0.0;
    }

    clip.video = render_video(scene, f32(fps), 1.0);
    return {std::move(clip), std::move(scene)};
}

// Segmentation --------------------------------------------------------------------

std::vector<ClipSpan> segment(const AudiovisualClip& clip, double seconds)
{
    if (!(seconds > 0.0)) {
        throw InvalidArgument("segment length must be positive");
    }
    const auto fpc = static_cast<std::size_t>(std::llround(seconds * clip.video.fps));
    const auto spc = static_cast<std::size_t>(std::llround(seconds * clip.audio.sample_rate));
    if (fpc == 0 || spc == 0) {
        throw InvalidArgument("segment shorter than one frame");
    }
    std::vector<ClipSpan> spans;
    for (std::size_t f = 0, s = 0; f < clip.video.length(); f += fpc, s += spc) {
        ClipSpan sp;
        sp.first_frame = f;
        sp.frames = std::min(fpc, clip.video.length() - f);
        sp.first_sample = std::min(s, clip.audio.length());
        const bool last = f + fpc >= clip.video.length();
        sp.samples = last ? clip.audio.length() - sp.first_sample
                          : std::min(spc, clip.audio.length() - sp.first_sample);
        spans.push_back(sp);
    }
    return spans;
}

AudiovisualClip slice(const AudiovisualClip& clip, const ClipSpan& span)
{
    if (span.first_frame + span.frames > clip.video.length() || span.first_sample + span.samples > clip.audio.length()) {
        throw InvalidArgument("slice exceeds clip bounds");
    }
    AudiovisualClip out;
    out.audio.sample_rate = clip.audio.sample_rate;
    out.audio.samples.assign(clip.audio.samples.begin() + static_cast<std::ptrdiff_t>(span.first_sample),
                             clip.audio.samples.begin() + static_cast<std::ptrdiff_t>(span.first_sample + span.samples));
    out.video.width = clip.video.width;
    out.video.height = clip.video.height;
    out.video.fps = clip.video.fps;
    out.video.peak = clip.video.peak;
    out.video.frames.assign(clip.video.frames.begin() + static_cast<std::ptrdiff_t>(span.first_frame),
                            clip.video.frames.begin() + static_cast<std::ptrdiff_t>(span.first_frame + span.frames));
    return out;
}

AudiovisualClip concatenate(std::span<const AudiovisualClip> parts)
{
    if (parts.empty()) {
        throw InvalidArgument("nothing to concatenate");
    }
    AudiovisualClip out;
    out.audio.sample_rate = parts.front().audio.sample_rate;
    out.video.width = parts.front().video.width;
    out.video.height = parts.front().video.height;
    out.video.fps = parts.front().video.fps;
    out.video.peak = parts.front().video.peak;
    for (const auto& p : parts) {
        out.audio.samples.insert(out.audio.samples.end(), p.audio.samples.begin(), p.audio.samples.end());
        out.video.frames.insert(out.video.frames.end(), p.video.frames.begin(), p.video.frames.end());
    }
    return out;
}

// File I/O ------------------------------------------------------------------------

namespace {
constexpr char kClipMagic[4] = {'W', '2', 'V', 'C'};
constexpr std::uint16_t kClipVersion = 1;
} // namespace

std::vector<std::uint8_t> encode_clip(const AudiovisualClip& clip)
{
    const auto& v = clip.video;
    if (v.width > 0xFFFF || v.height > 0xFFFF || clip.audio.length() > 0xFFFFFFFFu || v.length() > 0xFFFFFFFFu) {
        throw InvalidArgument("clip dimensions exceed the file format limits");
    }
    detail::ByteWriter w;
    w.put_bytes(std::string_view(kClipMagic, 4));
    w.put<std::uint16_t>(kClipVersion);
    w.put_f32(clip.audio.sample_rate);
    w.put_f32(v.fps);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(clip.audio.length()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v.length()));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(v.width));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(v.height));
    w.put_f32(v.peak);
    for (double s : clip.audio.samples) {
        w.put_f32(s);
    }
    for (const auto& f : v.frames) {
        if (f.pixels.size() != v.width * v.height) {
            throw InvalidArgument("frame size does not match clip dimensions");
        }
        for (double p : f.pixels) {
            w.put_f32(p);
        }
    }
    return std::move(w.bytes());
}

AudiovisualClip decode_clip(std::span<const std::uint8_t> bytes)
{
    detail::ByteReader r(bytes);
    if (r.get_string(4) != std::string_view(kClipMagic, 4)) {
        throw MalformedHeader("clip: bad magic");
    }
    if (r.get<std::uint16_t>() != kClipVersion) {
        throw MalformedHeader("clip: unsupported version");
    }
    AudiovisualClip clip;
    clip.audio.sample_rate = r.get_f32();
    clip.video.fps = r.get_f32();
    const auto n_samples = r.get<std::uint32_t>();
    const auto n_frames = r.get<std::uint32_t>();
    clip.video.width = r.get<std::uint16_t>();
    clip.video.height = r.get<std::uint16_t>();
    clip.video.peak = r.get_f32();
    if (!(clip.audio.sample_rate > 0.0) || !(clip.video.fps > 0.0) || !(clip.video.peak > 0.0) || n_samples == 0 ||
        n_frames == 0 || clip.video.width == 0 || clip.video.height == 0) {
        throw MalformedHeader("clip: invalid header fields");
    }
    const std::size_t plane = clip.video.width * clip.video.height;
    const std::size_t need = (static_cast<std::size_t>(n_samples) + static_cast<std::size_t>(n_frames) * plane) * 4;
    r.require(need);
    clip.audio.samples.resize(n_samples);
    for (auto& s : clip.audio.samples) {
        s = r.get_f32();
    }
    clip.video.frames.reserve(n_frames);
    for (std::uint32_t t = 0; t < n_frames; ++t) {
        Frame f(clip.video.height, clip.video.width);
        for (auto& p : f.pixels) {
            p = r.get_f32();
        }
        clip.video.frames.push_back(std::move(f));
    }
    if (r.remaining() != 0) {
        throw MalformedHeader("clip: trailing bytes after payload");
    }
    return clip;
}

void write_clip(const AudiovisualClip& clip, const std::filesystem::path& path)
{
    detail::write_file(path, encode_clip(clip));
}

AudiovisualClip read_clip(const std::filesystem::path& path)
{
    const auto bytes = detail::read_file(path);
    return decode_clip(bytes);
}

} // namespace w2v::media
