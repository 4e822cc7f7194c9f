#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace w2v::media {

struct AudioWaveform {
    std::vector<double> samples; // nominal range [-1, 1]
    double sample_rate = 8000.0;

    std::size_t length() const noexcept { return samples.size(); }
    double duration() const noexcept { return static_cast<double>(samples.size()) / sample_rate; }
    /// Throws InvalidArgument unless non-empty, finite, and sample_rate > 0.
    void validate() const;

    friend bool operator==(const AudioWaveform&, const AudioWaveform&) = default;
};

/// Grayscale intensity grid, row-major.
struct Frame {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    Frame() = default;
    Frame(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

    double& operator()(std::size_t y, std::size_t x) noexcept { return pixels[y * width + x]; }
    double operator()(std::size_t y, std::size_t x) const noexcept { return pixels[y * width + x]; }

    friend bool operator==(const Frame&, const Frame&) = default;
};

struct VideoClip {
    std::vector<Frame> frames;
    std::size_t width = 0;
    std::size_t height = 0;
    double fps = 25.0;
    double peak = 1.0;

    std::size_t length() const noexcept { return frames.size(); }
    double duration() const noexcept { return static_cast<double>(frames.size()) / fps; }
    void validate() const;

    friend bool operator==(const VideoClip&, const VideoClip&) = default;
};

struct AudiovisualClip {
    AudioWaveform audio;
    VideoClip video;

    void validate() const;

    friend bool operator==(const AudiovisualClip&, const AudiovisualClip&) = default;
};

struct Pose {
    double yaw = 0.0; // degrees
    double pitch = 0.0;
    double roll = 0.0;

    friend bool operator==(const Pose&, const Pose&) = default;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

using LandmarkModel = std::array<Point3, 5>;
using Landmarks2d = std::array<Point2, 5>;

/// Eyes, nose tip and mouth corners in face-scale units (x right, y up, z toward camera).
LandmarkModel canonical_landmarks();

struct FacePlacement {
    double center_x = 32.0; // pixels
    double center_y = 32.0;
    double scale = 19.2; // pixels per model unit
};

struct BackgroundTexture {
    double freq_x = 1.0; // cycles per frame width
    double freq_y = 1.0;
    double phase = 0.0;
    double amplitude = 0.06;
};

enum class MotionProfile { static_pose, gentle, turning };

struct SceneParams {
    std::vector<Pose> poses;            // one per frame
    std::vector<double> mouth_openness; // one per frame, in [0, 1]
    LandmarkModel landmarks = canonical_landmarks();
    FacePlacement face;
    BackgroundTexture texture;
    std::size_t width = 64;
    std::size_t height = 64;

    std::size_t length() const noexcept { return poses.size(); }
    void validate() const;
};

/// Rectangle (rows [y0, y0+h), cols [x0, x0+w)) that contains the mouth for
/// moderate poses. Generation only ever writes inside it.
struct MouthRegion {
    std::size_t y0 = 0;
    std::size_t x0 = 0;
    std::size_t h = 12;
    std::size_t w = 16;

    bool contains(std::size_t y, std::size_t x) const noexcept
    {
        return y >= y0 && y < y0 + h && x >= x0 && x < x0 + w;
    }
};

MouthRegion mouth_region(const FacePlacement& face, std::size_t width, std::size_t height);

/// Face intensity the renderer uses; mouth darkness is measured against it.
inline constexpr double kFaceLevel = 0.75;
inline constexpr double kMouthLevel = 0.15;

struct SceneOptions {
    std::size_t width = 64;
    std::size_t height = 64;
};

/// Deterministic synthetic talking head. Audio is three amplitude-modulated
/// sinusoids under a syllable envelope plus low-passed noise; per-frame mouth
/// openness is the frame-window RMS divided by its maximum.
std::pair<AudiovisualClip, SceneParams> synth_scene(std::uint64_t seed, double duration_s, double fps,
                                                    double sample_rate, MotionProfile profile,
                                                    SceneOptions options = {});

Landmarks2d project_landmarks(const LandmarkModel& model, const Pose& pose, const FacePlacement& face);
Landmarks2d project_landmarks(const SceneParams& scene, std::size_t t);

Frame render_frame(const SceneParams& scene, std::size_t t);
VideoClip render_video(const SceneParams& scene, double fps, double peak = 1.0);

/// Samples with time in [t/fps, (t+1)/fps). Throws InvalidArgument for t past the end.
AudioWaveform frame_window(const AudioWaveform& audio, std::size_t t, double fps);
/// Number of frame windows the audio spans.
std::size_t frame_count(const AudioWaveform& audio, double fps);

/// Frame-window RMS for every frame of the clip.
std::vector<double> frame_rms(const AudioWaveform& audio, double fps, std::size_t frames);

/// Mean darkness below the face level inside the mouth region.
double mouth_darkness(const Frame& frame, const MouthRegion& region);

// Segmentation ---------------------------------------------------------------

struct ClipSpan {
    std::size_t first_frame = 0;
    std::size_t frames = 0;
    std::size_t first_sample = 0;
    std::size_t samples = 0;
};

/// Splits a clip into consecutive segments of `seconds`; the last may be shorter.
std::vector<ClipSpan> segment(const AudiovisualClip& clip, double seconds);
AudiovisualClip slice(const AudiovisualClip& clip, const ClipSpan& span);
AudiovisualClip concatenate(std::span<const AudiovisualClip> parts);

// File I/O ---------------------------------------------------------------------

/// Binary W2VC format; all reals stored as float32.
std::vector<std::uint8_t> encode_clip(const AudiovisualClip& clip);
AudiovisualClip decode_clip(std::span<const std::uint8_t> bytes);
void write_clip(const AudiovisualClip& clip, const std::filesystem::path& path);
AudiovisualClip read_clip(const std::filesystem::path& path);

} // namespace w2v::media
