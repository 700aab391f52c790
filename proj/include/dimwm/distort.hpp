#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dimwm/autograd.hpp"
#include "dimwm/random.hpp"
#include "dimwm/video.hpp"

namespace dimwm {

enum class Category { Valuemetric, Geometric, FrameLevel, Compression };
enum class Phase { Training, Evaluation };

std::string category_name(Category c);
Category parse_category(const std::string& name);
std::string phase_name(Phase p);
Phase parse_phase(const std::string& name);

struct ParamRange {
    double lo = 0;
    double hi = 0;
    bool operator==(const ParamRange&) const = default;
};

struct DistortionSpec {
    std::string name;
    Category category = Category::Valuemetric;
    std::map<std::string, ParamRange> params;
    bool differentiable = true;

    /// Lower end of the range (the value itself for fixed parameters).
    double param(const std::string& key) const;
    bool operator==(const DistortionSpec&) const = default;
};

/// Induced map on ground-truth masks. Output frame t comes from input frame
/// frame_source[t] (-1: blank frame, no watermark); the optional warp is
/// applied to every frame and re-binarised at 0.5.
struct MaskTransform {
    std::vector<int> frame_source;
    std::optional<nn::Resampling<float>> warp;  // over one H x W frame

    static MaskTransform identity(std::size_t frames);
    bool is_identity() const;
    SpatioTemporalMask apply(const SpatioTemporalMask& mask) const;
};

struct AttackOutcome {
    VideoClip clip;
    MaskTransform mask_transform;
};

/// Built-in presets of a phase, in a stable order.
const std::vector<DistortionSpec>& presets(Phase phase);
/// Looks up a preset (or a registered plugin) by name.
DistortionSpec preset(Phase phase, const std::string& name);

/// Uniform category among the enabled ones, then a uniform preset within it.
/// An empty `enabled` list means every category of the phase.
DistortionSpec sample_pool(Phase phase, std::uint64_t seed, const std::vector<Category>& enabled = {});

AttackOutcome apply(const DistortionSpec& spec, const VideoClip& clip, std::uint64_t seed);

template <class T>
struct BatchAttack {
    nn::Var<T> clip;
    std::vector<MaskTransform> transforms;
};

/// Differentiable attack on an (N, 3, T, H, W) batch; each sample draws its
/// own parameters from derive_seed(seed, n). Non-differentiable specs throw.
template <class T>
BatchAttack<T> apply_batch(const DistortionSpec& spec, const nn::Var<T>& batch, std::uint64_t seed);

/// Per-frame 8x8 block DCT with soft quantisation (intra), then residual
/// coding of each frame against the previous reconstruction (inter).
/// Strength s scales the standard luminance table by s / 5.
VideoClip compression_surrogate(const VideoClip& clip, double intra_strength, double inter_strength);
/// Batched form with per-sample strengths.
template <class T>
nn::Var<T> compression_surrogate(const nn::Var<T>& batch, const std::vector<double>& intra,
                                 const std::vector<double>& inter);

/// Baseline JPEG round trip of each frame at the given quality.
VideoClip jpeg_roundtrip(const VideoClip& clip, int quality);

/// H.264 round trip through an external ffmpeg binary (DIMWM_FFMPEG or PATH).
/// Throws EnvironmentError when the codec is unavailable.
VideoClip h264_roundtrip(const VideoClip& clip, int crf);
bool codec_available();

/// Custom attacks (e.g. learned codecs) join the evaluation pool by name.
using AttackFn = std::function<VideoClip(const VideoClip&, Rng&)>;
void register_attack(const std::string& name, Category category, AttackFn fn);
void unregister_attack(const std::string& name);

}  // namespace dimwm
