#pragma once

#include <vector>

#include "dimwm/payload.hpp"
#include "dimwm/tensor.hpp"

namespace dimwm {

/// Host clip of T x H x W x 3 real values, nominally in [0, 1].
class VideoClip {
public:
    VideoClip() = default;
    VideoClip(std::size_t frames, std::size_t height, std::size_t width, float fill = 0.0f)
        : pixels_({frames, height, width, 3}, fill) {}
    explicit VideoClip(Tensor<float> pixels);

    std::size_t frames() const { return pixels_.dim(0); }
    std::size_t height() const { return pixels_.dim(1); }
    std::size_t width() const { return pixels_.dim(2); }
    std::size_t size() const { return pixels_.size(); }

    float& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) { return pixels_.at(t, y, x, c); }
    float at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const { return pixels_.at(t, y, x, c); }

    const Tensor<float>& pixels() const noexcept { return pixels_; }
    Tensor<float>& pixels() noexcept { return pixels_; }

    bool same_shape(const VideoClip& o) const { return pixels_.shape() == o.pixels_.shape(); }
    bool operator==(const VideoClip&) const = default;

private:
    Tensor<float> pixels_;
};

/// Stacks clips into an (N, 3, T, H, W) tensor.
template <class T>
Tensor<T> clips_to_batch(const std::vector<const VideoClip*>& clips);
template <class T>
Tensor<T> clip_to_batch(const VideoClip& clip) {
    return clips_to_batch<T>({&clip});
}
/// Extracts sample n of an (N, 3, T, H, W) tensor.
template <class T>
VideoClip batch_to_clip(const Tensor<T>& batch, std::size_t n = 0);

/// Stacks masks into an (N, C, T, H, W) tensor of 0/1 values.
template <class T>
Tensor<T> masks_to_batch(const std::vector<const SpatioTemporalMask*>& masks);
/// Per-cell real estimates of sample n as a (T, H, W, C) tensor.
template <class T>
Tensor<float> batch_to_mask_estimate(const Tensor<T>& batch, std::size_t n = 0);
/// Thresholds a (T, H, W, C) estimate at `threshold` (strictly greater is active).
SpatioTemporalMask binarize(const Tensor<float>& estimate, float threshold = 0.5f);
Tensor<float> mask_to_tensor(const SpatioTemporalMask& mask);

/// Deterministic textured test clip: oriented gratings plus a drifting
/// colour gradient, in [0, 1].
VideoClip synthetic_clip(std::size_t frames, std::size_t height, std::size_t width, std::uint64_t seed);

}  // namespace dimwm
