#include "dimwm/video.hpp"

#include <algorithm>
#include <cmath>

#include "dimwm/random.hpp"

namespace dimwm {

VideoClip::VideoClip(Tensor<float> pixels) : pixels_(std::move(pixels)) {
    if (pixels_.rank() != 4 || pixels_.dim(3) != 3)
        throw InvalidArgument("video clip must be T x H x W x 3, got " + shape_string(pixels_.shape()));
    if (pixels_.empty()) throw InvalidArgument("video clip is empty");
}

template <class T>
Tensor<T> clips_to_batch(const std::vector<const VideoClip*>& clips) {
    if (clips.empty()) throw InvalidArgument("empty clip batch");
    const auto& c0 = *clips.front();
    const std::size_t t = c0.frames(), h = c0.height(), w = c0.width();
    Tensor<T> out({clips.size(), 3, t, h, w});
    for (std::size_t n = 0; n < clips.size(); ++n) {
        const auto& c = *clips[n];
        if (!c.same_shape(c0)) throw InvalidArgument("clips in a batch must share a shape");
        const float* src = c.pixels().data();
        for (std::size_t f = 0; f < t; ++f)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        out[(((n * 3 + ch) * t + f) * h + y) * w + x] = static_cast<T>(src[((f * h + y) * w + x) * 3 + ch]);
    }
    return out;
}

template <class T>
VideoClip batch_to_clip(const Tensor<T>& batch, std::size_t n) {
    if (batch.rank() != 5 || batch.dim(1) != 3 || n >= batch.dim(0))
        throw InvalidArgument("expected (N, 3, T, H, W) batch, got " + shape_string(batch.shape()));
    const std::size_t t = batch.dim(2), h = batch.dim(3), w = batch.dim(4);
    VideoClip clip(t, h, w);
    float* dst = clip.pixels().data();
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t ch = 0; ch < 3; ++ch)
                    dst[((f * h + y) * w + x) * 3 + ch] = static_cast<float>(batch[(((n * 3 + ch) * t + f) * h + y) * w + x]);
    return clip;
}

template <class T>
Tensor<T> masks_to_batch(const std::vector<const SpatioTemporalMask*>& masks) {
    if (masks.empty()) throw InvalidArgument("empty mask batch");
    const auto& m0 = *masks.front();
    const std::size_t t = m0.frames(), h = m0.height(), w = m0.width(), c = m0.channels();
    Tensor<T> out({masks.size(), c, t, h, w});
    for (std::size_t n = 0; n < masks.size(); ++n) {
        const auto& m = *masks[n];
        if (m.frames() != t || m.height() != h || m.width() != w || m.channels() != c)
            throw InvalidArgument("masks in a batch must share a shape");
        for (std::size_t f = 0; f < t; ++f)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    for (std::size_t k = 0; k < c; ++k)
                        out[(((n * c + k) * t + f) * h + y) * w + x] = static_cast<T>(m.at(f, y, x, k));
    }
    return out;
}

template <class T>
Tensor<float> batch_to_mask_estimate(const Tensor<T>& batch, std::size_t n) {
    if (batch.rank() != 5 || n >= batch.dim(0)) throw InvalidArgument("expected (N, C, T, H, W) batch");
    const std::size_t c = batch.dim(1), t = batch.dim(2), h = batch.dim(3), w = batch.dim(4);
    Tensor<float> out({t, h, w, c});
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t f = 0; f < t; ++f)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    out.at(f, y, x, k) = static_cast<float>(batch[(((n * c + k) * t + f) * h + y) * w + x]);
    return out;
}

SpatioTemporalMask binarize(const Tensor<float>& estimate, float threshold) {
    if (estimate.rank() != 4) throw InvalidArgument("mask estimate must be T x H x W x C");
    std::vector<std::uint8_t> cells(estimate.size());
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = estimate[i] > threshold ? 1 : 0;
    return SpatioTemporalMask(estimate.dim(0), estimate.dim(1), estimate.dim(2), estimate.dim(3), std::move(cells));
}

Tensor<float> mask_to_tensor(const SpatioTemporalMask& mask) {
    Tensor<float> out({mask.frames(), mask.height(), mask.width(), mask.channels()});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.cells()[i];
    return out;
}

VideoClip synthetic_clip(std::size_t frames, std::size_t height, std::size_t width, std::uint64_t seed) {
    auto rng = make_rng({seed, 0x636c6970});
    const double two_pi = 6.283185307179586;
    struct Grating {
        double fy, fx, phase, speed, amp[3];
    };
    std::vector<Grating> gratings(4);
    for (auto& g : gratings) {
        const double freq = uniform(rng, 0.04, 0.3);
        const double angle = uniform(rng, 0, two_pi);
        g.fy = freq * std::sin(angle);
        g.fx = freq * std::cos(angle);
        g.phase = uniform(rng, 0, two_pi);
        g.speed = uniform(rng, -0.6, 0.6);
        for (double& a : g.amp) a = uniform(rng, 0.03, 0.12);
    }
    double base[3], slope_y[3], slope_x[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = uniform(rng, 0.3, 0.7);
        slope_y[c] = uniform(rng, -0.2, 0.2);
        slope_x[c] = uniform(rng, -0.2, 0.2);
    }
    VideoClip clip(frames, height, width);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const double ny = static_cast<double>(y) / height - 0.5, nx = static_cast<double>(x) / width - 0.5;
                for (int c = 0; c < 3; ++c) {
                    double v = base[c] + slope_y[c] * ny + slope_x[c] * nx;
                    for (const auto& g : gratings)
                        v += g.amp[c] * std::sin(two_pi * (g.fy * y + g.fx * x) + g.phase + g.speed * t);
                    v += 0.02 * (uniform01(rng) - 0.5);
                    clip.at(t, y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
    return clip;
}

template Tensor<float> clips_to_batch<float>(const std::vector<const VideoClip*>&);
template Tensor<double> clips_to_batch<double>(const std::vector<const VideoClip*>&);
template VideoClip batch_to_clip<float>(const Tensor<float>&, std::size_t);
template VideoClip batch_to_clip<double>(const Tensor<double>&, std::size_t);
template Tensor<float> masks_to_batch<float>(const std::vector<const SpatioTemporalMask*>&);
template Tensor<double> masks_to_batch<double>(const std::vector<const SpatioTemporalMask*>&);
template Tensor<float> batch_to_mask_estimate<float>(const Tensor<float>&, std::size_t);
template Tensor<float> batch_to_mask_estimate<double>(const Tensor<double>&, std::size_t);

}  // namespace dimwm
