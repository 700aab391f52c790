#pragma once

#include <array>
#include <optional>
#include <vector>

#include "dimwm/layers.hpp"
#include "dimwm/mapping.hpp"

namespace dimwm {

/// Maps the 1D message to C_tp x T x H x W features: a linear layer to a
/// (1, L, L, L * max(1, H / T)) latent, a trilinear resize to (1, T, H, W),
/// two CNR blocks and a pointwise projection.
template <class T>
class MessageTranslator {
public:
    MessageTranslator() = default;
    MessageTranslator(const MappingConfig& cfg, Rng& rng);

    static std::array<std::size_t, 4> latent_shape(const MappingConfig& cfg);

    /// bits: (N, L) with values in {0, 1}.
    nn::Var<T> operator()(const Tensor<T>& bits) const;
    void collect(nn::ParamList<T>& out, const std::string& prefix) const;

private:
    MappingConfig cfg_;
    nn::Linear<T> fc_;
    nn::CNR<T> b0_, b1_;
    nn::Conv3d<T> proj_;
};

/// Four CNR blocks (16-32-32-16) and a 3-channel projection added to the host.
template <class T>
class VideoEncoder {
public:
    VideoEncoder() = default;
    VideoEncoder(std::size_t in_channels, Rng& rng);

    /// input: (N, C_in, T, H, W); host: (N, 3, T, H, W). Returns V_enc.
    nn::Var<T> operator()(const nn::Var<T>& input, const Tensor<T>& host) const;
    void collect(nn::ParamList<T>& out, const std::string& prefix) const;

private:
    std::array<nn::CNR<T>, 4> blocks_;
    nn::Conv3d<T> proj_;
};

/// Four spatially strided CNR blocks, global average pooling and a linear
/// head; outputs per-bit probabilities in [0, 1].
template <class T>
class MessageDecoder {
public:
    MessageDecoder() = default;
    MessageDecoder(std::size_t message_length, Rng& rng);

    nn::Var<T> operator()(const nn::Var<T>& masked) const;
    void collect(nn::ParamList<T>& out, const std::string& prefix) const;

private:
    std::array<nn::CNR<T>, 4> blocks_;
    nn::Linear<T> head_;
};

/// Residual U-block: an inner two-level U with a residual connection.
template <class T>
class ResidualUBlock {
public:
    ResidualUBlock() = default;
    ResidualUBlock(std::size_t in, std::size_t mid, std::size_t out, std::size_t temporal_kernel, Rng& rng);

    nn::Var<T> operator()(const nn::Var<T>& x) const;
    void collect(nn::ParamList<T>& out, const std::string& prefix) const;

private:
    nn::CNR<T> in_, enc1_, enc2_, dec1_;
};

/// Two-stage nested U-structure with side-output fusion and sigmoid output.
/// temporal_kernel = 3 gives the spatiotemporal variant, 1 the per-frame one.
template <class T>
class NestedUNet {
public:
    NestedUNet() = default;
    NestedUNet(std::size_t in_channels, std::size_t out_channels, std::size_t temporal_kernel, Rng& rng);

    nn::Var<T> operator()(const nn::Var<T>& x) const;
    void collect(nn::ParamList<T>& out, const std::string& prefix) const;

private:
    ResidualUBlock<T> stage1_, stage2_, decode1_;
    nn::Conv3d<T> side1_, side2_, fuse_;
};

/// Mask predictor over a full (N, 3, T, H, W) clip. The frame-wise variant
/// folds frames into the batch and shares one 2D network across them.
template <class T>
class MaskPredictor {
public:
    MaskPredictor() = default;
    MaskPredictor(std::size_t mask_channels, bool frame_wise, Rng& rng);

    bool frame_wise() const { return frame_wise_; }
    nn::Var<T> operator()(const nn::Var<T>& clip) const;
    void collect(nn::ParamList<T>& out, const std::string& prefix) const;

private:
    bool frame_wise_ = false;
    NestedUNet<T> net_;
};

template <class T>
struct ModelBundle {
    MappingConfig mapping;
    MessageTranslator<T> translator;
    VideoEncoder<T> encoder;
    MessageDecoder<T> decoder;
    // Only the predictor matching the regime is instantiated.
    std::optional<MaskPredictor<T>> mask_predictor_2d;
    std::optional<MaskPredictor<T>> mask_predictor_3d;
    T jnd_scale = T(1);
    bool jnd_active = false;

    static ModelBundle create(const MappingConfig& cfg, std::uint64_t seed);

    const MaskPredictor<T>& mask_predictor() const;
    /// Every trainable tensor in a fixed order with stable names.
    nn::ParamList<T> parameters() const;
};

/// Per-element sensitivity in [0, 1]: channel-averaged luminance, 3x3 Sobel
/// magnitude per frame (replicated borders), min-max normalised per frame.
/// host: (N, 3, T, H, W); result has the same shape (constant across channels).
template <class T>
Tensor<T> jnd_map(const Tensor<T>& host);

template <class T>
nn::Var<T> embed_batch(const ModelBundle<T>& bundle, const Tensor<T>& host, const Tensor<T>& bits,
                       const std::optional<Tensor<T>>& mask_input);

/// wm * M + host * (1 - M); fusion_mask: (N, 1, T, H, W) binary.
template <class T>
nn::Var<T> fuse_batch(const nn::Var<T>& wm, const Tensor<T>& host, const Tensor<T>& fusion_mask);

template <class T>
nn::Var<T> decode_batch(const ModelBundle<T>& bundle, const nn::Var<T>& masked);

template <class T>
nn::Var<T> predict_mask_batch(const ModelBundle<T>& bundle, const nn::Var<T>& attacked);

/// Expands an (N, 1, T, H, W) mask to the 3 colour channels.
template <class T>
Tensor<T> broadcast_mask(const Tensor<T>& mask, std::size_t channels = 3);

// Clip-level API (single clip, float parameters).

Tensor<float> translate_message(const ModelBundle<float>& bundle, const BinaryMessage& message);
VideoClip embed(const ModelBundle<float>& bundle, const VideoClip& clip, const BinaryMessage& message,
                const MaskPayload& mask);
VideoClip fuse(const VideoClip& watermarked, const VideoClip& original, const SpatioTemporalMask& mask);
/// V * M with a binary mask broadcast over colour channels.
VideoClip apply_mask(const VideoClip& clip, const SpatioTemporalMask& mask);
std::vector<float> decode(const ModelBundle<float>& bundle, const VideoClip& masked);
/// (T, H, W, C_p) estimates in [0, 1].
Tensor<float> predict_mask(const ModelBundle<float>& bundle, const VideoClip& attacked);
/// (T, H, W) sensitivity map of a clip.
Tensor<float> jnd_map(const VideoClip& clip);

}  // namespace dimwm
