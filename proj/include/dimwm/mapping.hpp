#pragma once

#include <optional>
#include <string>
#include <variant>

#include "dimwm/autograd.hpp"
#include "dimwm/payload.hpp"
#include "dimwm/video.hpp"

namespace dimwm {

/// Embedding -> extraction dimension pair M{d_e, d_d}.
enum class Regime { M33, M13, M23, M32 };

std::string regime_name(Regime r);
Regime parse_regime(const std::string& name);

/// Regime selector plus shape hyperparameters. The 1D message is embedded
/// and extracted in every regime; d_d names the structured payload's
/// extraction dimension.
struct MappingConfig {
    int d_e = 3;
    int d_d = 3;
    std::size_t message_length = 16;  // L
    std::size_t frames = 4;           // T
    std::size_t height = 32;          // H
    std::size_t width = 32;           // W
    std::size_t message_channels = 1; // C_tp
    std::size_t mask_channels = 1;    // C_p

    Regime regime() const;
    /// Throws InvalidArgument when any invariant is violated.
    void validate() const;
    bool takes_mask_input() const { return d_e >= 2; }
    std::size_t input_channels() const;

    bool operator==(const MappingConfig&) const = default;
};

/// Mask operand of build_input: none for M{1,3}, a 2D mask for M{2,3}, a
/// 3D mask for M{3,3} and M{3,2}.
using MaskPayload = std::variant<std::monostate, SpatialMask, SpatioTemporalMask>;

/// C_in x T x H x W network input, channels ordered (host, message, mask).
struct InputTensor {
    Tensor<float> volume;
};

InputTensor build_input(const MappingConfig& cfg, const VideoClip& clip, const Tensor<float>& message_features,
                        const MaskPayload& mask);

/// Batched form used by the model: host (N, 3, T, H, W), message features
/// (N, C_tp, T, H, W), optional mask (N, C_p, T, H, W) already expanded in time.
template <class T>
nn::Var<T> build_input_batch(const MappingConfig& cfg, const Tensor<T>& host, const nn::Var<T>& message_features,
                             const std::optional<Tensor<T>>& mask);

/// Expands a mask payload to the (T, H, W, C_p) volume the encoder sees.
SpatioTemporalMask mask_input_volume(const MappingConfig& cfg, const MaskPayload& mask);

struct OutputContract {
    std::size_t message_length;
    /// True for M{3,2}: masks are predicted per frame by a 2D predictor.
    bool frame_wise;
    std::size_t mask_count;  // 1 volume, or T frame masks
    Shape mask_shape;        // (T, H, W, C_p) or (H, W, C_p) per frame
};

OutputContract output_contract(const MappingConfig& cfg);

}  // namespace dimwm
