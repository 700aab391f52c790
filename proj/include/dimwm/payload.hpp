#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dimwm/error.hpp"

namespace dimwm {

/// 1D payload: an ordered bit string of length L.
class BinaryMessage {
public:
    BinaryMessage() = default;
    explicit BinaryMessage(std::vector<std::uint8_t> bits);

    std::size_t size() const noexcept { return bits_.size(); }
    std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

    /// Hex with the first bit as the most significant bit of the first digit;
    /// the tail is zero-padded to a whole digit.
    std::string to_hex() const;
    static BinaryMessage from_hex(std::string_view hex, std::size_t length);

    bool operator==(const BinaryMessage&) const = default;

private:
    std::vector<std::uint8_t> bits_;
};

/// 2D payload, H x W x C cells in {0, 1}, stored row-major in (y, x, c) order.
class SpatialMask {
public:
    SpatialMask() = default;
    SpatialMask(std::size_t height, std::size_t width, std::size_t channels = 1, std::uint8_t fill = 0);
    SpatialMask(std::size_t height, std::size_t width, std::size_t channels, std::vector<std::uint8_t> cells);

    std::size_t height() const noexcept { return h_; }
    std::size_t width() const noexcept { return w_; }
    std::size_t channels() const noexcept { return c_; }

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) { return cells_[(y * w_ + x) * c_ + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const { return cells_[(y * w_ + x) * c_ + c]; }
    const std::vector<std::uint8_t>& cells() const noexcept { return cells_; }

    std::size_t count() const;
    bool is_empty() const { return count() == 0; }
    /// Active fraction of spatial positions (any channel active).
    double area_ratio() const;

    bool operator==(const SpatialMask&) const = default;

private:
    std::size_t h_ = 0, w_ = 0, c_ = 0;
    std::vector<std::uint8_t> cells_;
};

/// 3D payload, T x H x W x C cells in {0, 1}.
class SpatioTemporalMask {
public:
    SpatioTemporalMask() = default;
    SpatioTemporalMask(std::size_t frames, std::size_t height, std::size_t width, std::size_t channels = 1,
                       std::uint8_t fill = 0);
    SpatioTemporalMask(std::size_t frames, std::size_t height, std::size_t width, std::size_t channels,
                       std::vector<std::uint8_t> cells);
    static SpatioTemporalMask from_frames(const std::vector<SpatialMask>& frames);
    /// Replicates a 2D mask along time.
    static SpatioTemporalMask replicate(const SpatialMask& mask, std::size_t frames);

    std::size_t frames() const noexcept { return t_; }
    std::size_t height() const noexcept { return h_; }
    std::size_t width() const noexcept { return w_; }
    std::size_t channels() const noexcept { return c_; }

    std::uint8_t& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) {
        return cells_[((t * h_ + y) * w_ + x) * c_ + c];
    }
    std::uint8_t at(std::size_t t, std::size_t y, std::size_t x, std::size_t c = 0) const {
        return cells_[((t * h_ + y) * w_ + x) * c_ + c];
    }
    const std::vector<std::uint8_t>& cells() const noexcept { return cells_; }

    SpatialMask frame(std::size_t t) const;
    /// Channel-wise OR, giving a single-channel mask.
    SpatioTemporalMask union_channels() const;
    std::size_t count() const;
    /// Active fraction of the (T, H, W) volume.
    double volume_ratio() const;

    bool operator==(const SpatioTemporalMask&) const = default;

private:
    std::size_t t_ = 0, h_ = 0, w_ = 0, c_ = 0;
    std::vector<std::uint8_t> cells_;
};

/// Frame-identity codewords; code(t) is a C-bit word stored per channel.
class FrameCodebook {
public:
    FrameCodebook(std::size_t channels, std::vector<std::vector<std::uint8_t>> codes);

    std::size_t size() const noexcept { return codes_.size(); }
    std::size_t channels() const noexcept { return channels_; }
    const std::vector<std::uint8_t>& code(std::size_t t) const { return codes_.at(t); }
    const std::vector<std::vector<std::uint8_t>>& codes() const noexcept { return codes_; }

private:
    std::size_t channels_;
    std::vector<std::vector<std::uint8_t>> codes_;
};

enum class MaskKind { Full, Rectangular, Irregular, Segmented };

MaskKind parse_mask_kind(std::string_view name);
std::string_view mask_kind_name(MaskKind kind);

/// L independent fair bits, deterministic in seed.
BinaryMessage sample_message(std::size_t length, std::uint64_t seed);

SpatialMask generate_mask(MaskKind kind, std::size_t height, std::size_t width, std::uint64_t seed);

/// Moves every active cell (c, y, x) to (c, y + dy, x + dx); cells leaving
/// the frame are dropped.
SpatialMask shift_mask(const SpatialMask& mask, long dx, long dy);

/// Propagates `initial` across T frames with random integer shifts
/// k * d, d in the 8-neighbourhood, k uniform in [0, delta_max], accepting the
/// first non-empty candidate per frame.
SpatioTemporalMask generate_mask_sequence(const SpatialMask& initial, std::size_t frames, std::size_t delta_max,
                                          std::uint64_t seed);

/// code(t) = binary(t + 1), least significant bit in channel 0.
FrameCodebook build_codebook(std::size_t frames, std::size_t channels);

/// Channel c of frame t = frame mask * bit c of code(t).
SpatioTemporalMask encode_multichannel(const SpatioTemporalMask& sequence, const FrameCodebook& codebook);

}  // namespace dimwm
