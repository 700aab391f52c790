#include "dimwm/mapping.hpp"

namespace dimwm {

std::string regime_name(Regime r) {
    switch (r) {
        case Regime::M33: return "M33";
        case Regime::M13: return "M13";
        case Regime::M23: return "M23";
        case Regime::M32: return "M32";
    }
    return "?";
}

Regime parse_regime(const std::string& name) {
    if (name == "M33") return Regime::M33;
    if (name == "M13") return Regime::M13;
    if (name == "M23") return Regime::M23;
    if (name == "M32") return Regime::M32;
    throw InvalidArgument("unknown regime '" + name + "' (expected M33, M13, M23 or M32)");
}

Regime MappingConfig::regime() const {
    if (d_e == 3 && d_d == 3) return Regime::M33;
    if (d_e == 1 && d_d == 3) return Regime::M13;
    if (d_e == 2 && d_d == 3) return Regime::M23;
    if (d_e == 3 && d_d == 2) return Regime::M32;
    throw InvalidArgument("unsupported mapping M{" + std::to_string(d_e) + "," + std::to_string(d_d) + "}");
}

void MappingConfig::validate() const {
    const Regime r = regime();
    if (message_length < 1) throw InvalidArgument("message length L must be >= 1");
    if (frames < 1) throw InvalidArgument("T must be >= 1");
    if (height < 8 || width < 8) throw InvalidArgument("H and W must be >= 8");
    if (message_channels < 1) throw InvalidArgument("C_tp must be >= 1");
    if (mask_channels < 1) throw InvalidArgument("C_p must be >= 1");
    if (mask_channels > 1) {
        if (r != Regime::M33 && r != Regime::M32)
            throw InvalidArgument("multi-channel masks (C_p > 1) require M33 or M32");
        if (mask_channels >= 63 || (std::size_t{1} << mask_channels) - 1 < frames)
            throw CapacityExceeded("C_p = " + std::to_string(mask_channels) + " cannot code " + std::to_string(frames) +
                                   " frames");
    }
}

std::size_t MappingConfig::input_channels() const {
    return 3 + message_channels + (takes_mask_input() ? mask_channels : 0);
}

SpatioTemporalMask mask_input_volume(const MappingConfig& cfg, const MaskPayload& mask) {
    const Regime r = cfg.regime();
    if (r == Regime::M13) {
        if (!std::holds_alternative<std::monostate>(mask))
            throw InvalidArgument("M13 embeds the message only; no mask may be supplied");
        throw InvalidArgument("M13 has no mask input volume");
    }
    if (r == Regime::M23) {
        const auto* m2 = std::get_if<SpatialMask>(&mask);
        if (!m2) throw InvalidArgument("M23 requires a 2D spatial mask");
        if (m2->height() != cfg.height || m2->width() != cfg.width || m2->channels() != cfg.mask_channels)
            throw InvalidArgument("2D mask shape does not match the mapping config");
        return SpatioTemporalMask::replicate(*m2, cfg.frames);
    }
    const auto* m3 = std::get_if<SpatioTemporalMask>(&mask);
    if (!m3) throw InvalidArgument(regime_name(r) + " requires a 3D spatiotemporal mask");
    if (m3->frames() != cfg.frames || m3->height() != cfg.height || m3->width() != cfg.width ||
        m3->channels() != cfg.mask_channels)
        throw InvalidArgument("3D mask shape does not match the mapping config");
    return *m3;
}

template <class T>
nn::Var<T> build_input_batch(const MappingConfig& cfg, const Tensor<T>& host, const nn::Var<T>& message_features,
                             const std::optional<Tensor<T>>& mask) {
    const Shape& hs = host.shape();
    if (hs.size() != 5 || hs[1] != 3 || hs[2] != cfg.frames || hs[3] != cfg.height || hs[4] != cfg.width)
        throw InvalidArgument("host batch shape " + shape_string(hs) + " does not match the mapping config");
    const Shape want_msg{hs[0], cfg.message_channels, hs[2], hs[3], hs[4]};
    if (message_features.shape() != want_msg)
        throw InvalidArgument("message features shape " + shape_string(message_features.shape()) + ", expected " +
                              shape_string(want_msg));
    std::vector<nn::Var<T>> parts{nn::Var<T>::constant(host), message_features};
    if (cfg.takes_mask_input()) {
        if (!mask) throw InvalidArgument(regime_name(cfg.regime()) + " requires a mask operand");
        const Shape want_mask{hs[0], cfg.mask_channels, hs[2], hs[3], hs[4]};
        if (mask->shape() != want_mask)
            throw InvalidArgument("mask shape " + shape_string(mask->shape()) + ", expected " + shape_string(want_mask));
        parts.push_back(nn::Var<T>::constant(*mask));
    } else if (mask) {
        throw InvalidArgument("M13 embeds the message only; no mask may be supplied");
    }
    return nn::concat_channels(parts);
}

InputTensor build_input(const MappingConfig& cfg, const VideoClip& clip, const Tensor<float>& message_features,
                        const MaskPayload& mask) {
    cfg.validate();
    if (clip.frames() != cfg.frames || clip.height() != cfg.height || clip.width() != cfg.width)
        throw InvalidArgument("clip shape does not match the mapping config");
    const Shape want{cfg.message_channels, cfg.frames, cfg.height, cfg.width};
    if (message_features.shape() != want)
        throw InvalidArgument("message features must be " + shape_string(want) + ", got " +
                              shape_string(message_features.shape()));
    std::optional<Tensor<float>> mask_batch;
    if (cfg.takes_mask_input()) {
        const auto volume = mask_input_volume(cfg, mask);
        mask_batch = masks_to_batch<float>({&volume});
    } else if (!std::holds_alternative<std::monostate>(mask)) {
        throw InvalidArgument("M13 embeds the message only; no mask may be supplied");
    }
    Shape batched{1};
    batched.insert(batched.end(), want.begin(), want.end());
    auto msg = nn::Var<float>::constant(message_features.reshaped(batched));
    auto out = build_input_batch<float>(cfg, clip_to_batch<float>(clip), msg, mask_batch);
    Shape s = out.shape();
    s.erase(s.begin());
    return InputTensor{out.value().reshaped(s)};
}

OutputContract output_contract(const MappingConfig& cfg) {
    cfg.validate();
    OutputContract c{};
    c.message_length = cfg.message_length;
    c.frame_wise = cfg.regime() == Regime::M32;
    if (c.frame_wise) {
        c.mask_count = cfg.frames;
        c.mask_shape = {cfg.height, cfg.width, cfg.mask_channels};
    } else {
        c.mask_count = 1;
        c.mask_shape = {cfg.frames, cfg.height, cfg.width, cfg.mask_channels};
    }
    return c;
}

template nn::Var<float> build_input_batch<float>(const MappingConfig&, const Tensor<float>&, const nn::Var<float>&,
                                                 const std::optional<Tensor<float>>&);
template nn::Var<double> build_input_batch<double>(const MappingConfig&, const Tensor<double>&,
                                                   const nn::Var<double>&, const std::optional<Tensor<double>>&);

}  // namespace dimwm
