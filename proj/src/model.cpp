#include "dimwm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dimwm {

using nn::Var;

namespace {

constexpr std::size_t kTranslatorWidth = 8;
constexpr std::size_t kUNetMid = 8;
constexpr std::size_t kUNetWidth = 16;

template <class T>
void check_finite(const Tensor<T>& t, const char* what) {
    for (const T v : t.storage())
        if (!std::isfinite(v)) throw NumericalError(std::string("non-finite values in ") + what);
}

template <class T>
Var<T> pool2(const Var<T>& x) {
    return nn::max_pool3d(x, 1, 2, 2);
}

template <class T>
Var<T> resize_like(const Var<T>& x, const Var<T>& ref) {
    return nn::resize_trilinear(x, ref.dim(2), ref.dim(3), ref.dim(4));
}

}  // namespace

// ---------------------------------------------------------------------------

template <class T>
std::array<std::size_t, 4> MessageTranslator<T>::latent_shape(const MappingConfig& cfg) {
    const std::size_t L = cfg.message_length;
    const std::size_t k = std::max<std::size_t>(1, cfg.height / cfg.frames);
    return {1, L, L, L * k};
}

template <class T>
MessageTranslator<T>::MessageTranslator(const MappingConfig& cfg, Rng& rng) : cfg_(cfg) {
    const auto s = latent_shape(cfg);
    fc_ = nn::Linear<T>(cfg.message_length, s[0] * s[1] * s[2] * s[3], rng);
    b0_ = nn::CNR<T>(1, kTranslatorWidth, {3, 3, 3}, rng);
    b1_ = nn::CNR<T>(kTranslatorWidth, kTranslatorWidth, {3, 3, 3}, rng);
    proj_ = nn::Conv3d<T>(kTranslatorWidth, cfg.message_channels, {1, 1, 1}, rng);
}

template <class T>
Var<T> MessageTranslator<T>::operator()(const Tensor<T>& bits) const {
    if (bits.rank() != 2 || bits.dim(1) != cfg_.message_length)
        throw InvalidArgument("message batch must be (N, " + std::to_string(cfg_.message_length) + "), got " +
                              shape_string(bits.shape()));
    for (const T b : bits.storage())
        if (b != T(0) && b != T(1)) throw InvalidArgument("message bits must be 0 or 1");
    const auto s = latent_shape(cfg_);
    const std::size_t n = bits.dim(0);
    auto latent = nn::reshape(fc_(Var<T>::constant(bits)), {n, s[0], s[1], s[2], s[3]});
    auto grid = nn::resize_trilinear(latent, cfg_.frames, cfg_.height, cfg_.width);
    return proj_(b1_(b0_(grid)));
}

template <class T>
void MessageTranslator<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
    fc_.collect(out, prefix + ".fc");
    b0_.collect(out, prefix + ".b0");
    b1_.collect(out, prefix + ".b1");
    proj_.collect(out, prefix + ".proj");
}

// ---------------------------------------------------------------------------

template <class T>
VideoEncoder<T>::VideoEncoder(std::size_t in_channels, Rng& rng) {
    const std::size_t widths[] = {16, 32, 32, 16};
    std::size_t in = in_channels;
    for (std::size_t i = 0; i < 4; ++i) {
        blocks_[i] = nn::CNR<T>(in, widths[i], {3, 3, 3}, rng);
        in = widths[i];
    }
    proj_ = nn::Conv3d<T>(in, 3, {1, 1, 1}, rng);
}

template <class T>
Var<T> VideoEncoder<T>::operator()(const Var<T>& input, const Tensor<T>& host) const {
    Var<T> h = input;
    for (const auto& b : blocks_) h = b(h);
    return nn::add_const(proj_(h), host);
}

template <class T>
void VideoEncoder<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".b" + std::to_string(i));
    proj_.collect(out, prefix + ".proj");
}

// ---------------------------------------------------------------------------

template <class T>
MessageDecoder<T>::MessageDecoder(std::size_t message_length, Rng& rng) {
    const std::size_t widths[] = {16, 32, 32, 32};
    std::size_t in = 3;
    for (std::size_t i = 0; i < 4; ++i) {
        blocks_[i] = nn::CNR<T>(in, widths[i], {3, 3, 3}, rng, {1, 2, 2});
        in = widths[i];
    }
    head_ = nn::Linear<T>(in, message_length, rng);
}

template <class T>
Var<T> MessageDecoder<T>::operator()(const Var<T>& masked) const {
    Var<T> h = masked;
    for (const auto& b : blocks_) h = b(h);
    return nn::sigmoid(head_(nn::global_avg_pool(h)));
}

template <class T>
void MessageDecoder<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".b" + std::to_string(i));
    head_.collect(out, prefix + ".head");
}

// ---------------------------------------------------------------------------

template <class T>
ResidualUBlock<T>::ResidualUBlock(std::size_t in, std::size_t mid, std::size_t out, std::size_t tk, Rng& rng)
    : in_(in, out, {tk, 3, 3}, rng),
      enc1_(out, mid, {tk, 3, 3}, rng),
      enc2_(mid, mid, {tk, 3, 3}, rng),
      dec1_(2 * mid, out, {tk, 3, 3}, rng) {}

template <class T>
Var<T> ResidualUBlock<T>::operator()(const Var<T>& x) const {
    auto hin = in_(x);
    auto h1 = enc1_(hin);
    auto h2 = enc2_(pool2(h1));
    auto d1 = dec1_(nn::concat_channels<T>({resize_like(h2, h1), h1}));
    return nn::add(d1, hin);
}

template <class T>
void ResidualUBlock<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
    in_.collect(out, prefix + ".in");
    enc1_.collect(out, prefix + ".enc1");
    enc2_.collect(out, prefix + ".enc2");
    dec1_.collect(out, prefix + ".dec1");
}

template <class T>
NestedUNet<T>::NestedUNet(std::size_t in_channels, std::size_t out_channels, std::size_t tk, Rng& rng)
    : stage1_(in_channels, kUNetMid, kUNetWidth, tk, rng),
      stage2_(kUNetWidth, kUNetMid, kUNetWidth, tk, rng),
      decode1_(2 * kUNetWidth, kUNetMid, kUNetWidth, tk, rng),
      side1_(kUNetWidth, out_channels, {1, 1, 1}, rng),
      side2_(kUNetWidth, out_channels, {1, 1, 1}, rng),
      fuse_(2 * out_channels, out_channels, {1, 1, 1}, rng) {}

template <class T>
Var<T> NestedUNet<T>::operator()(const Var<T>& x) const {
    auto e1 = stage1_(x);
    auto e2 = stage2_(pool2(e1));
    auto d1 = decode1_(nn::concat_channels<T>({resize_like(e2, e1), e1}));
    auto s1 = side1_(d1);
    auto s2 = resize_like(side2_(e2), e1);
    return nn::sigmoid(fuse_(nn::concat_channels<T>({s1, s2})));
}

template <class T>
void NestedUNet<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
    stage1_.collect(out, prefix + ".stage1");
    stage2_.collect(out, prefix + ".stage2");
    decode1_.collect(out, prefix + ".decode1");
    side1_.collect(out, prefix + ".side1");
    side2_.collect(out, prefix + ".side2");
    fuse_.collect(out, prefix + ".fuse");
}

template <class T>
MaskPredictor<T>::MaskPredictor(std::size_t mask_channels, bool frame_wise, Rng& rng)
    : frame_wise_(frame_wise), net_(3, mask_channels, frame_wise ? 1 : 3, rng) {}

template <class T>
Var<T> MaskPredictor<T>::operator()(const Var<T>& clip) const {
    if (!frame_wise_) return net_(clip);
    const std::size_t n = clip.dim(0);
    return nn::batch_to_frames(net_(nn::frames_to_batch(clip)), n);
}

template <class T>
void MaskPredictor<T>::collect(nn::ParamList<T>& out, const std::string& prefix) const {
    net_.collect(out, prefix);
}

// ---------------------------------------------------------------------------

template <class T>
ModelBundle<T> ModelBundle<T>::create(const MappingConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelBundle b;
    b.mapping = cfg;
    auto rng = make_rng({seed, 0x696e6974});
    b.translator = MessageTranslator<T>(cfg, rng);
    b.encoder = VideoEncoder<T>(cfg.input_channels(), rng);
    b.decoder = MessageDecoder<T>(cfg.message_length, rng);
    if (cfg.regime() == Regime::M32)
        b.mask_predictor_2d = MaskPredictor<T>(cfg.mask_channels, true, rng);
    else
        b.mask_predictor_3d = MaskPredictor<T>(cfg.mask_channels, false, rng);
    return b;
}

template <class T>
const MaskPredictor<T>& ModelBundle<T>::mask_predictor() const {
    if (mask_predictor_2d) return *mask_predictor_2d;
    if (mask_predictor_3d) return *mask_predictor_3d;
    throw InternalError("model bundle has no mask predictor");
}

template <class T>
nn::ParamList<T> ModelBundle<T>::parameters() const {
    nn::ParamList<T> out;
    translator.collect(out, "translator");
    encoder.collect(out, "encoder");
    decoder.collect(out, "decoder");
    if (mask_predictor_2d) mask_predictor_2d->collect(out, "mask2d");
    if (mask_predictor_3d) mask_predictor_3d->collect(out, "mask3d");
    return out;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> jnd_map(const Tensor<T>& host) {
    if (host.rank() != 5 || host.dim(1) != 3) throw InvalidArgument("jnd_map expects (N, 3, T, H, W)");
    const std::size_t n = host.dim(0), t = host.dim(2), h = host.dim(3), w = host.dim(4), hw = h * w;
    Tensor<T> out(host.shape());
    std::vector<double> lum(hw), mag(hw);
    auto L = [&](long y, long x) {
        y = std::clamp(y, 0L, static_cast<long>(h) - 1);
        x = std::clamp(x, 0L, static_cast<long>(w) - 1);
        return lum[y * w + x];
    };
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t f = 0; f < t; ++f) {
            for (std::size_t i = 0; i < hw; ++i) {
                double acc = 0;
                for (std::size_t c = 0; c < 3; ++c) acc += host[((s * 3 + c) * t + f) * hw + i];
                lum[i] = acc / 3.0;
            }
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (long y = 0; y < static_cast<long>(h); ++y)
                for (long x = 0; x < static_cast<long>(w); ++x) {
                    const double gx = (L(y - 1, x + 1) + 2 * L(y, x + 1) + L(y + 1, x + 1)) -
                                      (L(y - 1, x - 1) + 2 * L(y, x - 1) + L(y + 1, x - 1));
                    const double gy = (L(y + 1, x - 1) + 2 * L(y + 1, x) + L(y + 1, x + 1)) -
                                      (L(y - 1, x - 1) + 2 * L(y - 1, x) + L(y - 1, x + 1));
                    const double m = std::sqrt(gx * gx + gy * gy);
                    mag[y * w + x] = m;
                    lo = std::min(lo, m);
                    hi = std::max(hi, m);
                }
            const double range = hi - lo;
            for (std::size_t i = 0; i < hw; ++i) {
                // A flat frame offers no masking, so it gets zero sensitivity.
                const T v = range > 1e-12 ? static_cast<T>((mag[i] - lo) / range) : T(0);
                for (std::size_t c = 0; c < 3; ++c) out[((s * 3 + c) * t + f) * hw + i] = v;
            }
        }
    return out;
}

template <class T>
Tensor<T> broadcast_mask(const Tensor<T>& mask, std::size_t channels) {
    if (mask.rank() != 5 || mask.dim(1) != 1) throw InvalidArgument("expected (N, 1, T, H, W) mask");
    const std::size_t n = mask.dim(0), vol = mask.size() / n;
    Tensor<T> out({n, channels, mask.dim(2), mask.dim(3), mask.dim(4)});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < channels; ++c)
            std::copy_n(mask.data() + s * vol, vol, out.data() + (s * channels + c) * vol);
    return out;
}

template <class T>
Var<T> embed_batch(const ModelBundle<T>& bundle, const Tensor<T>& host, const Tensor<T>& bits,
                   const std::optional<Tensor<T>>& mask_input) {
    auto features = bundle.translator(bits);
    auto input = build_input_batch<T>(bundle.mapping, host, features, mask_input);
    auto encoded = bundle.encoder(input, host);

    Tensor<T> coef = bundle.jnd_active ? jnd_map(host) : Tensor<T>(host.shape(), T(1));
    for (auto& v : coef.storage()) v *= bundle.jnd_scale;
    auto residual = nn::sub(encoded, Var<T>::constant(host));
    auto wm = nn::clamp(nn::add_const(nn::mul_const(residual, coef), host), T(0), T(1));
    check_finite(wm.value(), "watermarked clip");
    return wm;
}

template <class T>
Var<T> fuse_batch(const Var<T>& wm, const Tensor<T>& host, const Tensor<T>& fusion_mask) {
    if (wm.shape() != host.shape()) throw InvalidArgument("fuse: watermarked and original shapes differ");
    const Tensor<T> m = broadcast_mask(fusion_mask, host.dim(1));
    if (m.shape() != host.shape()) throw InvalidArgument("fuse: mask shape does not match the clip");
    Tensor<T> keep(host.shape());
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] != T(0) && m[i] != T(1)) throw InvalidArgument("fuse: mask must be binary");
        keep[i] = host[i] * (T(1) - m[i]);
    }
    return nn::add_const(nn::mul_const(wm, m), keep);
}

template <class T>
Var<T> decode_batch(const ModelBundle<T>& bundle, const Var<T>& masked) {
    auto out = bundle.decoder(masked);
    check_finite(out.value(), "decoder output");
    return out;
}

template <class T>
Var<T> predict_mask_batch(const ModelBundle<T>& bundle, const Var<T>& attacked) {
    auto out = bundle.mask_predictor()(attacked);
    check_finite(out.value(), "mask prediction");
    return out;
}

// ---------------------------------------------------------------------------

namespace {

Tensor<float> bits_tensor(const BinaryMessage& m) {
    Tensor<float> t({1, m.size()});
    for (std::size_t i = 0; i < m.size(); ++i) t[i] = m[i];
    return t;
}

void check_clip(const MappingConfig& cfg, const VideoClip& clip) {
    if (clip.frames() != cfg.frames || clip.height() != cfg.height || clip.width() != cfg.width)
        throw InvalidArgument("clip shape does not match the model's mapping config");
}

}  // namespace

Tensor<float> translate_message(const ModelBundle<float>& bundle, const BinaryMessage& message) {
    if (message.size() != bundle.mapping.message_length)
        throw InvalidArgument("message length does not match the model");
    auto out = bundle.translator(bits_tensor(message));
    Shape s = out.shape();
    s.erase(s.begin());
    return out.value().reshaped(s);
}

VideoClip embed(const ModelBundle<float>& bundle, const VideoClip& clip, const BinaryMessage& message,
                const MaskPayload& mask) {
    const auto& cfg = bundle.mapping;
    check_clip(cfg, clip);
    if (message.size() != cfg.message_length) throw InvalidArgument("message length does not match the model");
    std::optional<Tensor<float>> mask_input;
    if (cfg.takes_mask_input()) {
        const auto volume = mask_input_volume(cfg, mask);
        mask_input = masks_to_batch<float>({&volume});
    } else if (!std::holds_alternative<std::monostate>(mask)) {
        throw InvalidArgument("M13 embeds the message only; no mask may be supplied");
    }
    auto wm = embed_batch<float>(bundle, clip_to_batch<float>(clip), bits_tensor(message), mask_input);
    return batch_to_clip(wm.value());
}

VideoClip fuse(const VideoClip& watermarked, const VideoClip& original, const SpatioTemporalMask& mask) {
    if (!watermarked.same_shape(original)) throw InvalidArgument("fuse: clip shapes differ");
    if (mask.frames() != original.frames() || mask.height() != original.height() || mask.width() != original.width())
        throw InvalidArgument("fuse: mask shape does not match the clip");
    const auto u = mask.union_channels();
    VideoClip out = original;
    for (std::size_t t = 0; t < u.frames(); ++t)
        for (std::size_t y = 0; y < u.height(); ++y)
            for (std::size_t x = 0; x < u.width(); ++x)
                if (u.at(t, y, x))
                    for (std::size_t c = 0; c < 3; ++c) out.at(t, y, x, c) = watermarked.at(t, y, x, c);
    return out;
}

VideoClip apply_mask(const VideoClip& clip, const SpatioTemporalMask& mask) {
    if (mask.frames() != clip.frames() || mask.height() != clip.height() || mask.width() != clip.width())
        throw InvalidArgument("mask shape does not match the clip");
    const auto u = mask.union_channels();
    VideoClip out = clip;
    for (std::size_t t = 0; t < u.frames(); ++t)
        for (std::size_t y = 0; y < u.height(); ++y)
            for (std::size_t x = 0; x < u.width(); ++x)
                if (!u.at(t, y, x))
                    for (std::size_t c = 0; c < 3; ++c) out.at(t, y, x, c) = 0.0f;
    return out;
}

std::vector<float> decode(const ModelBundle<float>& bundle, const VideoClip& masked) {
    check_clip(bundle.mapping, masked);
    auto out = decode_batch<float>(bundle, Var<float>::constant(clip_to_batch<float>(masked)));
    return out.value().to_vector();
}

Tensor<float> predict_mask(const ModelBundle<float>& bundle, const VideoClip& attacked) {
    check_clip(bundle.mapping, attacked);
    auto out = predict_mask_batch<float>(bundle, Var<float>::constant(clip_to_batch<float>(attacked)));
    return batch_to_mask_estimate(out.value());
}

Tensor<float> jnd_map(const VideoClip& clip) {
    const auto j = jnd_map(clip_to_batch<float>(clip));
    Tensor<float> out({clip.frames(), clip.height(), clip.width()});
    std::copy_n(j.data(), out.size(), out.data());
    return out;
}

#define DIMWM_MODEL_INSTANTIATE(T)                                                                             \
    template class MessageTranslator<T>;                                                                       \
    template class VideoEncoder<T>;                                                                            \
    template class MessageDecoder<T>;                                                                          \
    template class ResidualUBlock<T>;                                                                          \
    template class NestedUNet<T>;                                                                              \
    template class MaskPredictor<T>;                                                                           \
    template struct ModelBundle<T>;                                                                            \
    template Tensor<T> jnd_map<T>(const Tensor<T>&);                                                           \
    template Tensor<T> broadcast_mask<T>(const Tensor<T>&, std::size_t);                                       \
    template Var<T> embed_batch<T>(const ModelBundle<T>&, const Tensor<T>&, const Tensor<T>&,                  \
                                   const std::optional<Tensor<T>>&);                                           \
    template Var<T> fuse_batch<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&);                          \
    template Var<T> decode_batch<T>(const ModelBundle<T>&, const Var<T>&);                                     \
    template Var<T> predict_mask_batch<T>(const ModelBundle<T>&, const Var<T>&);

DIMWM_MODEL_INSTANTIATE(float)
DIMWM_MODEL_INSTANTIATE(double)

}  // namespace dimwm
