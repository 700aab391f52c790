#include "dimwm/payload.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "dimwm/random.hpp"

namespace dimwm {

namespace {

void check_binary(const std::vector<std::uint8_t>& cells, const char* what) {
    for (auto v : cells)
        if (v > 1) throw InvalidArgument(std::string(what) + ": cells must be 0 or 1");
}

}  // namespace

// ---------------------------------------------------------------------------

BinaryMessage::BinaryMessage(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    if (bits_.empty()) throw InvalidArgument("message length must be at least 1");
    check_binary(bits_, "message");
}

std::string BinaryMessage::to_hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (std::size_t i = 0; i < bits_.size(); i += 4) {
        unsigned v = 0;
        for (std::size_t k = 0; k < 4; ++k) v = (v << 1) | (i + k < bits_.size() ? bits_[i + k] : 0u);
        out.push_back(digits[v]);
    }
    return out;
}

BinaryMessage BinaryMessage::from_hex(std::string_view hex, std::size_t length) {
    if (length == 0) throw InvalidArgument("message length must be at least 1");
    if (hex.size() != (length + 3) / 4)
        throw InvalidArgument("hex message has " + std::to_string(hex.size()) + " digits, expected " +
                              std::to_string((length + 3) / 4) + " for " + std::to_string(length) + " bits");
    std::vector<std::uint8_t> bits;
    for (std::size_t d = 0; d < hex.size(); ++d) {
        const char ch = hex[d];
        unsigned v;
        if (ch >= '0' && ch <= '9') v = ch - '0';
        else if (ch >= 'a' && ch <= 'f') v = ch - 'a' + 10;
        else if (ch >= 'A' && ch <= 'F') v = ch - 'A' + 10;
        else throw InvalidArgument(std::string("invalid hex digit '") + ch + "'");
        for (int k = 3; k >= 0; --k) {
            const std::uint8_t b = (v >> k) & 1u;
            if (bits.size() < length) bits.push_back(b);
            else if (b) throw InvalidArgument("hex message has non-zero padding bits");
        }
    }
    return BinaryMessage(std::move(bits));
}

// ---------------------------------------------------------------------------

SpatialMask::SpatialMask(std::size_t height, std::size_t width, std::size_t channels, std::uint8_t fill)
    : h_(height), w_(width), c_(channels), cells_(height * width * channels, fill) {
    if (!height || !width || !channels) throw InvalidArgument("mask dimensions must be positive");
    if (fill > 1) throw InvalidArgument("mask fill must be 0 or 1");
}

SpatialMask::SpatialMask(std::size_t height, std::size_t width, std::size_t channels, std::vector<std::uint8_t> cells)
    : h_(height), w_(width), c_(channels), cells_(std::move(cells)) {
    if (!height || !width || !channels) throw InvalidArgument("mask dimensions must be positive");
    if (cells_.size() != h_ * w_ * c_) throw InvalidArgument("mask cell count does not match its shape");
    check_binary(cells_, "spatial mask");
}

std::size_t SpatialMask::count() const { return std::accumulate(cells_.begin(), cells_.end(), std::size_t{0}); }

double SpatialMask::area_ratio() const {
    std::size_t active = 0;
    for (std::size_t p = 0; p < h_ * w_; ++p) {
        bool any = false;
        for (std::size_t c = 0; c < c_; ++c) any |= cells_[p * c_ + c] != 0;
        active += any;
    }
    return static_cast<double>(active) / static_cast<double>(h_ * w_);
}

SpatioTemporalMask::SpatioTemporalMask(std::size_t frames, std::size_t height, std::size_t width,
                                       std::size_t channels, std::uint8_t fill)
    : t_(frames), h_(height), w_(width), c_(channels), cells_(frames * height * width * channels, fill) {
    if (!frames || !height || !width || !channels) throw InvalidArgument("mask dimensions must be positive");
    if (fill > 1) throw InvalidArgument("mask fill must be 0 or 1");
}

SpatioTemporalMask::SpatioTemporalMask(std::size_t frames, std::size_t height, std::size_t width,
                                       std::size_t channels, std::vector<std::uint8_t> cells)
    : t_(frames), h_(height), w_(width), c_(channels), cells_(std::move(cells)) {
    if (!frames || !height || !width || !channels) throw InvalidArgument("mask dimensions must be positive");
    if (cells_.size() != t_ * h_ * w_ * c_) throw InvalidArgument("mask cell count does not match its shape");
    check_binary(cells_, "spatiotemporal mask");
}

SpatioTemporalMask SpatioTemporalMask::from_frames(const std::vector<SpatialMask>& frames) {
    if (frames.empty()) throw InvalidArgument("mask sequence needs at least one frame");
    const auto& f0 = frames.front();
    std::vector<std::uint8_t> cells;
    cells.reserve(frames.size() * f0.cells().size());
    for (const auto& f : frames) {
        if (f.height() != f0.height() || f.width() != f0.width() || f.channels() != f0.channels())
            throw InvalidArgument("mask frames differ in shape");
        cells.insert(cells.end(), f.cells().begin(), f.cells().end());
    }
    return SpatioTemporalMask(frames.size(), f0.height(), f0.width(), f0.channels(), std::move(cells));
}

SpatioTemporalMask SpatioTemporalMask::replicate(const SpatialMask& mask, std::size_t frames) {
    return from_frames(std::vector<SpatialMask>(frames, mask));
}

SpatialMask SpatioTemporalMask::frame(std::size_t t) const {
    if (t >= t_) throw InvalidArgument("frame index out of range");
    const std::size_t n = h_ * w_ * c_;
    return SpatialMask(h_, w_, c_, std::vector<std::uint8_t>(cells_.begin() + t * n, cells_.begin() + (t + 1) * n));
}

SpatioTemporalMask SpatioTemporalMask::union_channels() const {
    SpatioTemporalMask out(t_, h_, w_, 1);
    for (std::size_t p = 0; p < t_ * h_ * w_; ++p) {
        std::uint8_t any = 0;
        for (std::size_t c = 0; c < c_; ++c) any |= cells_[p * c_ + c];
        out.cells_[p] = any;
    }
    return out;
}

std::size_t SpatioTemporalMask::count() const {
    return std::accumulate(cells_.begin(), cells_.end(), std::size_t{0});
}

double SpatioTemporalMask::volume_ratio() const {
    const auto u = union_channels();
    return static_cast<double>(u.count()) / static_cast<double>(t_ * h_ * w_);
}

FrameCodebook::FrameCodebook(std::size_t channels, std::vector<std::vector<std::uint8_t>> codes)
    : channels_(channels), codes_(std::move(codes)) {
    for (std::size_t i = 0; i < codes_.size(); ++i) {
        if (codes_[i].size() != channels_) throw InvalidArgument("codeword width differs from channel count");
        check_binary(codes_[i], "codeword");
        if (std::none_of(codes_[i].begin(), codes_[i].end(), [](auto b) { return b != 0; }))
            throw InvalidArgument("all-zero codeword");
        for (std::size_t j = 0; j < i; ++j)
            if (codes_[i] == codes_[j]) throw InvalidArgument("duplicate codeword");
    }
}

// ---------------------------------------------------------------------------

MaskKind parse_mask_kind(std::string_view name) {
    if (name == "full") return MaskKind::Full;
    if (name == "rectangular") return MaskKind::Rectangular;
    if (name == "irregular") return MaskKind::Irregular;
    if (name == "segmented") return MaskKind::Segmented;
    throw InvalidArgument("unknown mask kind '" + std::string(name) + "'");
}

std::string_view mask_kind_name(MaskKind kind) {
    switch (kind) {
        case MaskKind::Full: return "full";
        case MaskKind::Rectangular: return "rectangular";
        case MaskKind::Irregular: return "irregular";
        case MaskKind::Segmented: return "segmented";
    }
    throw InvalidArgument("unknown mask kind");
}

BinaryMessage sample_message(std::size_t length, std::uint64_t seed) {
    if (length < 1) throw InvalidArgument("message length must be at least 1");
    auto rng = make_rng({seed, 0x6d7367});
    std::vector<std::uint8_t> bits(length);
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng() >> 63);
    return BinaryMessage(std::move(bits));
}

namespace {

void stamp_disc(SpatialMask& m, double cy, double cx, double radius) {
    const long h = static_cast<long>(m.height()), w = static_cast<long>(m.width());
    const long y0 = std::max(0L, static_cast<long>(std::floor(cy - radius)));
    const long y1 = std::min(h - 1, static_cast<long>(std::ceil(cy + radius)));
    const long x0 = std::max(0L, static_cast<long>(std::floor(cx - radius)));
    const long x1 = std::min(w - 1, static_cast<long>(std::ceil(cx + radius)));
    for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x) {
            const double dy = y - cy, dx = x - cx;
            if (dy * dy + dx * dx <= radius * radius) m.at(y, x) = 1;
        }
}

SpatialMask rectangular_mask(std::size_t h, std::size_t w, Rng& rng) {
    const auto rh = uniform_int(rng, std::max<std::size_t>(1, h / 8), std::max<std::size_t>(1, h / 2));
    const auto rw = uniform_int(rng, std::max<std::size_t>(1, w / 8), std::max<std::size_t>(1, w / 2));
    const auto y0 = uniform_int(rng, 0, static_cast<long>(h) - rh);
    const auto x0 = uniform_int(rng, 0, static_cast<long>(w) - rw);
    SpatialMask m(h, w, 1);
    for (long y = y0; y < y0 + rh; ++y)
        for (long x = x0; x < x0 + rw; ++x) m.at(y, x) = 1;
    return m;
}

// Union of 1-4 random polyline strokes with width in [H/16, H/4].
SpatialMask irregular_mask(std::size_t h, std::size_t w, Rng& rng) {
    const double pi = 3.14159265358979323846;
    for (;;) {
        SpatialMask m(h, w, 1);
        const auto strokes = uniform_int(rng, 1, 4);
        for (long s = 0; s < strokes; ++s) {
            const double width = uniform(rng, std::max(1.0, h / 16.0), std::max(1.0, h / 4.0));
            double y = uniform(rng, 0, h - 1.0), x = uniform(rng, 0, w - 1.0);
            const auto vertices = uniform_int(rng, 1, 4);
            stamp_disc(m, y, x, width / 2);
            for (long v = 0; v < vertices; ++v) {
                const double angle = uniform(rng, 0, 2 * pi);
                const double len = uniform(rng, std::max(1.0, h / 8.0), std::max(2.0, h / 2.0));
                const double ny = std::clamp(y + len * std::sin(angle), 0.0, h - 1.0);
                const double nx = std::clamp(x + len * std::cos(angle), 0.0, w - 1.0);
                const int steps = std::max(1, static_cast<int>(std::ceil(std::hypot(ny - y, nx - x) * 2)));
                for (int k = 1; k <= steps; ++k) {
                    const double f = static_cast<double>(k) / steps;
                    stamp_disc(m, y + f * (ny - y), x + f * (nx - x), width / 2);
                }
                y = ny;
                x = nx;
            }
        }
        const auto c = m.count();
        if (c > 0 && c < h * w) return m;
    }
}

// One 4-connected blob grown from a random seed cell to a random target area.
SpatialMask segmented_mask(std::size_t h, std::size_t w, Rng& rng) {
    SpatialMask m(h, w, 1);
    const auto target = std::max<std::size_t>(
        1, static_cast<std::size_t>(uniform(rng, 0.05, 0.5) * static_cast<double>(h * w)));
    std::vector<std::pair<long, long>> frontier;
    const long sy = uniform_int(rng, 0, static_cast<long>(h) - 1), sx = uniform_int(rng, 0, static_cast<long>(w) - 1);
    m.at(sy, sx) = 1;
    std::size_t area = 1;
    frontier.emplace_back(sy, sx);
    static constexpr std::array<std::pair<int, int>, 4> nbrs{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
    while (area < target && !frontier.empty()) {
        const auto pick = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(frontier.size()) - 1));
        const auto [y, x] = frontier[pick];
        std::vector<std::pair<long, long>> open;
        for (auto [dy, dx] : nbrs) {
            const long ny = y + dy, nx = x + dx;
            if (ny >= 0 && nx >= 0 && ny < static_cast<long>(h) && nx < static_cast<long>(w) && !m.at(ny, nx))
                open.emplace_back(ny, nx);
        }
        if (open.empty()) {
            frontier[pick] = frontier.back();
            frontier.pop_back();
            continue;
        }
        const auto [ny, nx] = open[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(open.size()) - 1))];
        m.at(ny, nx) = 1;
        ++area;
        frontier.emplace_back(ny, nx);
    }
    return m;
}

}  // namespace

SpatialMask generate_mask(MaskKind kind, std::size_t height, std::size_t width, std::uint64_t seed) {
    if (kind == MaskKind::Full) return SpatialMask(height, width, 1, 1);
    if (height < 8 || width < 8) throw InvalidArgument("generated masks need H, W >= 8");
    auto rng = make_rng({seed, 0x6d61736b, static_cast<std::uint64_t>(kind)});
    switch (kind) {
        case MaskKind::Rectangular: return rectangular_mask(height, width, rng);
        case MaskKind::Irregular: return irregular_mask(height, width, rng);
        case MaskKind::Segmented: return segmented_mask(height, width, rng);
        case MaskKind::Full: break;
    }
    throw InvalidArgument("unknown mask kind");
}

SpatialMask shift_mask(const SpatialMask& mask, long dx, long dy) {
    SpatialMask out(mask.height(), mask.width(), mask.channels());
    const long h = static_cast<long>(mask.height()), w = static_cast<long>(mask.width());
    const long ylo = std::max(0L, -dy), yhi = std::min(h, h - dy);
    const long xlo = std::max(0L, -dx), xhi = std::min(w, w - dx);
    for (long y = ylo; y < yhi; ++y)
        for (long x = xlo; x < xhi; ++x)
            for (std::size_t c = 0; c < mask.channels(); ++c) out.at(y + dy, x + dx, c) = mask.at(y, x, c);
    return out;
}

SpatioTemporalMask generate_mask_sequence(const SpatialMask& initial, std::size_t frames, std::size_t delta_max,
                                          std::uint64_t seed) {
    if (initial.is_empty()) throw InvalidArgument("initial mask is empty");
    if (frames < 1) throw InvalidArgument("sequence length must be at least 1");
    auto rng = make_rng({seed, 0x736571});
    std::vector<SpatialMask> seq{initial};
    seq.reserve(frames);
    SpatialMask current = initial;
    for (std::size_t t = 1; t < frames; ++t) {
        std::array<std::pair<int, int>, 8> dirs{{{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}}};
        shuffle(dirs.begin(), dirs.end(), rng);
        bool accepted = false;
        for (auto [ddx, ddy] : dirs) {
            const long k = uniform_int(rng, 0, static_cast<long>(delta_max));
            SpatialMask next = shift_mask(current, k * ddx, k * ddy);
            if (!next.is_empty()) {
                current = std::move(next);
                seq.push_back(current);
                accepted = true;
                break;
            }
        }
        if (!accepted) throw InternalError("no direction produced a non-empty shifted mask");
    }
    return SpatioTemporalMask::from_frames(seq);
}

FrameCodebook build_codebook(std::size_t frames, std::size_t channels) {
    if (channels == 0 || channels >= 64 || (std::uint64_t{1} << channels) - 1 < frames)
        throw CapacityExceeded(std::to_string(channels) + " channels cannot give " + std::to_string(frames) +
                               " distinct non-zero codes");
    std::vector<std::vector<std::uint8_t>> codes(frames, std::vector<std::uint8_t>(channels));
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t c = 0; c < channels; ++c) codes[t][c] = static_cast<std::uint8_t>(((t + 1) >> c) & 1u);
    return FrameCodebook(channels, std::move(codes));
}

SpatioTemporalMask encode_multichannel(const SpatioTemporalMask& sequence, const FrameCodebook& codebook) {
    if (sequence.channels() != 1) throw InvalidArgument("multi-channel encoding expects a single-channel sequence");
    if (sequence.frames() != codebook.size())
        throw InvalidArgument("sequence has " + std::to_string(sequence.frames()) + " frames, codebook has " +
                              std::to_string(codebook.size()));
    const std::size_t C = codebook.channels();
    SpatioTemporalMask out(sequence.frames(), sequence.height(), sequence.width(), C);
    for (std::size_t t = 0; t < sequence.frames(); ++t)
        for (std::size_t y = 0; y < sequence.height(); ++y)
            for (std::size_t x = 0; x < sequence.width(); ++x)
                for (std::size_t c = 0; c < C; ++c)
                    out.at(t, y, x, c) = static_cast<std::uint8_t>(sequence.at(t, y, x) & codebook.code(t)[c]);
    return out;
}

}  // namespace dimwm
