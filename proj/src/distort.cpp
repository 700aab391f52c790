#include "dimwm/distort.hpp"

#include <jpeglib.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>

#include "dimwm/error.hpp"

namespace dimwm {

namespace fs = std::filesystem;
using nn::Resampling;
using nn::Var;

std::string category_name(Category c) {
    switch (c) {
        case Category::Valuemetric: return "valuemetric";
        case Category::Geometric: return "geometric";
        case Category::FrameLevel: return "frame-level";
        case Category::Compression: return "compression";
    }
    return "?";
}

Category parse_category(const std::string& name) {
    for (Category c : {Category::Valuemetric, Category::Geometric, Category::FrameLevel, Category::Compression})
        if (category_name(c) == name) return c;
    throw InvalidArgument("unknown distortion category '" + name + "'");
}

std::string phase_name(Phase p) { return p == Phase::Training ? "training" : "evaluation"; }

Phase parse_phase(const std::string& name) {
    if (name == "training" || name == "train") return Phase::Training;
    if (name == "evaluation" || name == "eval") return Phase::Evaluation;
    throw InvalidArgument("unknown phase '" + name + "'");
}

double DistortionSpec::param(const std::string& key) const {
    auto it = params.find(key);
    if (it == params.end()) throw InvalidArgument("distortion '" + name + "' has no parameter '" + key + "'");
    return it->second.lo;
}

// ---------------------------------------------------------------------------
// Presets and registry

namespace {

DistortionSpec make(std::string name, Category cat, std::map<std::string, ParamRange> params, bool diff = true) {
    return DistortionSpec{std::move(name), cat, std::move(params), diff};
}

ParamRange fixed(double v) { return {v, v}; }

const std::vector<DistortionSpec>& training_presets() {
    static const std::vector<DistortionSpec> p = {
        make("gaussian_blur", Category::Valuemetric, {{"kernel", fixed(1)}, {"sigma", fixed(5)}}),
        make("gaussian_noise", Category::Valuemetric, {{"sigma", fixed(0.1)}}),
        make("median_filter", Category::Valuemetric, {{"kernel", fixed(5)}}),
        make("salt_pepper", Category::Valuemetric, {{"ratio", fixed(0.1)}}),
        make("rotation", Category::Geometric, {{"angle", {-90, 90}}}),
        make("perspective", Category::Geometric, {{"scale", {0.1, 0.5}}}),
        make("hflip", Category::Geometric, {}),
        make("frame_shuffle", Category::FrameLevel, {}),
        make("frame_replace", Category::FrameLevel, {}),
        make("frame_drop", Category::FrameLevel, {}),
        make("frame_insert", Category::FrameLevel, {}),
        make("compression_surrogate", Category::Compression, {{"intra", {1.5, 5}}, {"inter", {5, 8}}}),
    };
    return p;
}

const std::vector<DistortionSpec>& evaluation_presets() {
    static const std::vector<DistortionSpec> p = {
        make("jpeg", Category::Valuemetric, {{"quality", fixed(60)}}, false),
        make("gaussian_blur", Category::Valuemetric, {{"kernel", fixed(1)}, {"sigma", fixed(3)}}),
        make("gaussian_noise", Category::Valuemetric, {{"sigma", fixed(0.05)}}),
        make("median_filter", Category::Valuemetric, {{"kernel", fixed(3)}}),
        make("salt_pepper", Category::Valuemetric, {{"ratio", fixed(0.05)}}),
        make("rotation", Category::Geometric, {{"angle", {-30, 30}}}),
        make("perspective", Category::Geometric, {{"scale", {0.1, 0.3}}}),
        make("hflip", Category::Geometric, {}),
        make("frame_shuffle", Category::FrameLevel, {}),
        make("frame_replace", Category::FrameLevel, {}),
        make("frame_drop", Category::FrameLevel, {}),
        make("frame_insert", Category::FrameLevel, {}),
        make("h264_crf20", Category::Compression, {{"crf", fixed(20)}}, false),
        make("h264_crf25", Category::Compression, {{"crf", fixed(25)}}, false),
    };
    return p;
}

struct Plugin {
    Category category;
    AttackFn fn;
};

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, Plugin>& registry() {
    static std::map<std::string, Plugin> r;
    return r;
}

std::optional<Plugin> find_plugin(const std::string& name) {
    std::lock_guard lock(registry_mutex());
    auto it = registry().find(name);
    if (it == registry().end()) return std::nullopt;
    return it->second;
}

bool is_builtin(const std::string& name) {
    for (const auto* list : {&training_presets(), &evaluation_presets()})
        for (const auto& s : *list)
            if (s.name == name) return true;
    return false;
}

}  // namespace

const std::vector<DistortionSpec>& presets(Phase phase) {
    return phase == Phase::Training ? training_presets() : evaluation_presets();
}

DistortionSpec preset(Phase phase, const std::string& name) {
    for (const auto& s : presets(phase))
        if (s.name == name) return s;
    if (auto p = find_plugin(name)) return make(name, p->category, {}, false);
    throw InvalidArgument("unknown distortion '" + name + "' for phase " + phase_name(phase));
}

void register_attack(const std::string& name, Category category, AttackFn fn) {
    if (name.empty() || !fn) throw InvalidArgument("plugin attacks need a name and a function");
    if (is_builtin(name)) throw InvalidArgument("'" + name + "' is a built-in distortion");
    std::lock_guard lock(registry_mutex());
    registry()[name] = Plugin{category, std::move(fn)};
}

void unregister_attack(const std::string& name) {
    std::lock_guard lock(registry_mutex());
    registry().erase(name);
}

DistortionSpec sample_pool(Phase phase, std::uint64_t seed, const std::vector<Category>& enabled) {
    std::vector<DistortionSpec> pool = presets(phase);
    if (phase == Phase::Evaluation) {
        std::lock_guard lock(registry_mutex());
        for (const auto& [name, p] : registry()) pool.push_back(make(name, p.category, {}, false));
    }
    std::vector<Category> cats;
    for (const auto& s : pool) {
        const bool on = enabled.empty() || std::find(enabled.begin(), enabled.end(), s.category) != enabled.end();
        if (on && std::find(cats.begin(), cats.end(), s.category) == cats.end()) cats.push_back(s.category);
    }
    if (cats.empty()) throw InvalidArgument("no distortion category enabled");
    std::sort(cats.begin(), cats.end());
    auto rng = make_rng({seed, 0x706f6f6c, static_cast<std::uint64_t>(phase)});
    const Category cat = cats[uniform_int(rng, 0, static_cast<long>(cats.size()) - 1)];
    std::vector<const DistortionSpec*> members;
    for (const auto& s : pool)
        if (s.category == cat) members.push_back(&s);
    return *members[uniform_int(rng, 0, static_cast<long>(members.size()) - 1)];
}

// ---------------------------------------------------------------------------
// Mask transforms

MaskTransform MaskTransform::identity(std::size_t frames) {
    MaskTransform m;
    m.frame_source.resize(frames);
    std::iota(m.frame_source.begin(), m.frame_source.end(), 0);
    return m;
}

bool MaskTransform::is_identity() const {
    if (warp) return false;
    for (std::size_t t = 0; t < frame_source.size(); ++t)
        if (frame_source[t] != static_cast<int>(t)) return false;
    return true;
}

SpatioTemporalMask MaskTransform::apply(const SpatioTemporalMask& mask) const {
    const std::size_t T = mask.frames(), H = mask.height(), W = mask.width(), C = mask.channels();
    if (frame_source.size() != T) throw InvalidArgument("mask transform frame count does not match the mask");
    if (warp && warp->out_shape != Shape{H, W}) throw InvalidArgument("mask transform warp does not match the mask");
    SpatioTemporalMask out(T, H, W, C);
    Tensor<float> plane({H, W});
    for (std::size_t t = 0; t < T; ++t) {
        const int src = frame_source[t];
        if (src < 0) continue;
        if (static_cast<std::size_t>(src) >= T) throw InvalidArgument("mask transform frame index out of range");
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) plane.at(y, x) = mask.at(src, y, x, c) ? 1.0f : 0.0f;
            const Tensor<float> moved = warp ? nn::resample(plane, *warp) : plane;
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) out.at(t, y, x, c) = moved.at(y, x) > 0.5f ? 1 : 0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-sample plans over one (3, T, H, W) sample

namespace {

struct Dims {
    std::size_t T, H, W;
    std::size_t plane() const { return H * W; }
    std::size_t volume() const { return 3 * T * H * W; }
    std::size_t index(std::size_t c, std::size_t t, std::size_t y, std::size_t x) const {
        return ((c * T + t) * H + y) * W + x;
    }
};

std::size_t reflect(long i, long n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return static_cast<std::size_t>(i);
}

std::size_t replicate(long i, long n) { return static_cast<std::size_t>(std::clamp(i, 0L, n - 1)); }

long odd_kernel(const DistortionSpec& spec) {
    const double k = spec.param("kernel");
    if (k < 1 || k != std::floor(k) || static_cast<long>(k) % 2 == 0)
        throw InvalidArgument(spec.name + ": kernel size must be a positive odd integer");
    return static_cast<long>(k);
}

double draw(const DistortionSpec& spec, const std::string& key, Rng& rng) {
    auto it = spec.params.find(key);
    if (it == spec.params.end()) throw InvalidArgument("distortion '" + spec.name + "' has no parameter '" + key + "'");
    const auto [lo, hi] = it->second;
    if (lo > hi) throw InvalidArgument(spec.name + ": parameter '" + key + "' has an empty range");
    return lo == hi ? lo : uniform(rng, lo, hi);
}

template <class T>
struct SamplePlan {
    Resampling<T> plan;
    MaskTransform transform;
};

template <class T>
Resampling<T> identity_plan(const Dims& d) {
    Resampling<T> p;
    p.out_shape = {3, d.T, d.H, d.W};
    for (std::size_t i = 0; i < d.volume(); ++i) {
        p.begin_row();
        p.tap(i, T(1));
    }
    p.finish();
    return p;
}

template <class T>
Resampling<T> blur_plan(const Dims& d, long k, double sigma) {
    std::vector<double> g(k);
    const long r = k / 2;
    double sum = 0;
    for (long i = 0; i < k; ++i) sum += g[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    for (auto& v : g) v /= sum;
    Resampling<T> p;
    p.out_shape = {3, d.T, d.H, d.W};
    std::map<std::size_t, double> acc;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < d.T; ++t)
            for (std::size_t y = 0; y < d.H; ++y)
                for (std::size_t x = 0; x < d.W; ++x) {
                    acc.clear();
                    for (long dy = -r; dy <= r; ++dy)
                        for (long dx = -r; dx <= r; ++dx) {
                            const std::size_t sy = reflect(static_cast<long>(y) + dy, static_cast<long>(d.H));
                            const std::size_t sx = reflect(static_cast<long>(x) + dx, static_cast<long>(d.W));
                            acc[d.index(c, t, sy, sx)] += g[dy + r] * g[dx + r];
                        }
                    p.begin_row();
                    for (const auto& [col, w] : acc) p.tap(col, static_cast<T>(w));
                }
    p.finish();
    return p;
}

template <class T>
Resampling<T> noise_plan(const Dims& d, double sigma, Rng& rng) {
    auto p = identity_plan<T>(d);
    p.bias.resize(d.volume());
    for (auto& b : p.bias) b = static_cast<T>(sigma * normal(rng));
    return p;
}

template <class T>
Resampling<T> median_plan(const Dims& d, long k, const T* x) {
    const long r = k / 2;
    Resampling<T> p;
    p.out_shape = {3, d.T, d.H, d.W};
    std::vector<std::size_t> window(static_cast<std::size_t>(k * k));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < d.T; ++t)
            for (std::size_t y = 0; y < d.H; ++y)
                for (std::size_t xx = 0; xx < d.W; ++xx) {
                    std::size_t n = 0;
                    for (long dy = -r; dy <= r; ++dy)
                        for (long dx = -r; dx <= r; ++dx)
                            window[n++] = d.index(c, t, replicate(static_cast<long>(y) + dy, static_cast<long>(d.H)),
                                                  replicate(static_cast<long>(xx) + dx, static_cast<long>(d.W)));
                    auto mid = window.begin() + static_cast<long>(window.size() / 2);
                    std::nth_element(window.begin(), mid, window.end(), [&](std::size_t a, std::size_t b) {
                        return x[a] < x[b] || (x[a] == x[b] && a < b);
                    });
                    p.begin_row();
                    p.tap(*mid, T(1));
                }
    p.finish();
    return p;
}

template <class T>
Resampling<T> salt_pepper_plan(const Dims& d, double ratio, Rng& rng) {
    if (ratio < 0 || ratio > 1) throw InvalidArgument("salt_pepper: ratio must lie in [0, 1]");
    const std::size_t cells = d.T * d.plane();
    const auto hits = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(cells)));
    std::vector<std::size_t> order(cells);
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> value(cells, -1);
    for (std::size_t i = 0; i < hits; ++i) {
        const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<long>(i), static_cast<long>(cells) - 1));
        std::swap(order[i], order[j]);
        value[order[i]] = uniform01(rng) < 0.5 ? 0 : 1;
    }
    Resampling<T> p;
    p.out_shape = {3, d.T, d.H, d.W};
    p.bias.assign(d.volume(), T(0));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t cell = 0; cell < cells; ++cell) {
            const std::size_t i = c * cells + cell;
            p.begin_row();
            if (value[cell] < 0)
                p.tap(i, T(1));
            else
                p.bias[i] = static_cast<T>(value[cell]);
        }
    p.finish();
    return p;
}

using Homography = std::array<double, 8>;  // maps output (x, y) to source coordinates

Resampling<double> frame_warp(const Dims& d, const std::function<std::array<double, 2>(double, double)>& src) {
    Resampling<double> p;
    p.out_shape = {d.H, d.W};
    for (std::size_t y = 0; y < d.H; ++y)
        for (std::size_t x = 0; x < d.W; ++x) {
            const auto [sx, sy] = src(static_cast<double>(x), static_cast<double>(y));
            p.begin_row();
            if (!std::isfinite(sx) || !std::isfinite(sy)) continue;
            const double fx0 = std::floor(sx), fy0 = std::floor(sy);
            const double ax = sx - fx0, ay = sy - fy0;
            const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
            const double wx[2] = {1 - ax, ax}, wy[2] = {1 - ay, ay};
            for (int j = 0; j < 2; ++j)
                for (int i = 0; i < 2; ++i) {
                    const long xi = x0 + i, yj = y0 + j;
                    const double w = wx[i] * wy[j];
                    if (w == 0 || xi < 0 || yj < 0 || xi >= static_cast<long>(d.W) || yj >= static_cast<long>(d.H))
                        continue;
                    p.tap(static_cast<std::size_t>(yj) * d.W + static_cast<std::size_t>(xi), w);
                }
        }
    p.finish();
    return p;
}

Resampling<double> rotation_warp(const Dims& d, double degrees) {
    const double a = degrees * 3.14159265358979323846 / 180.0;
    const double cx = (static_cast<double>(d.W) - 1) / 2, cy = (static_cast<double>(d.H) - 1) / 2;
    const double c = std::cos(a), s = std::sin(a);
    // Counter-clockwise on screen: the inverse map rotates output points clockwise.
    return frame_warp(d, [&](double x, double y) {
        const double u = x - cx, v = y - cy;
        return std::array<double, 2>{c * u - s * v + cx, s * u + c * v + cy};
    });
}

Homography solve_homography(const std::array<std::array<double, 2>, 4>& from,
                            const std::array<std::array<double, 2>, 4>& to) {
    Eigen::Matrix<double, 8, 8> A;
    Eigen::Matrix<double, 8, 1> b;
    for (int i = 0; i < 4; ++i) {
        const double x = from[i][0], y = from[i][1], u = to[i][0], v = to[i][1];
        A.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
        A.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
        b(2 * i) = u;
        b(2 * i + 1) = v;
    }
    const Eigen::Matrix<double, 8, 1> h = A.fullPivLu().solve(b);
    Homography out{};
    for (int i = 0; i < 8; ++i) out[i] = h(i);
    return out;
}

Resampling<double> perspective_warp(const Dims& d, double scale, Rng& rng) {
    const long W = static_cast<long>(d.W), H = static_cast<long>(d.H);
    const long dw = static_cast<long>(scale * static_cast<double>(W / 2));
    const long dh = static_cast<long>(scale * static_cast<double>(H / 2));
    auto pick = [&](long lo, long hi_exclusive) { return static_cast<double>(uniform_int(rng, lo, hi_exclusive - 1)); };
    const std::array<std::array<double, 2>, 4> start = {{{0, 0},
                                                         {static_cast<double>(W - 1), 0},
                                                         {static_cast<double>(W - 1), static_cast<double>(H - 1)},
                                                         {0, static_cast<double>(H - 1)}}};
    std::array<std::array<double, 2>, 4> end{};
    end[0] = {pick(0, dw + 1), pick(0, dh + 1)};
    end[1] = {pick(W - dw - 1, W), pick(0, dh + 1)};
    end[2] = {pick(W - dw - 1, W), pick(H - dh - 1, H)};
    end[3] = {pick(0, dw + 1), pick(H - dh - 1, H)};
    const Homography h = solve_homography(end, start);
    return frame_warp(d, [&](double x, double y) {
        const double den = h[6] * x + h[7] * y + 1;
        return std::array<double, 2>{(h[0] * x + h[1] * y + h[2]) / den, (h[3] * x + h[4] * y + h[5]) / den};
    });
}

Resampling<double> hflip_warp(const Dims& d) {
    const double last = static_cast<double>(d.W) - 1;
    return frame_warp(d, [&](double x, double y) { return std::array<double, 2>{last - x, y}; });
}

template <class U>
Resampling<U> cast_plan(const Resampling<double>& p) {
    Resampling<U> out;
    out.out_shape = p.out_shape;
    out.row = p.row;
    out.col = p.col;
    out.weight.assign(p.weight.begin(), p.weight.end());
    out.bias.assign(p.bias.begin(), p.bias.end());
    return out;
}

template <class T>
Resampling<T> lift_warp(const Dims& d, const Resampling<float>& frame) {
    Resampling<T> p;
    p.out_shape = {3, d.T, d.H, d.W};
    for (std::size_t ct = 0; ct < 3 * d.T; ++ct) {
        const std::size_t base = ct * d.plane();
        for (std::size_t i = 0; i < d.plane(); ++i) {
            p.begin_row();
            for (std::uint32_t k = frame.row[i]; k < frame.row[i + 1]; ++k)
                p.tap(base + frame.col[k], static_cast<T>(frame.weight[k]));
        }
    }
    p.finish();
    return p;
}

// Output frame t copies source frame src[t], or is all white when src[t] < 0.
template <class T>
Resampling<T> frame_plan(const Dims& d, const std::vector<int>& src) {
    Resampling<T> p;
    p.out_shape = {3, d.T, d.H, d.W};
    p.bias.assign(d.volume(), T(0));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < d.T; ++t)
            for (std::size_t i = 0; i < d.plane(); ++i) {
                const std::size_t row = (c * d.T + t) * d.plane() + i;
                p.begin_row();
                if (src[t] < 0)
                    p.bias[row] = T(1);
                else
                    p.tap((c * d.T + static_cast<std::size_t>(src[t])) * d.plane() + i, T(1));
            }
    p.finish();
    return p;
}

std::vector<int> frame_edit(const std::string& name, std::size_t T, Rng& rng) {
    std::vector<int> src(T);
    std::iota(src.begin(), src.end(), 0);
    const long last = static_cast<long>(T) - 1;
    if (name == "frame_shuffle") {
        shuffle(src.begin(), src.end(), rng);
    } else if (name == "frame_replace") {
        src[uniform_int(rng, 0, last)] = -1;
    } else if (name == "frame_drop") {
        const long k = uniform_int(rng, 0, last);
        src.erase(src.begin() + k);
        src.push_back(-1);
    } else if (name == "frame_insert") {
        const long k = uniform_int(rng, 0, last);
        src.insert(src.begin() + k, -1);
        src.pop_back();
    } else {
        throw InvalidArgument("unknown frame attack '" + name + "'");
    }
    return src;
}

template <class T>
SamplePlan<T> plan_sample(const DistortionSpec& spec, const Dims& d, const T* x, Rng& rng) {
    SamplePlan<T> out;
    out.transform = MaskTransform::identity(d.T);
    const std::string& n = spec.name;
    if (n == "gaussian_blur") {
        const long k = odd_kernel(spec);
        const double sigma = draw(spec, "sigma", rng);
        if (sigma <= 0) throw InvalidArgument("gaussian_blur: sigma must be positive");
        out.plan = k == 1 ? identity_plan<T>(d) : blur_plan<T>(d, k, sigma);
    } else if (n == "gaussian_noise") {
        out.plan = noise_plan<T>(d, draw(spec, "sigma", rng), rng);
    } else if (n == "median_filter") {
        out.plan = median_plan<T>(d, odd_kernel(spec), x);
    } else if (n == "salt_pepper") {
        out.plan = salt_pepper_plan<T>(d, draw(spec, "ratio", rng), rng);
    } else if (n == "rotation" || n == "perspective" || n == "hflip") {
        Resampling<double> w;
        if (n == "rotation")
            w = rotation_warp(d, draw(spec, "angle", rng));
        else if (n == "perspective")
            w = perspective_warp(d, draw(spec, "scale", rng), rng);
        else
            w = hflip_warp(d);
        out.transform.warp = cast_plan<float>(w);
        out.plan = lift_warp<T>(d, *out.transform.warp);
    } else if (n.rfind("frame_", 0) == 0) {
        out.transform.frame_source = frame_edit(n, d.T, rng);
        out.plan = frame_plan<T>(d, out.transform.frame_source);
    } else {
        throw InvalidArgument("distortion '" + n + "' has no resampling form");
    }
    return out;
}

// Standard JPEG luminance table (quality 50).
constexpr int kLumaQ50[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                              14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                              18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                              49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

template <class T>
Tensor<T> quant_steps(std::size_t n, std::size_t frames, std::size_t H, std::size_t W,
                      const std::vector<double>& strength) {
    Tensor<T> s({n, 3, frames, H, W});
    std::size_t i = 0;
    for (std::size_t b = 0; b < n; ++b) {
        if (!(strength[b] > 0)) throw InvalidArgument("compression strength must be positive");
        for (std::size_t ct = 0; ct < 3 * frames; ++ct)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    s[i++] = static_cast<T>(kLumaQ50[(y % 8) * 8 + x % 8] / 255.0 * strength[b] / 5.0);
    }
    return s;
}

template <class T>
Var<T> dct_quantize(const Var<T>& x, const Tensor<T>& steps) {
    return nn::block_dct(nn::soft_quantize(nn::block_dct(x, false), steps), true);
}

}  // namespace

template <class T>
Var<T> compression_surrogate(const Var<T>& batch, const std::vector<double>& intra, const std::vector<double>& inter) {
    if (batch.value().rank() != 5 || batch.dim(1) != 3) throw InvalidArgument("expected an (N, 3, T, H, W) batch");
    const std::size_t n = batch.dim(0), frames = batch.dim(2), H = batch.dim(3), W = batch.dim(4);
    if (intra.size() != n || inter.size() != n) throw InvalidArgument("one strength pair per sample is required");
    const auto intra_q = quant_steps<T>(n, frames, H, W, intra);
    const auto inter_q = quant_steps<T>(n, 1, H, W, inter);
    const auto coded = dct_quantize(batch, intra_q);
    std::vector<Var<T>> out{nn::slice_frames(coded, 0, 1)};
    for (std::size_t t = 1; t < frames; ++t) {
        const auto residual = nn::sub(nn::slice_frames(coded, t, 1), out.back());
        out.push_back(nn::add(out.back(), dct_quantize(residual, inter_q)));
    }
    return frames == 1 ? out[0] : nn::concat_frames(out);
}

VideoClip compression_surrogate(const VideoClip& clip, double intra_strength, double inter_strength) {
    const auto x = Var<double>::constant(clip_to_batch<double>(clip));
    const auto y = nn::clamp(compression_surrogate(x, {intra_strength}, {inter_strength}), 0.0, 1.0);
    return batch_to_clip(y.value());
}

template <class T>
BatchAttack<T> apply_batch(const DistortionSpec& spec, const Var<T>& batch, std::uint64_t seed) {
    if (batch.value().rank() != 5 || batch.dim(1) != 3) throw InvalidArgument("expected an (N, 3, T, H, W) batch");
    const std::size_t n = batch.dim(0);
    const Dims d{batch.dim(2), batch.dim(3), batch.dim(4)};
    BatchAttack<T> out;
    if (spec.name == "compression_surrogate") {
        std::vector<double> intra(n), inter(n);
        for (std::size_t b = 0; b < n; ++b) {
            auto rng = make_rng({seed, b});
            intra[b] = draw(spec, "intra", rng);
            inter[b] = draw(spec, "inter", rng);
        }
        out.clip = nn::clamp(compression_surrogate(batch, intra, inter), T(0), T(1));
        out.transforms.assign(n, MaskTransform::identity(d.T));
        return out;
    }
    if (!spec.differentiable || find_plugin(spec.name))
        throw InvalidArgument("distortion '" + spec.name + "' is not differentiable");

    Resampling<T> merged;
    merged.out_shape = batch.shape();
    const std::size_t vol = d.volume();
    merged.bias.assign(n * vol, T(0));
    bool any_bias = false;
    for (std::size_t b = 0; b < n; ++b) {
        auto rng = make_rng({seed, b});
        auto sp = plan_sample<T>(spec, d, batch.value().data() + b * vol, rng);
        const std::size_t base = b * vol;
        for (std::size_t i = 0; i < vol; ++i) {
            merged.begin_row();
            for (std::uint32_t k = sp.plan.row[i]; k < sp.plan.row[i + 1]; ++k)
                merged.tap(base + sp.plan.col[k], sp.plan.weight[k]);
        }
        if (!sp.plan.bias.empty()) {
            any_bias = true;
            std::copy(sp.plan.bias.begin(), sp.plan.bias.end(), merged.bias.begin() + static_cast<long>(base));
        }
        out.transforms.push_back(std::move(sp.transform));
    }
    merged.finish();
    if (!any_bias) merged.bias.clear();
    out.clip = nn::clamp(nn::resample(batch, merged), T(0), T(1));
    return out;
}

// ---------------------------------------------------------------------------
// Real codecs

namespace {

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

std::vector<unsigned char> to_rgb8(const VideoClip& clip, std::size_t t) {
    std::vector<unsigned char> rgb(clip.height() * clip.width() * 3);
    std::size_t i = 0;
    for (std::size_t y = 0; y < clip.height(); ++y)
        for (std::size_t x = 0; x < clip.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c)
                rgb[i++] = static_cast<unsigned char>(std::lround(std::clamp(clip.at(t, y, x, c), 0.0f, 1.0f) * 255.0f));
    return rgb;
}

void from_rgb8(VideoClip& clip, std::size_t t, const unsigned char* rgb) {
    std::size_t i = 0;
    for (std::size_t y = 0; y < clip.height(); ++y)
        for (std::size_t x = 0; x < clip.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c) clip.at(t, y, x, c) = static_cast<float>(rgb[i++]) / 255.0f;
}

std::vector<unsigned char> jpeg_frame(const std::vector<unsigned char>& rgb, std::size_t H, std::size_t W,
                                      int quality) {
    std::vector<unsigned char> decoded(rgb.size());
    unsigned char* buffer = nullptr;
    unsigned long size = 0;
    {
        jpeg_compress_struct cinfo{};
        JpegError err{};
        cinfo.err = jpeg_std_error(&err.mgr);
        err.mgr.error_exit = jpeg_error_exit;
        if (setjmp(err.jump)) {
            jpeg_destroy_compress(&cinfo);
            std::free(buffer);
            throw InternalError(std::string("jpeg encode failed: ") + err.message);
        }
        jpeg_create_compress(&cinfo);
        jpeg_mem_dest(&cinfo, &buffer, &size);
        cinfo.image_width = static_cast<JDIMENSION>(W);
        cinfo.image_height = static_cast<JDIMENSION>(H);
        cinfo.input_components = 3;
        cinfo.in_color_space = JCS_RGB;
        jpeg_set_defaults(&cinfo);
        jpeg_set_quality(&cinfo, quality, TRUE);
        jpeg_start_compress(&cinfo, TRUE);
        while (cinfo.next_scanline < cinfo.image_height) {
            JSAMPROW row = const_cast<unsigned char*>(rgb.data() + cinfo.next_scanline * W * 3);
            jpeg_write_scanlines(&cinfo, &row, 1);
        }
        jpeg_finish_compress(&cinfo);
        jpeg_destroy_compress(&cinfo);
    }
    {
        jpeg_decompress_struct dinfo{};
        JpegError err{};
        dinfo.err = jpeg_std_error(&err.mgr);
        err.mgr.error_exit = jpeg_error_exit;
        if (setjmp(err.jump)) {
            jpeg_destroy_decompress(&dinfo);
            std::free(buffer);
            throw InternalError(std::string("jpeg decode failed: ") + err.message);
        }
        jpeg_create_decompress(&dinfo);
        jpeg_mem_src(&dinfo, buffer, size);
        jpeg_read_header(&dinfo, TRUE);
        dinfo.out_color_space = JCS_RGB;
        jpeg_start_decompress(&dinfo);
        while (dinfo.output_scanline < dinfo.output_height) {
            JSAMPROW row = decoded.data() + dinfo.output_scanline * W * 3;
            jpeg_read_scanlines(&dinfo, &row, 1);
        }
        jpeg_finish_decompress(&dinfo);
        jpeg_destroy_decompress(&dinfo);
    }
    std::free(buffer);
    return decoded;
}

std::optional<fs::path> find_ffmpeg() {
    if (const char* env = std::getenv("DIMWM_FFMPEG"); env && *env) {
        if (fs::exists(env)) return fs::path(env);
        return std::nullopt;
    }
    const char* path = std::getenv("PATH");
    if (!path) return std::nullopt;
    std::stringstream ss(path);
    std::string dir;
    while (std::getline(ss, dir, ':')) {
        if (dir.empty()) continue;
        const fs::path candidate = fs::path(dir) / "ffmpeg";
        std::error_code ec;
        if (fs::is_regular_file(candidate, ec)) return candidate;
    }
    return std::nullopt;
}

std::string quote(const fs::path& p) {
    std::string s = "'";
    for (char c : p.string()) s += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return s + "'";
}

}  // namespace

VideoClip jpeg_roundtrip(const VideoClip& clip, int quality) {
    if (quality < 1 || quality > 100) throw InvalidArgument("jpeg quality must lie in [1, 100]");
    VideoClip out = clip;
    for (std::size_t t = 0; t < clip.frames(); ++t)
        from_rgb8(out, t, jpeg_frame(to_rgb8(clip, t), clip.height(), clip.width(), quality).data());
    return out;
}

bool codec_available() { return find_ffmpeg().has_value(); }

VideoClip h264_roundtrip(const VideoClip& clip, int crf) {
    const auto ffmpeg = find_ffmpeg();
    if (!ffmpeg) throw EnvironmentError("H.264 codec bridge unavailable: no ffmpeg (set DIMWM_FFMPEG or PATH)");
    if (clip.height() % 2 || clip.width() % 2) throw InvalidArgument("H.264 round trip needs even frame sizes");
    std::error_code ec;
    const fs::path dir = fs::temp_directory_path() /
                         ("dimwm-h264-" + std::to_string(std::random_device{}()) + "-" + std::to_string(crf));
    fs::create_directories(dir);
    struct Cleanup {
        fs::path p;
        ~Cleanup() {
            std::error_code e;
            fs::remove_all(p, e);
        }
    } cleanup{dir};

    const fs::path in = dir / "in.rgb", mid = dir / "mid.mp4", back = dir / "out.rgb";
    {
        std::ofstream f(in, std::ios::binary);
        for (std::size_t t = 0; t < clip.frames(); ++t) {
            const auto rgb = to_rgb8(clip, t);
            f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
        }
    }
    const std::string size = std::to_string(clip.width()) + "x" + std::to_string(clip.height());
    const std::string enc = quote(*ffmpeg) + " -nostdin -loglevel error -y -f rawvideo -pix_fmt rgb24 -s " + size +
                            " -r 25 -i " + quote(in) + " -c:v libx264 -crf " + std::to_string(crf) +
                            " -pix_fmt yuv420p " + quote(mid);
    const std::string dec = quote(*ffmpeg) + " -nostdin -loglevel error -y -i " + quote(mid) +
                            " -f rawvideo -pix_fmt rgb24 " + quote(back);
    if (std::system(enc.c_str()) != 0 || std::system(dec.c_str()) != 0)
        throw EnvironmentError("H.264 codec bridge failed (ffmpeg exited with an error)");
    std::ifstream f(back, std::ios::binary);
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::size_t frame_bytes = clip.height() * clip.width() * 3;
    if (data.size() < frame_bytes * clip.frames())
        throw EnvironmentError("H.264 codec bridge returned " + std::to_string(data.size() / frame_bytes) +
                               " frames, expected " + std::to_string(clip.frames()));
    VideoClip out = clip;
    for (std::size_t t = 0; t < clip.frames(); ++t) from_rgb8(out, t, data.data() + t * frame_bytes);
    return out;
}

AttackOutcome apply(const DistortionSpec& spec, const VideoClip& clip, std::uint64_t seed) {
    for (float v : clip.pixels().storage())
        if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("attack input must lie in [0, 1]");
    const MaskTransform id = MaskTransform::identity(clip.frames());
    if (spec.name == "jpeg") return {jpeg_roundtrip(clip, static_cast<int>(spec.param("quality"))), id};
    if (spec.name.rfind("h264", 0) == 0) return {h264_roundtrip(clip, static_cast<int>(spec.param("crf"))), id};
    if (auto plugin = find_plugin(spec.name)) {
        auto rng = make_rng({seed, 0});
        VideoClip out = plugin->fn(clip, rng);
        if (!out.same_shape(clip)) throw InvalidArgument("plugin '" + spec.name + "' changed the clip shape");
        for (auto& v : out.pixels().storage()) v = std::clamp(v, 0.0f, 1.0f);
        return {std::move(out), id};
    }
    auto res = apply_batch<float>(spec, Var<float>::constant(clip_to_batch<float>(clip)), seed);
    return {batch_to_clip(res.clip.value()), std::move(res.transforms[0])};
}

template BatchAttack<float> apply_batch<float>(const DistortionSpec&, const Var<float>&, std::uint64_t);
template BatchAttack<double> apply_batch<double>(const DistortionSpec&, const Var<double>&, std::uint64_t);
template Var<float> compression_surrogate<float>(const Var<float>&, const std::vector<double>&,
                                                 const std::vector<double>&);
template Var<double> compression_surrogate<double>(const Var<double>&, const std::vector<double>&,
                                                   const std::vector<double>&);

}  // namespace dimwm
