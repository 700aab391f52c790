#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dimwm/metrics.hpp"
#include "dimwm/random.hpp"
#include "dimwm/trainer.hpp"

using namespace dimwm;

namespace {

SpatioTemporalMask random_stm(Rng& rng, std::size_t T, std::size_t H, std::size_t W, std::size_t C, double p) {
    SpatioTemporalMask m(T, H, W, C);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < C; ++c) m.at(t, y, x, c) = uniform01(rng) < p;
    return m;
}

Tensor<float> random_estimate(Rng& rng, const Shape& s) {
    Tensor<float> t(s);
    for (auto& v : t.storage()) v = static_cast<float>(uniform01(rng));
    return t;
}

double oracle_iou(const Tensor<float>& pred, const SpatioTemporalMask& truth) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > 0.5f, q = truth.cells()[i] != 0;
        inter += p && q;
        uni += p || q;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

long double oracle_psnr(const VideoClip& a, const VideoClip& b) {
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const long double d = static_cast<long double>(a.pixels()[i]) - b.pixels()[i];
        s += d * d;
    }
    s /= a.size();
    return s == 0 ? 99.0L : 10.0L * std::log10(1.0L / s);
}

double oracle_ssim(const VideoClip& a, const VideoClip& b) {
    const long H = a.height(), W = a.width();
    auto refl = [](long i, long n) {
        if (n == 1) return 0L;
        while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
        return i;
    };
    double w2[11][11], ws = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) ws += w2[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 2.25));
    double total = 0;
    for (std::size_t t = 0; t < a.frames(); ++t)
        for (std::size_t c = 0; c < 3; ++c) {
            double acc = 0;
            for (long y = 0; y < H; ++y)
                for (long x = 0; x < W; ++x) {
                    double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                    for (int i = 0; i < 11; ++i)
                        for (int j = 0; j < 11; ++j) {
                            const double w = w2[i][j] / ws;
                            const long yy = refl(y + i - 5, H), xx = refl(x + j - 5, W);
                            const double p = a.at(t, yy, xx, c), q = b.at(t, yy, xx, c);
                            mx += w * p, my += w * q, sxx += w * p * p, syy += w * q * q, sxy += w * p * q;
                        }
                    const double C1 = 1e-4, C2 = 9e-4;
                    acc += (2 * mx * my + C1) * (2 * (sxy - mx * my) + C2) /
                           ((mx * mx + my * my + C1) * (sxx - mx * mx + syy - my * my + C2));
                }
            total += acc / (H * W);
        }
    return total / (a.frames() * 3);
}

MappingConfig eval_cfg(std::size_t cp = 1) {
    MappingConfig c;
    c.frames = 2;
    c.height = c.width = 16;
    c.message_length = 8;
    c.mask_channels = cp;
    return c;
}

}  // namespace

TEST_CASE("bit accuracy against a direct count") {
    std::vector<float> pred(64);
    const auto truth = sample_message(64, 3);
    for (std::size_t i = 0; i < 64; ++i) pred[i] = truth[i];
    CHECK(bit_accuracy(pred, truth) == 1.0);
    pred[10] = 1.0f - pred[10];
    CHECK(bit_accuracy(pred, truth) == 0.984375);
    for (auto& p : pred) p = 1.0f - p;
    pred[10] = 1.0f - pred[10];
    CHECK(bit_accuracy(pred, truth) == 0.0);
    CHECK_THROWS_AS(bit_accuracy(std::vector<float>(3), truth), InvalidArgument);

    Rng rng = make_rng({4});
    for (int i = 0; i < 200; ++i) {
        const std::size_t L = uniform_int(rng, 1, 70);
        const auto m = sample_message(L, i);
        std::vector<float> p(L);
        std::size_t agree = 0;
        for (std::size_t k = 0; k < L; ++k) {
            p[k] = static_cast<float>(uniform01(rng));
            agree += (p[k] > 0.5f) == (m[k] == 1);
        }
        CHECK(bit_accuracy(p, m) == static_cast<double>(agree) / L);
        std::vector<std::size_t> perm(L);
        std::iota(perm.begin(), perm.end(), 0);
        shuffle(perm.begin(), perm.end(), rng);
        std::vector<float> pp(L);
        std::vector<std::uint8_t> mb(L);
        for (std::size_t k = 0; k < L; ++k) pp[k] = p[perm[k]], mb[k] = m[perm[k]];
        CHECK(bit_accuracy(pp, BinaryMessage(mb)) == bit_accuracy(p, m));
    }
}

TEST_CASE("iou against a cell-count oracle") {
    SpatioTemporalMask full(1, 4, 4, 1, 1), left(1, 4, 4);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 2; ++x) left.at(0, y, x) = 1;
    CHECK(iou(left, full) == 0.5);
    CHECK(iou(mask_to_tensor(left), full) == 0.5);
    CHECK(iou(full, full) == 1.0);
    CHECK(iou(SpatioTemporalMask(1, 4, 4), SpatioTemporalMask(1, 4, 4)) == 1.0);
    SpatioTemporalMask right(1, 4, 4);
    for (std::size_t y = 0; y < 4; ++y) right.at(0, y, 3) = 1;
    CHECK(iou(left, right) == 0.0);

    Rng rng = make_rng({5});
    for (int i = 0; i < 200; ++i) {
        const std::size_t T = uniform_int(rng, 1, 3), H = uniform_int(rng, 1, 6), W = uniform_int(rng, 1, 6),
                          C = uniform_int(rng, 1, 2);
        const auto truth = random_stm(rng, T, H, W, C, uniform01(rng));
        const auto pred = random_estimate(rng, {T, H, W, C});
        CHECK(iou(pred, truth) == oracle_iou(pred, truth));
        const auto bp = binarize(pred);
        CHECK(iou(bp, truth) == iou(truth, bp));
        CHECK((iou(bp, truth) == 1.0) == (bp == truth));
    }
    CHECK_THROWS_AS(iou(Tensor<float>({1, 4, 4, 1}), SpatioTemporalMask(2, 4, 4)), InvalidArgument);
}

TEST_CASE("miou over present codes") {
    const auto cb = build_codebook(2, 2);
    const auto truth = encode_multichannel(SpatioTemporalMask(2, 4, 4, 1, 1), cb);
    CHECK(miou(mask_to_tensor(truth), truth, cb) == 1.0);
    auto half = truth;
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            for (std::size_t c = 0; c < 2; ++c) half.at(1, y, x, c) = 0;
    CHECK(miou(mask_to_tensor(half), truth, cb) == 0.5);
    CHECK_FALSE(miou(mask_to_tensor(truth), SpatioTemporalMask(2, 4, 4, 2), cb).has_value());

    const auto cb1 = build_codebook(3, 2);
    Rng rng = make_rng({6});
    for (int i = 0; i < 200; ++i) {
        const auto seq = random_stm(rng, 3, 5, 5, 1, 0.5);
        const auto t = encode_multichannel(seq, cb1);
        const auto pred = random_estimate(rng, {3, 5, 5, 2});
        // oracle: cells whose binarised channel vector equals the code
        double sum = 0;
        std::size_t present = 0;
        for (std::size_t k = 0; k < cb1.size(); ++k) {
            std::size_t inter = 0, uni = 0, in_truth = 0;
            for (std::size_t tt = 0; tt < 3; ++tt)
                for (std::size_t y = 0; y < 5; ++y)
                    for (std::size_t x = 0; x < 5; ++x) {
                        bool p = true, q = true;
                        for (std::size_t c = 0; c < 2; ++c) {
                            p &= (pred.at(tt, y, x, c) > 0.5f) == (cb1.code(k)[c] == 1);
                            q &= t.at(tt, y, x, c) == cb1.code(k)[c];
                        }
                        inter += p && q, uni += p || q, in_truth += q;
                    }
            if (in_truth) sum += static_cast<double>(inter) / uni, ++present;
        }
        const auto got = miou(pred, t, cb1);
        REQUIRE(got.has_value() == (present > 0));
        if (present) CHECK(*got == doctest::Approx(sum / present).epsilon(1e-12));
    }
    const auto one = build_codebook(1, 1);
    const auto single = random_stm(rng, 1, 5, 5, 1, 0.5);
    const auto p1 = random_estimate(rng, {1, 5, 5, 1});
    CHECK(*miou(p1, single, one) == doctest::Approx(iou(p1, single)));
}

TEST_CASE("recover_order on exact and edited masks") {
    const auto cb = build_codebook(8, 4);
    const auto seq = SpatioTemporalMask::replicate(generate_mask(MaskKind::Rectangular, 8, 8, 1), 8);
    const auto enc = mask_to_tensor(encode_multichannel(seq, cb));
    std::vector<int> id(8);
    std::iota(id.begin(), id.end(), 0);
    CHECK(recover_order(enc, cb) == id);

    auto permuted = [&](const std::vector<int>& perm) {
        Tensor<float> out(enc.shape());
        const std::size_t f = 8 * 8 * 4;
        for (std::size_t t = 0; t < 8; ++t)
            for (std::size_t i = 0; i < f; ++i) out[t * f + i] = perm[t] < 0 ? 0.0f : enc[perm[t] * f + i];
        return out;
    };
    std::vector<int> swap01 = id;
    std::swap(swap01[0], swap01[1]);
    CHECK(recover_order(permuted(swap01), cb) == swap01);
    std::vector<int> blank = id;
    blank[5] = -1;
    CHECK(recover_order(permuted(blank), cb) == blank);
}

TEST_CASE("psnr and ssim") {
    const auto a = synthetic_clip(2, 12, 12, 1);
    CHECK(psnr(a, a) == kPsnrCap);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    VideoClip g(2, 12, 12, 0.5f), h(2, 12, 12, 0.5f + 1.0f / 255.0f);
    CHECK(psnr(g, h) == doctest::Approx(48.13).epsilon(1e-3));
    VideoClip neg = a;
    for (auto& v : neg.pixels().storage()) v = 1.0f - v;
    CHECK(ssim(a, neg) < 0.5);

    Rng rng = make_rng({7});
    for (int i = 0; i < 200; ++i) {
        VideoClip x(uniform_int(rng, 1, 2), uniform_int(rng, 1, 6), uniform_int(rng, 1, 6));
        VideoClip y = x;
        for (std::size_t k = 0; k < x.size(); ++k) {
            x.pixels()[k] = static_cast<float>(uniform01(rng));
            y.pixels()[k] = uniform01(rng) < 0.1 ? x.pixels()[k] : static_cast<float>(uniform01(rng));
        }
        const long double want = oracle_psnr(x, y);
        CHECK(std::abs(psnr(x, y) - static_cast<double>(want)) <= 1e-6 * static_cast<double>(want));
        if (i < 20) CHECK(ssim(x, y) == doctest::Approx(oracle_ssim(x, y)).epsilon(1e-9));
    }
    double prev = 1e9;
    for (float amp : {0.01f, 0.02f, 0.05f, 0.1f, 0.2f}) {
        VideoClip n = g;
        Rng r2 = make_rng({8});
        for (auto& v : n.pixels().storage()) v += amp * static_cast<float>(uniform(r2, -1, 1));
        const double p = psnr(g, n);
        CHECK(p < prev);
        prev = p;
    }
    CHECK_THROWS_AS(psnr(a, VideoClip(1, 12, 12)), InvalidArgument);
}

TEST_CASE("ratio bins partition the unit interval") {
    CHECK(ratio_bin(0.0) == 0);
    CHECK(ratio_bin(0.0999) == 0);
    CHECK(ratio_bin(0.1) == 1);
    CHECK(ratio_bin(0.95) == 9);
    CHECK(ratio_bin(1.0) == 9);
    CHECK_THROWS_AS(ratio_bin(1.5), InvalidArgument);
}

TEST_CASE("evaluate aggregates and is deterministic") {
    const auto b = ModelBundle<float>::create(eval_cfg(), 2);
    const auto data = synthetic_dataset(2, 2, 16, 16, 3);
    EvalOptions opt;
    opt.seed = 4;
    const auto r = evaluate(b, data, opt);
    const auto r2 = evaluate(b, data, opt);
    CHECK(report_to_text(r) == report_to_text(r2));
    CHECK(distortions_csv(r) == distortions_csv(r2));
    CHECK(r.clip_count == 2);
    CHECK(r.categories.size() == 4);
    for (const auto& c : r.categories) {
        double bits = 0, ious = 0;
        std::size_t n = 0;
        for (const auto& d : r.distortions)
            if (d.category == c.category && d.available) bits += d.bit_accuracy, ious += d.iou, ++n;
        CHECK(c.available == (n > 0));
        if (n) {
            CHECK(c.bit_accuracy == doctest::Approx(bits / n).epsilon(1e-12));
            CHECK(c.iou == doctest::Approx(ious / n).epsilon(1e-12));
        }
    }
    for (const auto& [name, bins] : r.bins) {
        std::size_t total = 0;
        for (const auto& bin : bins) total += bin.count;
        CHECK(total == 2);
    }
    const std::string cats = categories_csv(r);
    for (auto n : {"valuemetric", "geometric", "frame-level", "compression"}) CHECK(cats.find(n) != std::string::npos);
    if (!codec_available()) CHECK(report_to_text(r).find("unavailable") != std::string::npos);
    CHECK(report_to_text(r).find("43.17") != std::string::npos);

    opt.presets = {"hflip"};
    const auto one = evaluate(b, data, opt);
    CHECK(one.distortions.size() == 1);
    opt.truth_mask = true;
    CHECK(evaluate(b, data, opt).truth_mask);
    opt.presets = {"nope"};
    CHECK_THROWS_AS(evaluate(b, data, opt), InvalidArgument);
}
