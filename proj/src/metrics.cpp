#include "dimwm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "dimwm/error.hpp"
#include "dimwm/trainer.hpp"

namespace dimwm {

double bit_accuracy(const std::vector<float>& pred, const BinaryMessage& truth) {
    if (pred.size() != truth.size())
        throw InvalidArgument("bit_accuracy: " + std::to_string(pred.size()) + " predictions for " +
                              std::to_string(truth.size()) + " bits");
    if (pred.empty()) throw InvalidArgument("bit_accuracy: empty message");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += (pred[i] > 0.5f ? 1 : 0) == truth[i];
    return static_cast<double>(ok) / static_cast<double>(pred.size());
}

namespace {

Shape mask_shape(const SpatioTemporalMask& m) { return {m.frames(), m.height(), m.width(), m.channels()}; }

double ratio_or_one(std::size_t inter, std::size_t uni) {
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

double iou(const Tensor<float>& pred, const SpatioTemporalMask& truth, float threshold) {
    if (pred.shape() != mask_shape(truth))
        throw InvalidArgument("iou: prediction " + shape_string(pred.shape()) + " vs truth " +
                              shape_string(mask_shape(truth)));
    std::size_t inter = 0, uni = 0;
    const auto& cells = truth.cells();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const bool p = pred[i] > threshold, t = cells[i] != 0;
        inter += p && t;
        uni += p || t;
    }
    return ratio_or_one(inter, uni);
}

double iou(const SpatioTemporalMask& a, const SpatioTemporalMask& b) {
    if (mask_shape(a) != mask_shape(b)) throw InvalidArgument("iou: mask shapes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.cells().size(); ++i) {
        const bool p = a.cells()[i] != 0, t = b.cells()[i] != 0;
        inter += p && t;
        uni += p || t;
    }
    return ratio_or_one(inter, uni);
}

std::optional<double> miou(const Tensor<float>& pred, const SpatioTemporalMask& truth, const FrameCodebook& codebook) {
    if (pred.shape() != mask_shape(truth)) throw InvalidArgument("miou: prediction and truth shapes differ");
    const std::size_t C = truth.channels();
    if (codebook.channels() != C) throw InvalidArgument("miou: codebook width differs from the mask channels");
    const std::size_t cells = truth.cells().size() / C;
    // Codeword index per cell, -1 for cells carrying no listed code.
    auto code_of = [&](auto bit) {
        std::vector<int> out(cells, -1);
        std::vector<std::uint8_t> word(C);
        for (std::size_t i = 0; i < cells; ++i) {
            for (std::size_t c = 0; c < C; ++c) word[c] = bit(i * C + c);
            for (std::size_t k = 0; k < codebook.size(); ++k)
                if (codebook.code(k) == word) {
                    out[i] = static_cast<int>(k);
                    break;
                }
        }
        return out;
    };
    const auto p = code_of([&](std::size_t j) -> std::uint8_t { return pred[j] > 0.5f ? 1 : 0; });
    const auto t = code_of([&](std::size_t j) -> std::uint8_t { return truth.cells()[j] ? 1 : 0; });
    double sum = 0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        std::size_t inter = 0, uni = 0, in_truth = 0;
        for (std::size_t i = 0; i < cells; ++i) {
            const bool a = p[i] == static_cast<int>(k), b = t[i] == static_cast<int>(k);
            inter += a && b;
            uni += a || b;
            in_truth += b;
        }
        if (in_truth == 0) continue;
        sum += ratio_or_one(inter, uni);
        ++present;
    }
    if (present == 0) return std::nullopt;
    return sum / static_cast<double>(present);
}

std::vector<int> recover_order(const Tensor<float>& pred, const FrameCodebook& codebook) {
    if (pred.rank() != 4) throw InvalidArgument("recover_order expects a (T, H, W, C) estimate");
    const std::size_t T = pred.dim(0), HW = pred.dim(1) * pred.dim(2), C = pred.dim(3);
    if (codebook.channels() != C) throw InvalidArgument("recover_order: codebook width differs from the mask channels");
    std::vector<int> order(T, -1);
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> sum(C, 0.0);
        std::size_t region = 0;
        for (std::size_t i = 0; i < HW; ++i) {
            const float* cell = pred.data() + (t * HW + i) * C;
            if (*std::max_element(cell, cell + C) <= 0.5f) continue;
            ++region;
            for (std::size_t c = 0; c < C; ++c) sum[c] += cell[c];
        }
        if (region == 0) continue;
        std::size_t best = 0, best_dist = C + 1;
        for (std::size_t k = 0; k < codebook.size(); ++k) {
            std::size_t dist = 0;
            for (std::size_t c = 0; c < C; ++c) dist += (sum[c] / static_cast<double>(region) > 0.5) != (codebook.code(k)[c] != 0);
            if (dist < best_dist) {
                best_dist = dist;
                best = k;
            }
        }
        order[t] = static_cast<int>(best);
    }
    return order;
}

double psnr(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size() || a.empty()) throw InvalidArgument("psnr: operands differ in size");
    double se = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.size());
    if (mse == 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const VideoClip& a, const VideoClip& b) {
    if (!a.same_shape(b)) throw InvalidArgument("psnr: clip shapes differ");
    return psnr(a.pixels().to_vector(), b.pixels().to_vector());
}

namespace {

std::size_t reflect_index(long i, long n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return static_cast<std::size_t>(i);
}

// Separable Gaussian filter with reflect padding; the output keeps the size.
std::vector<double> gaussian_filter(const std::vector<double>& img, std::size_t H, std::size_t W,
                                    const std::vector<double>& g) {
    const long r = static_cast<long>(g.size() / 2);
    std::vector<double> tmp(H * W), out(H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            double s = 0;
            for (long k = -r; k <= r; ++k) s += g[k + r] * img[y * W + reflect_index(static_cast<long>(x) + k, static_cast<long>(W))];
            tmp[y * W + x] = s;
        }
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            double s = 0;
            for (long k = -r; k <= r; ++k) s += g[k + r] * tmp[reflect_index(static_cast<long>(y) + k, static_cast<long>(H)) * W + x];
            out[y * W + x] = s;
        }
    return out;
}

}  // namespace

double ssim(const VideoClip& a, const VideoClip& b) {
    if (!a.same_shape(b)) throw InvalidArgument("ssim: clip shapes differ");
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    std::vector<double> g(11);
    double gs = 0;
    for (int i = 0; i < 11; ++i) gs += g[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (1.5 * 1.5));
    for (auto& v : g) v /= gs;
    const std::size_t H = a.height(), W = a.width();
    double total = 0;
    std::vector<double> x(H * W), y(H * W), xx(H * W), yy(H * W), xy(H * W);
    for (std::size_t t = 0; t < a.frames(); ++t)
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    const std::size_t k = i * W + j;
                    x[k] = a.at(t, i, j, c);
                    y[k] = b.at(t, i, j, c);
                    xx[k] = x[k] * x[k];
                    yy[k] = y[k] * y[k];
                    xy[k] = x[k] * y[k];
                }
            const auto mx = gaussian_filter(x, H, W, g), my = gaussian_filter(y, H, W, g);
            const auto sxx = gaussian_filter(xx, H, W, g), syy = gaussian_filter(yy, H, W, g),
                       sxy = gaussian_filter(xy, H, W, g);
            double acc = 0;
            for (std::size_t k = 0; k < H * W; ++k) {
                const double vx = sxx[k] - mx[k] * mx[k], vy = syy[k] - my[k] * my[k], cxy = sxy[k] - mx[k] * my[k];
                acc += ((2 * mx[k] * my[k] + C1) * (2 * cxy + C2)) /
                       ((mx[k] * mx[k] + my[k] * my[k] + C1) * (vx + vy + C2));
            }
            total += acc / static_cast<double>(H * W);
        }
    return total / static_cast<double>(a.frames() * 3);
}

std::size_t ratio_bin(double ratio) {
    if (!(ratio >= 0 && ratio <= 1)) throw InvalidArgument("mask ratio must lie in [0, 1]");
    return std::min<std::size_t>(9, static_cast<std::size_t>(std::floor(ratio * 10)));
}

// ---------------------------------------------------------------------------

namespace {

struct Accumulator {
    double bits = 0, iou = 0, miou = 0;
    std::size_t n_bits = 0, n_iou = 0, n_miou = 0, excluded = 0;
    std::array<BinResult, 10> bins{};
};

DistortionResult finish(const std::string& name, const std::string& category, const Accumulator& acc) {
    DistortionResult r;
    r.name = name;
    r.category = category;
    r.clips = acc.n_bits;
    r.excluded = acc.excluded;
    r.bit_accuracy = acc.n_bits ? acc.bits / static_cast<double>(acc.n_bits) : 0.0;
    r.iou = acc.n_iou ? acc.iou / static_cast<double>(acc.n_iou) : 0.0;
    if (acc.n_miou) r.miou = acc.miou / static_cast<double>(acc.n_miou);
    return r;
}

std::array<BinResult, 10> finish_bins(std::array<BinResult, 10> bins) {
    for (auto& b : bins) {
        if (b.count) b.iou /= static_cast<double>(b.count);
        if (b.decoded) b.bit_accuracy /= static_cast<double>(b.decoded);
    }
    return bins;
}

}  // namespace

EvalReport evaluate(const ModelBundle<float>& bundle, const std::vector<VideoClip>& dataset, const EvalOptions& options) {
    const MappingConfig& cfg = bundle.mapping;
    if (dataset.empty()) throw InvalidArgument("evaluation dataset is empty");
    if (options.mask_kinds.empty()) throw InvalidArgument("at least one mask kind is required");
    std::vector<DistortionSpec> specs;
    for (const auto& s : presets(Phase::Evaluation))
        if (options.presets.empty() ||
            std::find(options.presets.begin(), options.presets.end(), s.name) != options.presets.end())
            specs.push_back(s);
    for (const auto& name : options.presets) {
        const bool known = std::any_of(specs.begin(), specs.end(), [&](const auto& s) { return s.name == name; });
        if (!known) specs.push_back(preset(Phase::Evaluation, name));
    }

    const bool multi = cfg.mask_channels > 1;
    std::optional<FrameCodebook> codebook;
    if (multi) codebook = build_codebook(cfg.frames, cfg.mask_channels);

    EvalReport report;
    report.mapping = cfg;
    report.clip_count = dataset.size();
    report.seed = options.seed;
    report.truth_mask = options.truth_mask;

    Accumulator clean;
    std::vector<Accumulator> accs(specs.size());
    std::vector<std::string> unavailable(specs.size());
    double psnr_sum = 0, ssim_sum = 0;

    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const VideoClip& host = dataset[i];
        auto rng = make_rng({options.seed, 0x6b696e64, i});
        const MaskKind kind = options.mask_kinds[uniform_int(rng, 0, static_cast<long>(options.mask_kinds.size()) - 1)];
        const SamplePayload payload = draw_payload(cfg, kind, derive_seed({options.seed, 0x70617931, i}));
        const VideoClip wm = embed(bundle, host, payload.message, payload.mask);
        const VideoClip fused = fuse(wm, host, payload.truth);
        psnr_sum += psnr(fused, host);
        ssim_sum += ssim(fused, host);
        const std::size_t bin = ratio_bin(payload.truth.union_channels().volume_ratio());

        auto score = [&](Accumulator& acc, const VideoClip& attacked, const SpatioTemporalMask& truth) {
            const Tensor<float> pred = predict_mask(bundle, attacked);
            const SpatioTemporalMask region =
                options.truth_mask ? truth.union_channels() : binarize(pred).union_channels();
            const double io = multi ? iou(binarize(pred).union_channels(), truth.union_channels()) : iou(pred, truth);
            acc.iou += io;
            ++acc.n_iou;
            if (multi)
                if (auto m = miou(pred, truth, *codebook)) {
                    acc.miou += *m;
                    ++acc.n_miou;
                }
            acc.bins[bin].iou += io;
            ++acc.bins[bin].count;
            if (region.count() == 0) {
                ++acc.excluded;
                return;
            }
            const double ba = bit_accuracy(decode(bundle, apply_mask(attacked, region)), payload.message);
            acc.bits += ba;
            ++acc.n_bits;
            acc.bins[bin].bit_accuracy += ba;
            ++acc.bins[bin].decoded;
        };

        score(clean, fused, payload.truth);
        for (std::size_t j = 0; j < specs.size(); ++j) {
            if (!unavailable[j].empty()) continue;
            try {
                const AttackOutcome out = apply(specs[j], fused, derive_seed({options.seed, 0x61747461, i, j}));
                score(accs[j], out.clip, out.mask_transform.apply(payload.truth));
            } catch (const EnvironmentError& e) {
                unavailable[j] = e.what();
            }
        }
    }

    const double n = static_cast<double>(dataset.size());
    report.psnr = psnr_sum / n;
    report.ssim = ssim_sum / n;
    report.clean = finish("clean", "clean", clean);
    report.bins["clean"] = finish_bins(clean.bins);
    for (std::size_t j = 0; j < specs.size(); ++j) {
        DistortionResult r = finish(specs[j].name, category_name(specs[j].category), accs[j]);
        if (!unavailable[j].empty()) {
            r = DistortionResult{};
            r.name = specs[j].name;
            r.category = category_name(specs[j].category);
            r.available = false;
            r.note = unavailable[j];
        } else {
            report.bins[r.name] = finish_bins(accs[j].bins);
        }
        report.distortions.push_back(std::move(r));
    }
    for (Category c : {Category::Valuemetric, Category::Geometric, Category::FrameLevel, Category::Compression}) {
        CategorySummary s;
        s.category = category_name(c);
        double bits = 0, io = 0, mi = 0;
        std::size_t count = 0, mcount = 0;
        for (const auto& d : report.distortions) {
            if (d.category != s.category) continue;
            s.members.push_back(d.name);
            if (!d.available) continue;
            bits += d.bit_accuracy;
            io += d.iou;
            ++count;
            if (d.miou) {
                mi += *d.miou;
                ++mcount;
            }
        }
        if (s.members.empty()) continue;
        s.available = count > 0;
        if (count) {
            s.bit_accuracy = bits / static_cast<double>(count);
            s.iou = io / static_cast<double>(count);
        }
        if (mcount) s.miou = mi / static_cast<double>(mcount);
        report.categories.push_back(std::move(s));
    }
    report.footnotes = {
        "desk-scale run: " + std::to_string(cfg.frames) + "x" + std::to_string(cfg.height) + "x" +
            std::to_string(cfg.width) + " clips, L=" + std::to_string(cfg.message_length) +
            "; full-scale reference uses 8x256x256 clips and batch 8",
        "reference (full scale, M33, 64-bit): PSNR 43.17 dB, clean bit accuracy 100%; not expected at desk scale",
        std::string("messages decoded from ") + (options.truth_mask ? "ground-truth" : "predicted") + " mask regions",
    };
    return report;
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

}  // namespace

std::string report_to_text(const EvalReport& r) {
    std::ostringstream os;
    os << "# evaluation report\n";
    os << "regime = " << regime_name(r.mapping.regime()) << "\n";
    os << "shape = T" << r.mapping.frames << " H" << r.mapping.height << " W" << r.mapping.width << " L"
       << r.mapping.message_length << " C_p" << r.mapping.mask_channels << "\n";
    os << "clips = " << r.clip_count << "\nseed = " << r.seed << "\n";
    os << "decode_region = " << (r.truth_mask ? "ground-truth" : "predicted") << "\n";
    os << "psnr_db = " << fmt(r.psnr) << "\nssim = " << fmt(r.ssim) << "\n\n";
    os << "[distortions]\n";
    os << std::left << std::setw(22) << "name" << std::setw(13) << "category" << std::setw(14) << "bit_accuracy"
       << std::setw(12) << "iou" << std::setw(12) << "miou"
       << "clips\n";
    auto row = [&](const DistortionResult& d) {
        os << std::left << std::setw(22) << d.name << std::setw(13) << d.category;
        if (!d.available) {
            os << "unavailable (" << d.note << ")\n";
            return;
        }
        os << std::setw(14) << fmt(d.bit_accuracy) << std::setw(12) << fmt(d.iou) << std::setw(12)
           << (d.miou ? fmt(*d.miou) : "-") << d.clips;
        if (d.excluded) os << " (" << d.excluded << " excluded: empty predicted region)";
        os << "\n";
    };
    row(r.clean);
    for (const auto& d : r.distortions) row(d);
    os << "\n[categories]\n";
    for (const auto& c : r.categories) {
        os << std::left << std::setw(13) << c.category;
        if (!c.available)
            os << "unavailable\n";
        else
            os << "bit_accuracy = " << fmt(c.bit_accuracy) << "  iou = " << fmt(c.iou)
               << (c.miou ? "  miou = " + fmt(*c.miou) : std::string()) << "\n";
    }
    os << "\n[mask_ratio_bins]\n";
    for (const auto& [name, bins] : r.bins) {
        os << name << ":";
        for (std::size_t b = 0; b < 10; ++b)
            if (bins[b].decoded) os << " " << b * 10 << "-" << (b + 1) * 10 << "%=" << fmt(bins[b].bit_accuracy);
        os << "\n";
    }
    os << "\n[notes]\n";
    for (const auto& f : r.footnotes) os << "- " << f << "\n";
    return os.str();
}

std::string distortions_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "distortion,category,available,clips,bit_accuracy,iou,miou\n";
    auto row = [&](const DistortionResult& d) {
        os << d.name << "," << d.category << "," << (d.available ? 1 : 0) << "," << d.clips << ","
           << (d.available ? fmt(d.bit_accuracy) : "") << "," << (d.available ? fmt(d.iou) : "") << "," << opt(d.miou)
           << "\n";
    };
    row(r.clean);
    for (const auto& d : r.distortions) row(d);
    return os.str();
}

std::string categories_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "category,available,bit_accuracy,iou,miou\n";
    for (const auto& c : r.categories)
        os << c.category << "," << (c.available ? 1 : 0) << "," << (c.available ? fmt(c.bit_accuracy) : "") << ","
           << (c.available ? fmt(c.iou) : "") << "," << opt(c.miou) << "\n";
    return os.str();
}

std::string bins_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "distortion,bin,lo,hi,count,decoded,bit_accuracy,iou\n";
    for (const auto& [name, bins] : r.bins)
        for (std::size_t b = 0; b < 10; ++b) {
            const auto& x = bins[b];
            os << name << "," << b << "," << fmt(b / 10.0) << "," << fmt((b + 1) / 10.0) << "," << x.count << "," << x.decoded << ","
               << (x.decoded ? fmt(x.bit_accuracy) : "") << "," << (x.count ? fmt(x.iou) : "") << "\n";
        }
    return os.str();
}

}  // namespace dimwm
