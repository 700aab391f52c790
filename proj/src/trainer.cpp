#include "dimwm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dimwm/error.hpp"
#include "dimwm/io.hpp"

namespace dimwm {

using nn::Var;
using json = nlohmann::json;

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kCurriculum = 0x63757272;
constexpr std::uint64_t kPayload = 0x7061796c;
constexpr std::uint64_t kPool = 0x706f6f6c;
constexpr std::uint64_t kAttack = 0x61747461;

}  // namespace

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.steps = 200000;
    c.warmup_steps = 2000;
    c.batch_size = 8;
    c.beta_dec_decay_steps = 10000;
    c.jnd_start_step = 10000;
    c.s1 = 1000;
    c.s2 = 2000;
    return c;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(lr >= 0) || !std::isfinite(lr)) throw InvalidArgument("lr must be a finite non-negative number");
    for (double w : {beta_enc, beta_dec_init, beta_dec_final, alpha, mu, weight_decay})
        if (!(w >= 0) || !std::isfinite(w)) throw InvalidArgument("loss weights, mu and weight decay must be >= 0");
    if (!(s1 < s2)) throw InvalidArgument("curriculum thresholds need s1 < s2");
    if (steps > 0 && !(s2 < steps)) throw InvalidArgument("curriculum thresholds need s2 < steps");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
        throw InvalidArgument("AdamW betas must lie in [0, 1) and eps must be positive");
    for (const auto& [name, params] : preset_overrides) {
        const DistortionSpec base = preset(Phase::Training, name);
        for (const auto& [key, range] : params) {
            if (!base.params.count(key))
                throw InvalidArgument("distortion '" + name + "' has no parameter '" + key + "'");
            if (range.lo > range.hi) throw InvalidArgument("empty range for " + name + "." + key);
        }
    }
}

std::string train_phase_name(TrainPhase p) {
    switch (p) {
        case TrainPhase::FullMask: return "full-mask";
        case TrainPhase::AllMasks: return "all-masks";
        case TrainPhase::Distorted: return "distorted";
    }
    return "?";
}

TrainPhase parse_train_phase(const std::string& name) {
    for (TrainPhase p : {TrainPhase::FullMask, TrainPhase::AllMasks, TrainPhase::Distorted})
        if (train_phase_name(p) == name) return p;
    throw InvalidArgument("unknown training phase '" + name + "'");
}

double beta_dec_at(const TrainConfig& cfg, std::size_t step) {
    const double f = cfg.beta_dec_decay_steps == 0
                         ? 1.0
                         : std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.beta_dec_decay_steps));
    return cfg.beta_dec_init + (cfg.beta_dec_final - cfg.beta_dec_init) * f;
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step) {
    if (step < cfg.warmup_steps) return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    if (cfg.steps <= cfg.warmup_steps) return cfg.lr;
    const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) /
                                              static_cast<double>(cfg.steps - cfg.warmup_steps));
    return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

CurriculumDraw curriculum_mask(const TrainConfig& cfg, std::size_t step, std::uint64_t seed) {
    CurriculumDraw d;
    if (step < cfg.s1 || !cfg.mask_curriculum) {
        d.kind = MaskKind::Full;
    } else {
        auto rng = make_rng({seed, kCurriculum});
        d.kind = static_cast<MaskKind>(uniform_int(rng, 0, 3));
    }
    d.distortions = cfg.distortions && step >= cfg.s2;
    d.phase = step < cfg.s1 ? TrainPhase::FullMask : step < cfg.s2 ? TrainPhase::AllMasks : TrainPhase::Distorted;
    return d;
}

SamplePayload draw_payload(const MappingConfig& cfg, MaskKind kind, std::uint64_t seed) {
    SamplePayload p;
    p.message = sample_message(cfg.message_length, derive_seed({seed, 1}));
    const SpatialMask initial = generate_mask(kind, cfg.height, cfg.width, derive_seed({seed, 2}));
    const Regime r = cfg.regime();
    if (r == Regime::M23) {
        p.mask = initial;
        p.truth = SpatioTemporalMask::replicate(initial, cfg.frames);
        return p;
    }
    SpatioTemporalMask seq = kind == MaskKind::Full
                                 ? SpatioTemporalMask::replicate(initial, cfg.frames)
                                 : generate_mask_sequence(initial, cfg.frames, std::max<std::size_t>(1, cfg.height / 16),
                                                          derive_seed({seed, 3}));
    p.truth = cfg.mask_channels > 1 ? encode_multichannel(seq, build_codebook(cfg.frames, cfg.mask_channels))
                                    : std::move(seq);
    if (cfg.takes_mask_input()) p.mask = p.truth;
    return p;
}

TrainingBatch make_batch(const MappingConfig& cfg, const TrainConfig& tcfg, const std::vector<VideoClip>& data,
                         std::size_t step) {
    if (data.empty()) throw InvalidArgument("training data is empty");
    TrainingBatch b;
    const std::size_t n = tcfg.batch_size;
    b.draw = curriculum_mask(tcfg, step, derive_seed({tcfg.seed, step}));
    std::vector<const VideoClip*> clips;
    b.bits = Tensor<float>({n, cfg.message_length});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = (step * n + i) % data.size();
        const VideoClip& clip = data[idx];
        if (clip.frames() != cfg.frames || clip.height() != cfg.height || clip.width() != cfg.width)
            throw InvalidArgument("training clip " + std::to_string(idx) + " does not match the mapping config");
        clips.push_back(&clip);
        b.clip_index.push_back(idx);
        const MaskKind kind = curriculum_mask(tcfg, step, derive_seed({tcfg.seed, step, i})).kind;
        const std::uint64_t key = tcfg.fixed_payloads
                                      ? derive_seed({tcfg.seed, kPayload, idx, static_cast<std::uint64_t>(kind)})
                                      : derive_seed({tcfg.seed, kPayload, step, i});
        b.payloads.push_back(draw_payload(cfg, kind, key));
        for (std::size_t j = 0; j < cfg.message_length; ++j) b.bits.at(i, j) = b.payloads.back().message[j];
    }
    b.host = clips_to_batch<float>(clips);
    return b;
}

namespace {

DistortionSpec with_overrides(DistortionSpec spec, const TrainConfig& tcfg) {
    auto it = tcfg.preset_overrides.find(spec.name);
    if (it != tcfg.preset_overrides.end())
        for (const auto& [key, range] : it->second) spec.params[key] = range;
    return spec;
}

double norm2(const Tensor<float>& t) {
    double s = 0;
    for (float v : t.storage()) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

}  // namespace

LossReport train_step(ModelBundle<float>& bundle, AdamState& opt, const TrainConfig& tcfg, const TrainingBatch& batch,
                      std::size_t step) {
    const MappingConfig& cfg = bundle.mapping;
    const std::size_t n = batch.payloads.size();
    if (n == 0 || batch.host.dim(0) != n) throw InvalidArgument("malformed training batch");

    bundle.jnd_scale = static_cast<float>(tcfg.mu);
    bundle.jnd_active = step >= tcfg.jnd_start_step;

    std::optional<Tensor<float>> mask_input;
    if (cfg.takes_mask_input()) {
        std::vector<SpatioTemporalMask> volumes;
        for (const auto& p : batch.payloads) volumes.push_back(mask_input_volume(cfg, p.mask));
        std::vector<const SpatioTemporalMask*> ptrs;
        for (const auto& v : volumes) ptrs.push_back(&v);
        mask_input = masks_to_batch<float>(ptrs);
    }
    auto wm = embed_batch<float>(bundle, batch.host, batch.bits, mask_input);

    std::vector<SpatioTemporalMask> fusion;
    for (const auto& p : batch.payloads) fusion.push_back(p.truth.union_channels());
    std::vector<const SpatioTemporalMask*> fptr;
    for (const auto& f : fusion) fptr.push_back(&f);
    auto fused = fuse_batch<float>(wm, batch.host, masks_to_batch<float>(fptr));

    LossReport r;
    Var<float> attacked = fused;
    std::vector<SpatioTemporalMask> truth;
    for (const auto& p : batch.payloads) truth.push_back(p.truth);
    if (batch.draw.distortions) {
        const DistortionSpec spec = with_overrides(
            sample_pool(Phase::Training, derive_seed({tcfg.seed, kPool, step}), tcfg.categories), tcfg);
        auto res = apply_batch<float>(spec, fused, derive_seed({tcfg.seed, kAttack, step}));
        attacked = res.clip;
        for (std::size_t i = 0; i < n; ++i)
            if (!res.transforms[i].is_identity()) truth[i] = res.transforms[i].apply(truth[i]);
        r.attack = spec.name;
    }

    std::vector<SpatioTemporalMask> region;
    for (const auto& t : truth) region.push_back(t.union_channels());
    std::vector<const SpatioTemporalMask*> tptr, rptr;
    for (std::size_t i = 0; i < n; ++i) {
        tptr.push_back(&truth[i]);
        rptr.push_back(&region[i]);
    }
    const Tensor<float> target = masks_to_batch<float>(tptr);
    const Tensor<float> keep = broadcast_mask(masks_to_batch<float>(rptr), 3);
    auto masked = nn::mul_const(attacked, keep);

    auto decoded = decode_batch<float>(bundle, masked);
    auto predicted = predict_mask_batch<float>(bundle, attacked);

    const float beta_dec = static_cast<float>(beta_dec_at(tcfg, step));
    auto l_enc = nn::mse(wm, batch.host);
    auto l_msg = nn::mse(decoded, batch.bits);
    auto l_mask = nn::mse(predicted, target);
    auto l_dec = nn::add_scaled(l_msg, 1.0f, l_mask, static_cast<float>(tcfg.alpha));
    auto total = nn::add_scaled(l_enc, static_cast<float>(tcfg.beta_enc), l_dec, beta_dec);

    r.step = step;
    r.l_enc = l_enc.value()[0];
    r.l_msg = l_msg.value()[0];
    r.l_mask = l_mask.value()[0];
    r.l_dec = l_dec.value()[0];
    r.l_total = total.value()[0];
    r.beta_enc = static_cast<float>(tcfg.beta_enc);
    r.beta_dec = beta_dec;
    r.alpha = static_cast<float>(tcfg.alpha);
    r.lr = learning_rate_at(tcfg, step);
    r.phase = batch.draw.phase;
    {
        std::vector<std::string> kinds;
        for (std::size_t i = 0; i < n; ++i)
            kinds.emplace_back(mask_kind_name(curriculum_mask(tcfg, step, derive_seed({tcfg.seed, step, i})).kind));
        for (std::size_t i = 0; i < kinds.size(); ++i) r.mask_kind += (i ? "," : "") + kinds[i];
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < batch.bits.size(); ++i)
        correct += (decoded.value()[i] > 0.5f) == (batch.bits[i] > 0.5f);
    r.bit_accuracy = static_cast<double>(correct) / static_cast<double>(batch.bits.size());

    for (double v : {r.l_enc, r.l_msg, r.l_mask, r.l_total})
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "non-finite loss at step " << step << ": l_enc=" << r.l_enc << " l_msg=" << r.l_msg
               << " l_mask=" << r.l_mask << " l_total=" << r.l_total << " attack=" << (r.attack.empty() ? "none" : r.attack);
            throw NumericalError(os.str());
        }

    nn::backward(total);

    auto params = bundle.parameters();
    if (opt.m.empty()) {
        for (const auto& p : params) {
            opt.m.emplace_back(p.var.shape());
            opt.v.emplace_back(p.var.shape());
        }
    }
    if (opt.m.size() != params.size()) throw InternalError("optimizer state does not match the parameter list");
    opt.t += 1;
    const double lr = r.lr;
    const double b1 = tcfg.adam_beta1, b2 = tcfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto var = params[k].var;
        const Tensor<float>& g = var.grad();
        Tensor<float>& w = var.mutable_value();
        auto& m = opt.m[k];
        auto& v = opt.v[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            if (!std::isfinite(gi))
                throw NumericalError("non-finite gradient in " + params[k].name + " at step " + std::to_string(step));
            m[i] = static_cast<float>(b1 * m[i] + (1 - b1) * gi);
            v[i] = static_cast<float>(b2 * v[i] + (1 - b2) * gi * gi);
            const double mhat = m[i] / c1, vhat = v[i] / c2;
            double wi = w[i];
            wi -= lr * tcfg.weight_decay * wi;
            wi -= lr * mhat / (std::sqrt(vhat) + tcfg.adam_eps);
            w[i] = static_cast<float>(wi);
        }
        var.zero_grad();
    }
    return r;
}

Checkpoint initial_checkpoint(const MappingConfig& cfg, const TrainConfig& tcfg) {
    cfg.validate();
    tcfg.validate();
    Checkpoint ck;
    ck.bundle = ModelBundle<float>::create(cfg, tcfg.seed);
    ck.bundle.jnd_scale = static_cast<float>(tcfg.mu);
    for (const auto& p : ck.bundle.parameters()) {
        ck.optimizer.m.emplace_back(p.var.shape());
        ck.optimizer.v.emplace_back(p.var.shape());
    }
    ck.train = tcfg;
    return ck;
}

Checkpoint fit(const MappingConfig& cfg, const TrainConfig& tcfg, const std::vector<VideoClip>& data,
               const FitOptions& options, std::optional<Checkpoint> resume) {
    cfg.validate();
    tcfg.validate();
    if (data.empty()) throw InvalidArgument("training data is empty");
    Checkpoint ck;
    if (resume) {
        if (!(resume->bundle.mapping == cfg)) throw InvalidArgument("checkpoint mapping differs from the run config");
        ck = std::move(*resume);
        if (ck.step > tcfg.steps) throw InvalidArgument("checkpoint step lies beyond the configured step count");
    } else {
        ck = initial_checkpoint(cfg, tcfg);
    }
    ck.train = tcfg;

    std::ofstream file_log;
    if (options.out_dir) {
        fs::create_directories(*options.out_dir);
        file_log.open(*options.out_dir / "train.log", ck.step > 0 ? std::ios::app : std::ios::trunc);
        if (!file_log) throw EnvironmentError("cannot open " + (*options.out_dir / "train.log").string());
    }
    auto write_checkpoint = [&](const fs::path& path) {
        try {
            save_checkpoint(path, ck);
        } catch (const std::exception& e) {
            throw EnvironmentError("checkpoint write failed: " + std::string(e.what()));
        }
    };

    for (std::size_t step = ck.step; step < tcfg.steps; ++step) {
        const TrainingBatch batch = make_batch(cfg, tcfg, data, step);
        LossReport r;
        try {
            r = train_step(ck.bundle, ck.optimizer, tcfg, batch, step);
        } catch (const NumericalError& e) {
            if (options.out_dir) {
                std::ofstream diag(*options.out_dir / "diagnostics.json");
                json d;
                d["step"] = step;
                d["error"] = e.what();
                for (const auto& p : ck.bundle.parameters()) d["parameter_norms"][p.name] = norm2(p.var.value());
                diag << d.dump(2) << "\n";
            }
            throw;
        }
        ck.step = step + 1;
        ck.phase = r.phase;
        const std::string line = loss_record_json(r);
        if (file_log) file_log << line << "\n" << std::flush;
        if (options.log) *options.log << line << "\n";
        if (options.on_step) options.on_step(r);
        if (options.out_dir && options.checkpoint_every && ck.step % options.checkpoint_every == 0)
            write_checkpoint(*options.out_dir / ("step_" + std::to_string(ck.step) + ".dimc"));
    }
    ck.bundle.jnd_active = tcfg.steps > tcfg.jnd_start_step;
    if (options.out_dir) write_checkpoint(*options.out_dir / "final.dimc");
    return ck;
}

std::string loss_record_json(const LossReport& r) {
    json j;
    j["step"] = r.step;
    j["phase"] = train_phase_name(r.phase);
    j["l_enc"] = r.l_enc;
    j["l_msg"] = r.l_msg;
    j["l_mask"] = r.l_mask;
    j["l_dec"] = r.l_dec;
    j["l_total"] = r.l_total;
    j["beta_enc"] = r.beta_enc;
    j["beta_dec"] = r.beta_dec;
    j["alpha"] = r.alpha;
    j["lr"] = r.lr;
    j["mask_kind"] = r.mask_kind;
    j["attack"] = r.attack;
    j["bit_accuracy"] = r.bit_accuracy;
    return j.dump();
}

LossReport parse_loss_record(const std::string& line) {
    try {
        const json j = json::parse(line);
        LossReport r;
        r.step = j.at("step").get<std::size_t>();
        r.phase = parse_train_phase(j.at("phase").get<std::string>());
        r.l_enc = j.at("l_enc").get<double>();
        r.l_msg = j.at("l_msg").get<double>();
        r.l_mask = j.at("l_mask").get<double>();
        r.l_dec = j.at("l_dec").get<double>();
        r.l_total = j.at("l_total").get<double>();
        r.beta_enc = j.at("beta_enc").get<double>();
        r.beta_dec = j.at("beta_dec").get<double>();
        r.alpha = j.at("alpha").get<double>();
        r.lr = j.at("lr").get<double>();
        r.mask_kind = j.at("mask_kind").get<std::string>();
        r.attack = j.at("attack").get<std::string>();
        r.bit_accuracy = j.at("bit_accuracy").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed training log record: ") + e.what());
    }
}

std::vector<VideoClip> synthetic_dataset(std::size_t count, std::size_t frames, std::size_t height, std::size_t width,
                                         std::uint64_t seed) {
    std::vector<VideoClip> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_clip(frames, height, width, derive_seed({seed, i})));
    return out;
}

}  // namespace dimwm
