#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>

#include "dimwm/io.hpp"
#include "dimwm/metrics.hpp"
#include "dimwm/plot.hpp"

namespace dimwm {

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw EnvironmentError("cannot write " + path.string());
    f << text;
}

void write_clip(const fs::path& path, const VideoClip& clip) {
    if (path.extension() == ".dimt") save_clip(path, clip);
    else save_clip_frames(path, clip);
}

std::vector<VideoClip> dataset_for(const MappingConfig& mapping, const std::string& data, std::uint64_t seed) {
    RunConfig rc;
    rc.mapping = mapping;
    rc.io.data = data;
    rc.io.data_seed = seed;
    auto clips = load_training_data(rc);
    if (clips.empty()) throw InvalidArgument("no clips found in " + data);
    return clips;
}

/// Mask operand for the checkpoint's regime, read from `path` or all ones.
MaskPayload mask_operand(const MappingConfig& cfg, const std::string& path) {
    switch (cfg.regime()) {
        case Regime::M13:
            if (!path.empty()) throw InvalidArgument("M13 embeds the message only; --mask is not accepted");
            return std::monostate{};
        case Regime::M23: {
            if (path.empty()) return SpatialMask(cfg.height, cfg.width, 1, 1);
            const auto m = load_mask(path);
            if (m.frames() != 1) throw InvalidArgument("M23 takes a single 2D mask, got " + std::to_string(m.frames()) + " frames");
            return m.frame(0);
        }
        default: {
            if (path.empty()) return SpatioTemporalMask(cfg.frames, cfg.height, cfg.width, cfg.mask_channels, 1);
            auto m = load_mask(path);
            if (m.channels() == 1 && cfg.mask_channels > 1)
                m = encode_multichannel(m, build_codebook(cfg.frames, cfg.mask_channels));
            return m;
        }
    }
}

std::string order_text(const std::vector<int>& order) {
    std::ostringstream os;
    for (std::size_t i = 0; i < order.size(); ++i) {
        os << (i ? " " : "");
        if (order[i] < 0) os << "?";
        else os << order[i];
    }
    return os.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dimension-aware video watermarking: train, embed, extract, localize and evaluate.", "dimwm"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    // train
    auto* train = app.add_subcommand("train", "Train a model bundle from a run config");
    std::string config_path, resume_path;
    std::size_t print_every = 100;
    train->add_option("-c,--config", config_path, "Run config file")->required();
    train->add_option("--resume", resume_path, "Checkpoint to continue from");
    train->add_option("--print-every", print_every, "Progress line cadence (0: silent)");

    // config
    auto* config = app.add_subcommand("config", "Print a default run config");
    bool full_scale = false;
    config->add_flag("--full-scale", full_scale, "Full-scale training schedule");

    // embed
    auto* embed_cmd = app.add_subcommand("embed", "Embed a message (and mask) into a clip");
    std::string ck_path, clip_path, out_path, message_hex, mask_path;
    std::uint64_t seed = 0;
    std::optional<double> mu;
    embed_cmd->add_option("-k,--checkpoint", ck_path)->required();
    embed_cmd->add_option("-i,--clip", clip_path)->required();
    embed_cmd->add_option("-o,--out", out_path, "Watermarked clip (.dimt, or a frame directory)")->required();
    embed_cmd->add_option("-m,--message", message_hex, "Message as hex (default: random from --seed)");
    embed_cmd->add_option("--mask", mask_path, "Mask payload file (default: all ones)");
    embed_cmd->add_option("--seed", seed);
    embed_cmd->add_option("--mu", mu, "Override the JND strength");

    // extract
    auto* extract = app.add_subcommand("extract", "Decode the message from a clip");
    std::string mask_out, expect_hex;
    bool whole_clip = false;
    extract->add_option("-k,--checkpoint", ck_path)->required();
    extract->add_option("-i,--clip", clip_path)->required();
    extract->add_option("--mask-out", mask_out, "Write the predicted mask here");
    extract->add_option("--expect", expect_hex, "Reference message hex; prints bit accuracy");
    extract->add_flag("--whole-clip", whole_clip, "Decode from the whole clip instead of the predicted region");

    // localize
    auto* localize = app.add_subcommand("localize", "Predict the watermark mask of a clip");
    std::string truth_path;
    localize->add_option("-k,--checkpoint", ck_path)->required();
    localize->add_option("-i,--clip", clip_path)->required();
    localize->add_option("-o,--out", out_path, "Predicted mask file")->required();
    localize->add_option("--truth", truth_path, "Ground-truth mask; prints IoU");

    // order
    auto* order = app.add_subcommand("order", "Recover the frame order from multichannel mask codes");
    order->add_option("-k,--checkpoint", ck_path)->required();
    order->add_option("-i,--clip", clip_path)->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against the evaluation pool");
    std::string data = "synthetic:4", out_dir;
    std::vector<std::string> preset_names;
    std::uint64_t data_seed = 1000;
    bool truth_mask = false;
    eval->add_option("-k,--checkpoint", ck_path)->required();
    eval->add_option("-d,--data", data, "Clip directory or synthetic:<count>");
    eval->add_option("-o,--out", out_dir, "Report directory")->required();
    eval->add_option("-p,--preset", preset_names, "Evaluate only these presets");
    eval->add_option("--seed", seed);
    eval->add_option("--data-seed", data_seed, "Seed for synthetic data");
    eval->add_flag("--truth-mask", truth_mask, "Decode from the ground-truth region");

    // plot
    auto* plot = app.add_subcommand("plot", "Chart an evaluation report");
    std::string report_dir;
    plot->add_option("-r,--report", report_dir, "Directory holding distortions.csv and bins.csv")->required();
    plot->add_option("-o,--out", out_dir, "Output directory (default: <report>/plots)");

    // bench
    auto* bench = app.add_subcommand("bench", "Embed and extract throughput");
    std::size_t repeat = 3, frames = 4, height = 32, width = 32, length = 16;
    bench->add_option("-k,--checkpoint", ck_path, "Checkpoint (default: a fresh bundle of the given shape)");
    bench->add_option("--repeat", repeat)->check(CLI::PositiveNumber);
    bench->add_option("--frames", frames);
    bench->add_option("--height", height);
    bench->add_option("--width", width);
    bench->add_option("--length", length);

    // synth
    auto* synth = app.add_subcommand("synth", "Write deterministic synthetic clips");
    std::size_t count = 1;
    synth->add_option("-o,--out", out_path, "Clip file, or a directory when --count > 1")->required();
    synth->add_option("--frames", frames);
    synth->add_option("--height", height);
    synth->add_option("--width", width);
    synth->add_option("--count", count)->check(CLI::PositiveNumber);
    synth->add_option("--seed", seed);

    // gen-mask
    auto* gen_mask = app.add_subcommand("gen-mask", "Write a mask payload");
    std::string kind_name = "rectangular";
    std::size_t delta = 2, channels = 1;
    gen_mask->add_option("-o,--out", out_path)->required();
    gen_mask->add_option("--kind", kind_name, "full, rectangular, irregular or segmented");
    gen_mask->add_option("--frames", frames, "1 writes a 2D mask");
    gen_mask->add_option("--height", height);
    gen_mask->add_option("--width", width);
    gen_mask->add_option("--delta", delta, "Largest per-frame shift");
    gen_mask->add_option("--channels", channels, "Frame-code channels");
    gen_mask->add_option("--seed", seed);

    // attack
    auto* attack = app.add_subcommand("attack", "Apply one distortion preset to a clip");
    std::string preset_name, phase_name_opt = "evaluation";
    attack->add_option("-i,--clip", clip_path)->required();
    attack->add_option("-p,--preset", preset_name)->required();
    attack->add_option("-o,--out", out_path)->required();
    attack->add_option("--phase", phase_name_opt, "training or evaluation");
    attack->add_option("--mask", mask_path, "Ground-truth mask to transform alongside");
    attack->add_option("--mask-out", mask_out);
    attack->add_option("--seed", seed);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        if (!app.get_subcommands().empty()) err << app.get_subcommands().front()->help();
        return 2;
    }

    try {
        if (*train) {
            const RunConfig rc = load_run_config(config_path);
            std::optional<Checkpoint> resume;
            if (!resume_path.empty()) resume = load_checkpoint(resume_path);
            const auto clips = load_training_data(rc);
            FitOptions opt;
            opt.out_dir = rc.io.out_dir;
            opt.checkpoint_every = rc.io.checkpoint_every;
            opt.on_step = [&](const LossReport& r) {
                if (print_every && (r.step + 1) % print_every == 0)
                    out << "step " << r.step + 1 << " phase " << train_phase_name(r.phase) << " loss " << r.l_total
                        << " msg " << r.l_msg << " mask " << r.l_mask << " enc " << r.l_enc << " acc "
                        << r.bit_accuracy << "\n"
                        << std::flush;
            };
            const auto ck = fit(rc.mapping, rc.train, clips, opt, std::move(resume));
            out << "wrote " << (rc.io.out_dir / "final.dimc").string() << " at step " << ck.step << "\n";
        } else if (*config) {
            RunConfig rc;
            if (full_scale) rc.train = TrainConfig::full_scale();
            out << format_run_config(rc);
        } else if (*embed_cmd) {
            auto ck = load_checkpoint(ck_path);
            if (mu) ck.bundle.jnd_scale = static_cast<float>(*mu);
            const auto& cfg = ck.bundle.mapping;
            const VideoClip clip = load_clip(clip_path);
            const BinaryMessage msg = message_hex.empty() ? sample_message(cfg.message_length, seed)
                                                          : BinaryMessage::from_hex(message_hex, cfg.message_length);
            const MaskPayload mask = mask_operand(cfg, mask_path);
            const VideoClip wm = embed(ck.bundle, clip, msg, mask);
            const SpatioTemporalMask region = cfg.takes_mask_input()
                                                  ? mask_input_volume(cfg, mask)
                                                  : SpatioTemporalMask(cfg.frames, cfg.height, cfg.width, 1, 1);
            const VideoClip fused = fuse(wm, clip, region);
            write_clip(out_path, fused);
            out << "message " << msg.to_hex() << "\n";
            out << "psnr " << std::fixed << std::setprecision(2) << psnr(fused, clip) << "\n";
        } else if (*extract) {
            const auto ck = load_checkpoint(ck_path);
            const auto& cfg = ck.bundle.mapping;
            const VideoClip clip = load_clip(clip_path);
            const auto estimate = predict_mask(ck.bundle, clip);
            const auto region = binarize(estimate);
            if (!mask_out.empty()) save_mask(mask_out, region);
            if (!whole_clip && region.count() == 0)
                err << "warning: predicted region is empty; decoding from an all-zero clip\n";
            const auto probs = decode(ck.bundle, whole_clip ? clip : apply_mask(clip, region));
            std::vector<std::uint8_t> bits;
            for (float p : probs) bits.push_back(p > 0.5f ? 1 : 0);
            out << "message " << BinaryMessage(bits).to_hex() << "\n";
            out << "region " << std::fixed << std::setprecision(4) << region.union_channels().volume_ratio() << "\n";
            if (!expect_hex.empty())
                out << "bit_accuracy " << bit_accuracy(probs, BinaryMessage::from_hex(expect_hex, cfg.message_length))
                    << "\n";
        } else if (*localize) {
            const auto ck = load_checkpoint(ck_path);
            const VideoClip clip = load_clip(clip_path);
            const auto estimate = predict_mask(ck.bundle, clip);
            const auto region = binarize(estimate);
            save_mask(out_path, region);
            out << "region " << std::fixed << std::setprecision(4) << region.union_channels().volume_ratio() << "\n";
            if (!truth_path.empty()) {
                const auto truth = load_mask(truth_path);
                out << "iou " << iou(estimate, truth) << "\n";
                if (truth.channels() > 1) {
                    const auto m = miou(estimate, truth, build_codebook(truth.frames(), truth.channels()));
                    if (m) out << "miou " << *m << "\n";
                }
            }
        } else if (*order) {
            const auto ck = load_checkpoint(ck_path);
            const auto& cfg = ck.bundle.mapping;
            if (cfg.mask_channels < 2) throw InvalidArgument("frame order needs a checkpoint with mask_channels >= 2");
            const VideoClip clip = load_clip(clip_path);
            const auto pred = predict_mask(ck.bundle, clip);
            out << "order " << order_text(recover_order(pred, build_codebook(cfg.frames, cfg.mask_channels))) << "\n";
        } else if (*eval) {
            const auto ck = load_checkpoint(ck_path);
            const auto clips = dataset_for(ck.bundle.mapping, data, data_seed);
            EvalOptions opt;
            opt.seed = seed;
            opt.truth_mask = truth_mask;
            opt.presets = preset_names;
            const EvalReport report = evaluate(ck.bundle, clips, opt);
            fs::create_directories(out_dir);
            const std::string text = report_to_text(report);
            write_text(fs::path(out_dir) / "report.txt", text);
            write_text(fs::path(out_dir) / "distortions.csv", distortions_csv(report));
            write_text(fs::path(out_dir) / "categories.csv", categories_csv(report));
            write_text(fs::path(out_dir) / "bins.csv", bins_csv(report));
            out << text;
        } else if (*plot) {
            const fs::path dest = out_dir.empty() ? fs::path(report_dir) / "plots" : fs::path(out_dir);
            for (const auto& p : plot_report(report_dir, dest)) out << "wrote " << p.string() << "\n";
        } else if (*bench) {
            ModelBundle<float> bundle;
            if (!ck_path.empty()) {
                bundle = load_checkpoint(ck_path).bundle;
            } else {
                MappingConfig cfg;
                cfg.frames = frames;
                cfg.height = height;
                cfg.width = width;
                cfg.message_length = length;
                cfg.validate();
                bundle = ModelBundle<float>::create(cfg, 0);
            }
            const auto& cfg = bundle.mapping;
            const VideoClip clip = synthetic_clip(cfg.frames, cfg.height, cfg.width, 0);
            const BinaryMessage msg = sample_message(cfg.message_length, 0);
            const MaskPayload mask = mask_operand(cfg, "");
            using clock = std::chrono::steady_clock;
            auto time = [&](auto&& fn) {
                fn();
                const auto t0 = clock::now();
                for (std::size_t i = 0; i < repeat; ++i) fn();
                return std::chrono::duration<double>(clock::now() - t0).count();
            };
            VideoClip wm;
            const double t_embed = time([&] { wm = embed(bundle, clip, msg, mask); });
            const double t_extract = time([&] { (void)decode(bundle, apply_mask(wm, binarize(predict_mask(bundle, wm)))); });
            const double n_frames = static_cast<double>(repeat * cfg.frames);
            out << "shape " << cfg.frames << "x" << cfg.height << "x" << cfg.width << " L=" << cfg.message_length
                << " regime " << regime_name(cfg.regime()) << "\n";
            out << std::left << std::setw(10) << "op" << std::setw(10) << "clips" << std::setw(12) << "seconds"
                << "fps\n";
            for (const auto& [name, secs] : {std::pair{"embed", t_embed}, std::pair{"extract", t_extract}})
                out << std::setw(10) << name << std::setw(10) << repeat << std::setw(12) << std::setprecision(4)
                    << secs << std::setprecision(2) << std::fixed << n_frames / secs << "\n"
                    << std::defaultfloat;
        } else if (*synth) {
            const auto clips = synthetic_dataset(count, frames, height, width, seed);
            if (count == 1) {
                write_clip(out_path, clips[0]);
                out << "wrote " << out_path << "\n";
            } else {
                fs::create_directories(out_path);
                for (std::size_t i = 0; i < count; ++i) {
                    std::ostringstream name;
                    name << "clip_" << std::setw(4) << std::setfill('0') << i << ".dimt";
                    save_clip(fs::path(out_path) / name.str(), clips[i]);
                }
                out << "wrote " << count << " clips to " << out_path << "\n";
            }
        } else if (*gen_mask) {
            const MaskKind kind = parse_mask_kind(kind_name);
            const SpatialMask init = generate_mask(kind, height, width, derive_seed({seed, 2}));
            SpatioTemporalMask m = frames <= 1 ? SpatioTemporalMask::replicate(init, 1)
                                               : generate_mask_sequence(init, frames, delta, derive_seed({seed, 3}));
            if (channels > 1) m = encode_multichannel(m, build_codebook(m.frames(), channels));
            if (frames <= 1) {
                RawTensor t = raw_from(m);
                t.shape = {height, width, m.channels()};
                write_raw_tensor(out_path, t);
            } else {
                save_mask(out_path, m);
            }
            out << "ratio " << std::fixed << std::setprecision(4) << m.union_channels().volume_ratio() << "\n";
        } else if (*attack) {
            const auto spec = preset(parse_phase(phase_name_opt), preset_name);
            const VideoClip clip = load_clip(clip_path);
            const auto outcome = apply(spec, clip, seed);
            write_clip(out_path, outcome.clip);
            if (!mask_path.empty()) {
                const auto moved = outcome.mask_transform.apply(load_mask(mask_path));
                if (!mask_out.empty()) save_mask(mask_out, moved);
            }
            out << "psnr " << std::fixed << std::setprecision(2) << psnr(outcome.clip, clip) << "\n";
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CapacityExceeded& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace dimwm
