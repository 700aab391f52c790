#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "dimwm/io.hpp"
#include "dimwm/metrics.hpp"
#include "dimwm/model.hpp"
#include "dimwm/trainer.hpp"

namespace py = pybind11;
using namespace dimwm;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

VideoClip to_clip(const F32& a) {
    if (a.ndim() != 4 || a.shape(3) != 3) throw InvalidArgument("clip must be a (T, H, W, 3) array");
    VideoClip clip(a.shape(0), a.shape(1), a.shape(2));
    std::copy_n(a.data(), a.size(), clip.pixels().data());
    return clip;
}

F32 from_tensor(const Tensor<float>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    F32 out(shape);
    std::copy_n(t.data(), t.size(), out.mutable_data());
    return out;
}

F32 from_clip(const VideoClip& c) { return from_tensor(c.pixels()); }

/// (T, H, W) or (T, H, W, C) array to a 3D mask.
SpatioTemporalMask to_stm(const U8& a) {
    if (a.ndim() != 3 && a.ndim() != 4) throw InvalidArgument("mask must be a (T, H, W[, C]) array");
    const std::size_t c = a.ndim() == 4 ? a.shape(3) : 1;
    std::vector<std::uint8_t> cells(a.data(), a.data() + a.size());
    for (auto& v : cells) v = v != 0;
    return SpatioTemporalMask(a.shape(0), a.shape(1), a.shape(2), c, std::move(cells));
}

SpatialMask to_spatial(const U8& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw InvalidArgument("mask must be an (H, W[, C]) array");
    const std::size_t c = a.ndim() == 3 ? a.shape(2) : 1;
    std::vector<std::uint8_t> cells(a.data(), a.data() + a.size());
    for (auto& v : cells) v = v != 0;
    return SpatialMask(a.shape(0), a.shape(1), c, std::move(cells));
}

U8 from_stm(const SpatioTemporalMask& m) {
    U8 out({m.frames(), m.height(), m.width(), m.channels()});
    std::copy(m.cells().begin(), m.cells().end(), out.mutable_data());
    return out;
}

U8 from_spatial(const SpatialMask& m) {
    U8 out({m.height(), m.width(), m.channels()});
    std::copy(m.cells().begin(), m.cells().end(), out.mutable_data());
    return out;
}

BinaryMessage to_message(const py::object& o, std::size_t length) {
    if (py::isinstance<py::str>(o)) return BinaryMessage::from_hex(o.cast<std::string>(), length);
    const auto a = o.cast<U8>();
    return BinaryMessage(std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

U8 from_message(const BinaryMessage& m) {
    const auto bits = m.bits();
    U8 out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(bits.size())});
    std::copy(bits.begin(), bits.end(), out.mutable_data());
    return out;
}

/// Mask operand for the bundle's regime; None means a full mask.
MaskPayload operand(const MappingConfig& cfg, const py::object& mask) {
    switch (cfg.regime()) {
        case Regime::M13:
            if (!mask.is_none()) throw InvalidArgument("regime M13 takes no mask operand");
            return std::monostate{};
        case Regime::M23:
            if (mask.is_none()) return SpatialMask(cfg.height, cfg.width, 1, 1);
            return to_spatial(mask.cast<U8>());
        default: {
            if (mask.is_none()) return SpatioTemporalMask(cfg.frames, cfg.height, cfg.width, cfg.mask_channels, 1);
            auto m = to_stm(mask.cast<U8>());
            if (m.channels() == 1 && cfg.mask_channels > 1)
                m = encode_multichannel(m, build_codebook(cfg.frames, cfg.mask_channels));
            return m;
        }
    }
}

struct Model {
    ModelBundle<float> bundle;
};

}  // namespace

PYBIND11_MODULE(_dimwm, m) {
    m.doc() = "Watermark embedding, extraction and localisation for video clips.";

    py::register_exception<CapacityExceeded>(m, "CapacityExceeded", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<EnvironmentError>(m, "EnvironmentError", PyExc_RuntimeError);

    py::class_<Model>(m, "Model")
        .def_static(
            "create",
            [](std::size_t frames, std::size_t height, std::size_t width, std::size_t message_length, int d_e, int d_d,
               std::size_t mask_channels, std::uint64_t seed) {
                MappingConfig c;
                c.frames = frames;
                c.height = height;
                c.width = width;
                c.message_length = message_length;
                c.d_e = d_e;
                c.d_d = d_d;
                c.mask_channels = mask_channels;
                return Model{ModelBundle<float>::create(c, seed)};
            },
            py::arg("frames") = 4, py::arg("height") = 32, py::arg("width") = 32, py::arg("message_length") = 16,
            py::arg("d_e") = 3, py::arg("d_d") = 3, py::arg("mask_channels") = 1, py::arg("seed") = 0)
        .def_static("load", [](const fs::path& p) { return Model{load_checkpoint(p).bundle}; })
        .def("save",
             [](const Model& self, const fs::path& p) {
                 Checkpoint ck{self.bundle, {}, 0, TrainPhase::FullMask, std::nullopt};
                 save_checkpoint(p, ck);
             })
        .def_property_readonly("regime", [](const Model& s) { return regime_name(s.bundle.mapping.regime()); })
        .def_property_readonly("frames", [](const Model& s) { return s.bundle.mapping.frames; })
        .def_property_readonly("height", [](const Model& s) { return s.bundle.mapping.height; })
        .def_property_readonly("width", [](const Model& s) { return s.bundle.mapping.width; })
        .def_property_readonly("message_length", [](const Model& s) { return s.bundle.mapping.message_length; })
        .def_property_readonly("mask_channels", [](const Model& s) { return s.bundle.mapping.mask_channels; })
        .def_property("mu", [](const Model& s) { return s.bundle.jnd_scale; },
                      [](Model& s, float v) { s.bundle.jnd_scale = v; })
        .def_property_readonly("jnd_active", [](const Model& s) { return s.bundle.jnd_active; })
        .def(
            "embed",
            [](const Model& s, const F32& clip, const py::object& message, const py::object& mask) {
                const auto& cfg = s.bundle.mapping;
                const auto host = to_clip(clip);
                const auto payload = operand(cfg, mask);
                const auto wm = embed(s.bundle, host, to_message(message, cfg.message_length), payload);
                const auto region = cfg.regime() == Regime::M13
                                        ? SpatioTemporalMask(cfg.frames, cfg.height, cfg.width, 1, 1)
                                        : mask_input_volume(cfg, payload).union_channels();
                return from_clip(fuse(wm, host, region));
            },
            py::arg("clip"), py::arg("message"), py::arg("mask") = py::none(),
            "Watermarks `clip` inside the mask region; `message` is a bit array or hex string.")
        .def(
            "decode", [](const Model& s, const F32& clip) {
                const auto p = decode(s.bundle, to_clip(clip));
                return py::array_t<float>(static_cast<py::ssize_t>(p.size()), p.data());
            },
            "Per-bit probabilities.")
        .def("extract",
             [](const Model& s, const F32& clip) {
                 const auto p = decode(s.bundle, to_clip(clip));
                 std::vector<std::uint8_t> bits(p.size());
                 for (std::size_t i = 0; i < p.size(); ++i) bits[i] = p[i] > 0.5f;
                 return from_message(BinaryMessage(bits));
             })
        .def("predict_mask", [](const Model& s, const F32& clip) { return from_tensor(predict_mask(s.bundle, to_clip(clip))); })
        .def("localize",
             [](const Model& s, const F32& clip, float threshold) {
                 return from_stm(binarize(predict_mask(s.bundle, to_clip(clip)), threshold));
             },
             py::arg("clip"), py::arg("threshold") = 0.5f)
        .def("recover_order", [](const Model& s, const F32& clip) {
            const auto& cfg = s.bundle.mapping;
            if (cfg.mask_channels < 2) throw InvalidArgument("frame order needs a multichannel model");
            return recover_order(predict_mask(s.bundle, to_clip(clip)), build_codebook(cfg.frames, cfg.mask_channels));
        });

    m.def("fuse", [](const F32& wm, const F32& orig, const U8& mask) {
        return from_clip(fuse(to_clip(wm), to_clip(orig), to_stm(mask)));
    });
    m.def("sample_message", [](std::size_t length, std::uint64_t seed) { return from_message(sample_message(length, seed)); },
          py::arg("length"), py::arg("seed") = 0);
    m.def("message_to_hex", [](const U8& bits) {
        return BinaryMessage(std::vector<std::uint8_t>(bits.data(), bits.data() + bits.size())).to_hex();
    });
    m.def("message_from_hex", [](const std::string& hex, std::size_t length) {
        return from_message(BinaryMessage::from_hex(hex, length));
    });
    m.def("generate_mask",
          [](const std::string& kind, std::size_t height, std::size_t width, std::uint64_t seed) {
              return from_spatial(generate_mask(parse_mask_kind(kind), height, width, seed));
          },
          py::arg("kind"), py::arg("height"), py::arg("width"), py::arg("seed") = 0);
    m.def("shift_mask", [](const U8& mask, long dx, long dy) { return from_spatial(shift_mask(to_spatial(mask), dx, dy)); });
    m.def("generate_mask_sequence",
          [](const U8& initial, std::size_t frames, std::size_t delta_max, std::uint64_t seed) {
              return from_stm(generate_mask_sequence(to_spatial(initial), frames, delta_max, seed));
          },
          py::arg("initial"), py::arg("frames"), py::arg("delta_max"), py::arg("seed") = 0);
    m.def("build_codebook", [](std::size_t frames, std::size_t channels) { return build_codebook(frames, channels).codes(); });
    m.def("encode_multichannel", [](const U8& sequence, std::size_t channels) {
        const auto seq = to_stm(sequence);
        return from_stm(encode_multichannel(seq, build_codebook(seq.frames(), channels)));
    });

    m.def("presets", [](const std::string& phase) {
        std::vector<std::string> names;
        for (const auto& s : presets(parse_phase(phase))) names.push_back(s.name);
        return names;
    }, py::arg("phase") = "evaluation");
    m.def(
        "attack",
        [](const F32& clip, const std::string& name, std::uint64_t seed, const std::string& phase,
           const py::object& mask) -> py::object {
            const auto out = apply(preset(parse_phase(phase), name), to_clip(clip), seed);
            if (mask.is_none()) return from_clip(out.clip);
            return py::make_tuple(from_clip(out.clip), from_stm(out.mask_transform.apply(to_stm(mask.cast<U8>()))));
        },
        py::arg("clip"), py::arg("preset"), py::arg("seed") = 0, py::arg("phase") = "evaluation",
        py::arg("mask") = py::none(), "Attacked clip, or (clip, transformed mask) when `mask` is given.");
    m.def("codec_available", &codec_available);

    m.def("bit_accuracy", [](const F32& pred, const U8& bits) {
        return bit_accuracy(std::vector<float>(pred.data(), pred.data() + pred.size()),
                            BinaryMessage(std::vector<std::uint8_t>(bits.data(), bits.data() + bits.size())));
    });
    m.def("iou", [](const F32& pred, const U8& truth) {
        const auto t = to_stm(truth);
        Tensor<float> p({t.frames(), t.height(), t.width(), t.channels()});
        if (static_cast<std::size_t>(pred.size()) != p.size()) throw InvalidArgument("iou: shape mismatch");
        std::copy_n(pred.data(), pred.size(), p.data());
        return iou(p, t);
    });
    m.def("psnr", [](const F32& a, const F32& b) { return psnr(to_clip(a), to_clip(b)); });
    m.def("ssim", [](const F32& a, const F32& b) { return ssim(to_clip(a), to_clip(b)); });

    m.def("synthetic_clip", [](std::size_t frames, std::size_t height, std::size_t width, std::uint64_t seed) {
        return from_clip(synthetic_clip(frames, height, width, seed));
    }, py::arg("frames"), py::arg("height"), py::arg("width"), py::arg("seed") = 0);
    m.def("load_clip", [](const fs::path& p) { return from_clip(load_clip(p)); });
    m.def("save_clip", [](const fs::path& p, const F32& clip) { save_clip(p, to_clip(clip)); });
    m.def("load_mask", [](const fs::path& p) { return from_stm(load_mask(p)); });
    m.def("save_mask", [](const fs::path& p, const U8& mask) { save_mask(p, to_stm(mask)); });

    m.def(
        "evaluate",
        [](const Model& s, const std::vector<F32>& clips, std::uint64_t seed, const std::vector<std::string>& presets,
           bool truth_mask) {
            std::vector<VideoClip> data;
            for (const auto& c : clips) data.push_back(to_clip(c));
            EvalOptions opts;
            opts.seed = seed;
            opts.presets = presets;
            opts.truth_mask = truth_mask;
            const auto r = evaluate(s.bundle, data, opts);
            py::dict out;
            out["report"] = report_to_text(r);
            out["distortions_csv"] = distortions_csv(r);
            out["categories_csv"] = categories_csv(r);
            out["bins_csv"] = bins_csv(r);
            out["psnr"] = r.psnr;
            out["ssim"] = r.ssim;
            out["clean_bit_accuracy"] = r.clean.bit_accuracy;
            return out;
        },
        py::arg("model"), py::arg("clips"), py::arg("seed") = 0, py::arg("presets") = std::vector<std::string>{},
        py::arg("truth_mask") = false);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        "Runs a command-line invocation in process; returns (exit status, stdout, stderr).");
}
