#include "dimwm/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dimwm/error.hpp"

namespace dimwm {

using json = nlohmann::json;

namespace {

constexpr std::uint8_t kTensorVersion = 1;
constexpr std::uint8_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InvalidArgument("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw EnvironmentError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw EnvironmentError("write failed for " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// RawTensorFile

std::vector<std::uint8_t> encode_raw_tensor(const RawTensor& t) {
    if (t.shape.size() > 255) throw InvalidArgument("tensor rank exceeds 255");
    const std::size_t n = numel(t.shape);
    if ((t.dtype == DType::F32 ? t.f32.size() : t.u8.size()) != n)
        throw InvalidArgument("raw tensor payload does not match its shape " + shape_string(t.shape));
    std::vector<std::uint8_t> out{'D', 'I', 'M', 'T', kTensorVersion, static_cast<std::uint8_t>(t.shape.size()),
                                  static_cast<std::uint8_t>(t.dtype)};
    for (std::size_t d : t.shape) {
        if (d > 0xffffffffu) throw InvalidArgument("tensor dimension exceeds 32 bits");
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    if (t.dtype == DType::F32) {
        out.reserve(out.size() + 4 * n);
        for (float v : t.f32) put_f32(out, v);
    } else {
        out.insert(out.end(), t.u8.begin(), t.u8.end());
    }
    return out;
}

RawTensor decode_raw_tensor(const std::vector<std::uint8_t>& b) {
    if (b.size() < 7 || std::memcmp(b.data(), "DIMT", 4) != 0) throw InvalidArgument("not a DIMT tensor file");
    if (b[4] != kTensorVersion) throw InvalidArgument("unsupported DIMT version " + std::to_string(b[4]));
    RawTensor t;
    const std::size_t rank = b[5];
    if (b[6] > 1) throw InvalidArgument("unknown DIMT element type " + std::to_string(b[6]));
    t.dtype = static_cast<DType>(b[6]);
    if (b.size() < 7 + 4 * rank) throw InvalidArgument("truncated DIMT header");
    for (std::size_t i = 0; i < rank; ++i) t.shape.push_back(get_u32(b.data() + 7 + 4 * i));
    const std::size_t n = numel(t.shape), off = 7 + 4 * rank;
    const std::size_t elem = t.dtype == DType::F32 ? 4 : 1;
    if (b.size() != off + n * elem)
        throw InvalidArgument("DIMT payload is " + std::to_string(b.size() - off) + " bytes, expected " +
                              std::to_string(n * elem));
    if (t.dtype == DType::F32) {
        t.f32.resize(n);
        for (std::size_t i = 0; i < n; ++i) t.f32[i] = get_f32(b.data() + off + 4 * i);
    } else {
        t.u8.assign(b.begin() + static_cast<long>(off), b.end());
    }
    return t;
}

void write_raw_tensor(const fs::path& path, const RawTensor& t) { write_file(path, encode_raw_tensor(t)); }
RawTensor read_raw_tensor(const fs::path& path) { return decode_raw_tensor(read_file(path)); }

RawTensor raw_from(const Tensor<float>& t) {
    RawTensor r;
    r.dtype = DType::F32;
    r.shape = t.shape();
    r.f32 = t.to_vector();
    return r;
}

RawTensor raw_from(const SpatioTemporalMask& m) {
    RawTensor r;
    r.dtype = DType::U8;
    r.shape = {m.frames(), m.height(), m.width(), m.channels()};
    r.u8 = m.cells();
    return r;
}

// ---------------------------------------------------------------------------
// Clips and masks

namespace {

std::string next_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
    while (pos < b.size()) {
        if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else if (std::isspace(b[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < b.size() && !std::isspace(b[pos])) tok += static_cast<char>(b[pos++]);
    return tok;
}

std::size_t parse_size(const std::string& s, const std::string& what) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw InvalidArgument("bad " + what + " '" + s + "'");
    return v;
}

struct Frame {
    std::size_t h = 0, w = 0;
    std::vector<float> rgb;
};

Frame read_ppm(const fs::path& path) {
    const auto b = read_file(path);
    std::size_t pos = 0;
    if (next_token(b, pos) != "P6") throw InvalidArgument(path.string() + ": only binary PPM (P6) frames are supported");
    Frame f;
    f.w = parse_size(next_token(b, pos), "PPM width");
    f.h = parse_size(next_token(b, pos), "PPM height");
    const std::size_t maxval = parse_size(next_token(b, pos), "PPM maxval");
    if (maxval == 0 || maxval > 65535) throw InvalidArgument(path.string() + ": bad PPM maxval");
    ++pos;  // single whitespace after maxval
    const std::size_t bytes = maxval < 256 ? 1 : 2;
    const std::size_t n = f.h * f.w * 3;
    if (b.size() < pos + n * bytes) throw InvalidArgument(path.string() + ": truncated PPM data");
    f.rgb.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t v = bytes == 1 ? b[pos + i] : (std::size_t{b[pos + 2 * i]} << 8) | b[pos + 2 * i + 1];
        f.rgb[i] = static_cast<float>(static_cast<double>(v) / static_cast<double>(maxval));
    }
    return f;
}

void write_ppm(const fs::path& path, const VideoClip& clip, std::size_t t) {
    std::ostringstream head;
    head << "P6\n" << clip.width() << " " << clip.height() << "\n255\n";
    const std::string h = head.str();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    for (std::size_t y = 0; y < clip.height(); ++y)
        for (std::size_t x = 0; x < clip.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c)
                out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(clip.at(t, y, x, c), 0.0f, 1.0f) * 255)));
    write_file(path, out);
}

std::vector<fs::path> sorted_entries(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

VideoClip load_clip(const fs::path& path) {
    if (fs::is_directory(path)) {
        std::vector<Frame> frames;
        for (const auto& p : sorted_entries(path))
            if (p.extension() == ".ppm") frames.push_back(read_ppm(p));
        if (frames.empty()) throw InvalidArgument(path.string() + " contains no .ppm frames");
        VideoClip clip(frames.size(), frames[0].h, frames[0].w);
        for (std::size_t t = 0; t < frames.size(); ++t) {
            if (frames[t].h != frames[0].h || frames[t].w != frames[0].w)
                throw InvalidArgument(path.string() + ": frames differ in size");
            std::copy(frames[t].rgb.begin(), frames[t].rgb.end(),
                      clip.pixels().data() + t * frames[0].h * frames[0].w * 3);
        }
        return clip;
    }
    RawTensor r = read_raw_tensor(path);
    if (r.dtype != DType::F32 || r.shape.size() != 4 || r.shape[3] != 3)
        throw InvalidArgument(path.string() + ": expected an f32 (T, H, W, 3) tensor, got " + shape_string(r.shape));
    Tensor<float> t(r.shape);
    t.storage().assign(r.f32.begin(), r.f32.end());
    return VideoClip(std::move(t));
}

void save_clip(const fs::path& path, const VideoClip& clip) { write_raw_tensor(path, raw_from(clip.pixels())); }

void save_clip_frames(const fs::path& dir, const VideoClip& clip) {
    fs::create_directories(dir);
    for (std::size_t t = 0; t < clip.frames(); ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%05zu.ppm", t);
        write_ppm(dir / name, clip, t);
    }
}

SpatioTemporalMask load_mask(const fs::path& path) {
    RawTensor r = read_raw_tensor(path);
    if (r.shape.size() == 3) r.shape.insert(r.shape.begin(), 1);
    if (r.shape.size() != 4) throw InvalidArgument(path.string() + ": expected a (T, H, W, C) mask tensor");
    std::vector<std::uint8_t> cells;
    if (r.dtype == DType::U8) {
        cells = std::move(r.u8);
    } else {
        for (float v : r.f32) cells.push_back(v > 0.5f ? 1 : 0);
    }
    for (auto c : cells)
        if (c > 1) throw InvalidArgument(path.string() + ": mask values must be 0 or 1");
    return SpatioTemporalMask(r.shape[0], r.shape[1], r.shape[2], r.shape[3], std::move(cells));
}

void save_mask(const fs::path& path, const SpatioTemporalMask& mask) { write_raw_tensor(path, raw_from(mask)); }

std::vector<VideoClip> load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw InvalidArgument("dataset directory " + dir.string() + " does not exist");
    std::vector<VideoClip> out;
    for (const auto& p : sorted_entries(dir))
        if (p.extension() == ".dimt" || fs::is_directory(p)) out.push_back(load_clip(p));
    if (out.empty()) throw InvalidArgument(dir.string() + " contains no clips");
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json mapping_json(const MappingConfig& m) {
    return {{"d_e", m.d_e},
            {"d_d", m.d_d},
            {"message_length", m.message_length},
            {"frames", m.frames},
            {"height", m.height},
            {"width", m.width},
            {"message_channels", m.message_channels},
            {"mask_channels", m.mask_channels}};
}

MappingConfig mapping_from(const json& j) {
    MappingConfig m;
    m.d_e = j.at("d_e").get<int>();
    m.d_d = j.at("d_d").get<int>();
    m.message_length = j.at("message_length").get<std::size_t>();
    m.frames = j.at("frames").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.message_channels = j.at("message_channels").get<std::size_t>();
    m.mask_channels = j.at("mask_channels").get<std::size_t>();
    return m;
}

json train_json(const TrainConfig& c) {
    json j = {{"steps", c.steps},
              {"lr", c.lr},
              {"warmup_steps", c.warmup_steps},
              {"batch_size", c.batch_size},
              {"beta_enc", c.beta_enc},
              {"beta_dec_init", c.beta_dec_init},
              {"beta_dec_final", c.beta_dec_final},
              {"beta_dec_decay_steps", c.beta_dec_decay_steps},
              {"alpha", c.alpha},
              {"jnd_start_step", c.jnd_start_step},
              {"mu", c.mu},
              {"s1", c.s1},
              {"s2", c.s2},
              {"seed", c.seed},
              {"weight_decay", c.weight_decay},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"distortions", c.distortions},
              {"mask_curriculum", c.mask_curriculum},
              {"fixed_payloads", c.fixed_payloads}};
    j["categories"] = json::array();
    for (Category cat : c.categories) j["categories"].push_back(category_name(cat));
    j["preset_overrides"] = json::object();
    for (const auto& [name, params] : c.preset_overrides)
        for (const auto& [key, r] : params) j["preset_overrides"][name][key] = {r.lo, r.hi};
    return j;
}

TrainConfig train_from(const json& j) {
    TrainConfig c;
    c.steps = j.at("steps").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.warmup_steps = j.at("warmup_steps").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.beta_enc = j.at("beta_enc").get<double>();
    c.beta_dec_init = j.at("beta_dec_init").get<double>();
    c.beta_dec_final = j.at("beta_dec_final").get<double>();
    c.beta_dec_decay_steps = j.at("beta_dec_decay_steps").get<std::size_t>();
    c.alpha = j.at("alpha").get<double>();
    c.jnd_start_step = j.at("jnd_start_step").get<std::size_t>();
    c.mu = j.at("mu").get<double>();
    c.s1 = j.at("s1").get<std::size_t>();
    c.s2 = j.at("s2").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.distortions = j.at("distortions").get<bool>();
    c.mask_curriculum = j.at("mask_curriculum").get<bool>();
    c.fixed_payloads = j.at("fixed_payloads").get<bool>();
    for (const auto& s : j.at("categories")) c.categories.push_back(parse_category(s.get<std::string>()));
    for (const auto& [name, params] : j.at("preset_overrides").items())
        for (const auto& [key, r] : params.items()) c.preset_overrides[name][key] = {r[0].get<double>(), r[1].get<double>()};
    return c;
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
    const auto params = ck.bundle.parameters();
    std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
    for (const auto& p : params) tensors.emplace_back(p.name, &p.var.value());
    const bool has_opt = !ck.optimizer.m.empty();
    if (has_opt) {
        if (ck.optimizer.m.size() != params.size() || ck.optimizer.v.size() != params.size())
            throw InternalError("optimizer state does not match the parameter list");
        for (std::size_t i = 0; i < params.size(); ++i) tensors.emplace_back("adam.m." + params[i].name, &ck.optimizer.m[i]);
        for (std::size_t i = 0; i < params.size(); ++i) tensors.emplace_back("adam.v." + params[i].name, &ck.optimizer.v[i]);
    }

    json h;
    h["mapping"] = mapping_json(ck.bundle.mapping);
    h["regime"] = regime_name(ck.bundle.mapping.regime());
    h["step"] = ck.step;
    h["phase"] = train_phase_name(ck.phase);
    h["jnd_scale"] = ck.bundle.jnd_scale;
    h["jnd_active"] = ck.bundle.jnd_active;
    h["adam_t"] = ck.optimizer.t;
    if (ck.train) h["train"] = train_json(*ck.train);
    std::size_t offset = 0;
    h["tensors"] = json::array();
    for (const auto& [name, t] : tensors) {
        h["tensors"].push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
        offset += t->size();
    }
    const std::string header = h.dump();

    std::vector<std::uint8_t> out{'D', 'I', 'M', 'C', kCheckpointVersion};
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + 4 * offset);
    for (const auto& [name, t] : tensors)
        for (float v : t->storage()) put_f32(out, v);
    const fs::path tmp = path.string() + ".tmp";
    write_file(tmp, out);
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    const auto b = read_file(path);
    if (b.size() < 9 || std::memcmp(b.data(), "DIMC", 4) != 0) throw InvalidArgument(path.string() + " is not a checkpoint");
    if (b[4] != kCheckpointVersion) throw InvalidArgument("unsupported checkpoint version " + std::to_string(b[4]));
    const std::size_t hlen = get_u32(b.data() + 5);
    if (b.size() < 9 + hlen) throw InvalidArgument("truncated checkpoint header");
    try {
        const json h = json::parse(b.begin() + 9, b.begin() + 9 + static_cast<long>(hlen));
        const std::size_t base = 9 + hlen;
        const std::size_t floats = (b.size() - base) / 4;
        Checkpoint ck;
        ck.bundle = ModelBundle<float>::create(mapping_from(h.at("mapping")), 0);
        ck.bundle.jnd_scale = h.at("jnd_scale").get<float>();
        ck.bundle.jnd_active = h.at("jnd_active").get<bool>();
        ck.step = h.at("step").get<std::size_t>();
        ck.phase = parse_train_phase(h.at("phase").get<std::string>());
        ck.optimizer.t = h.at("adam_t").get<std::size_t>();
        if (h.contains("train")) ck.train = train_from(h.at("train"));

        std::map<std::string, std::pair<Shape, std::size_t>> index;
        for (const auto& e : h.at("tensors"))
            index[e.at("name").get<std::string>()] = {e.at("shape").get<Shape>(), e.at("offset").get<std::size_t>()};
        auto fill = [&](const std::string& name, Tensor<float>& dst) {
            auto it = index.find(name);
            if (it == index.end()) throw InvalidArgument("checkpoint lacks tensor '" + name + "'");
            if (it->second.first != dst.shape())
                throw InvalidArgument("checkpoint tensor '" + name + "' has shape " + shape_string(it->second.first) +
                                      ", expected " + shape_string(dst.shape()));
            const std::size_t off = it->second.second;
            if (off + dst.size() > floats) throw InvalidArgument("checkpoint payload is truncated");
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = get_f32(b.data() + base + 4 * (off + i));
        };
        const auto params = ck.bundle.parameters();
        for (auto p : params) fill(p.name, p.var.mutable_value());
        if (index.count("adam.m." + params.front().name)) {
            for (const auto& p : params) {
                ck.optimizer.m.emplace_back(p.var.shape());
                fill("adam.m." + p.name, ck.optimizer.m.back());
            }
            for (const auto& p : params) {
                ck.optimizer.v.emplace_back(p.var.shape());
                fill("adam.v." + p.name, ck.optimizer.v.back());
            }
        }
        return ck;
    } catch (const json::exception& e) {
        throw InvalidArgument("malformed checkpoint header: " + std::string(e.what()));
    }
}

// ---------------------------------------------------------------------------
// Run configuration

namespace {

std::string trim(std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct ValueParser {
    int line;
    const std::string& key;
    const std::string& value;

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError(line, key + ": " + what + " (got '" + value + "')");
    }
    std::size_t size() const {
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec != std::errc() || p != value.data() + value.size()) fail("expected a non-negative integer");
        return v;
    }
    std::uint64_t u64() const {
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec != std::errc() || p != value.data() + value.size()) fail("expected a non-negative integer");
        return v;
    }
    int integer() const {
        int v = 0;
        auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec != std::errc() || p != value.data() + value.size()) fail("expected an integer");
        return v;
    }
    double real(const std::string& s) const {
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) fail("expected a number");
        return v;
    }
    double real() const { return real(value); }
    bool boolean() const {
        if (value == "true" || value == "yes" || value == "on" || value == "1") return true;
        if (value == "false" || value == "no" || value == "off" || value == "0") return false;
        fail("expected true or false");
    }
    ParamRange range() const {
        const auto colon = value.find(':');
        if (colon == std::string::npos) {
            const double v = real();
            return {v, v};
        }
        return {real(trim(value.substr(0, colon))), real(trim(value.substr(colon + 1)))};
    }
};

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string raw, section;
    int line = 0;
    int mapping_line = 0, train_line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        const std::string s = trim(raw);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError(line, "malformed section header");
            section = trim(s.substr(1, s.size() - 2));
            if (section != "mapping" && section != "train" && section != "distort" && section != "io")
                throw ConfigError(line, "unknown section [" + section + "]");
            if (section == "mapping" && !mapping_line) mapping_line = line;
            if (section == "train" && !train_line) train_line = line;
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(line, "expected key = value");
        const std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
        if (section.empty()) throw ConfigError(line, "key '" + key + "' appears before any section");
        const ValueParser v{line, key, value};
        auto unknown = [&] { throw ConfigError(line, "unknown key '" + key + "' in [" + section + "]"); };

        if (section == "mapping") {
            auto& m = cfg.mapping;
            if (key == "regime") {
                try {
                    const Regime r = parse_regime(value);
                    const int de[] = {3, 1, 2, 3}, dd[] = {3, 3, 3, 2};
                    m.d_e = de[static_cast<int>(r)];
                    m.d_d = dd[static_cast<int>(r)];
                } catch (const InvalidArgument& e) {
                    throw ConfigError(line, e.what());
                }
            } else if (key == "d_e") m.d_e = v.integer();
            else if (key == "d_d") m.d_d = v.integer();
            else if (key == "message_length") m.message_length = v.size();
            else if (key == "frames") m.frames = v.size();
            else if (key == "height") m.height = v.size();
            else if (key == "width") m.width = v.size();
            else if (key == "message_channels") m.message_channels = v.size();
            else if (key == "mask_channels") m.mask_channels = v.size();
            else unknown();
        } else if (section == "train") {
            auto& t = cfg.train;
            if (key == "steps") t.steps = v.size();
            else if (key == "lr") t.lr = v.real();
            else if (key == "warmup_steps") t.warmup_steps = v.size();
            else if (key == "batch_size") t.batch_size = v.size();
            else if (key == "beta_enc") t.beta_enc = v.real();
            else if (key == "beta_dec_init") t.beta_dec_init = v.real();
            else if (key == "beta_dec_final") t.beta_dec_final = v.real();
            else if (key == "beta_dec_decay_steps") t.beta_dec_decay_steps = v.size();
            else if (key == "alpha") t.alpha = v.real();
            else if (key == "jnd_start_step") t.jnd_start_step = v.size();
            else if (key == "mu") t.mu = v.real();
            else if (key == "s1") t.s1 = v.size();
            else if (key == "s2") t.s2 = v.size();
            else if (key == "seed") t.seed = v.u64();
            else if (key == "weight_decay") t.weight_decay = v.real();
            else if (key == "adam_beta1") t.adam_beta1 = v.real();
            else if (key == "adam_beta2") t.adam_beta2 = v.real();
            else if (key == "adam_eps") t.adam_eps = v.real();
            else if (key == "distortions") t.distortions = v.boolean();
            else if (key == "mask_curriculum") t.mask_curriculum = v.boolean();
            else if (key == "fixed_payloads") t.fixed_payloads = v.boolean();
            else unknown();
        } else if (section == "distort") {
            if (key == "categories") {
                cfg.train.categories.clear();
                std::stringstream ss(value);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    try {
                        cfg.train.categories.push_back(parse_category(trim(item)));
                    } catch (const InvalidArgument& e) {
                        throw ConfigError(line, e.what());
                    }
                }
            } else {
                const auto dot = key.find('.');
                if (dot == std::string::npos) unknown();
                const std::string name = key.substr(0, dot), param = key.substr(dot + 1);
                DistortionSpec base;
                try {
                    base = preset(Phase::Training, name);
                } catch (const InvalidArgument&) {
                    throw ConfigError(line, "unknown training distortion '" + name + "'");
                }
                if (!base.params.count(param)) throw ConfigError(line, "distortion '" + name + "' has no parameter '" + param + "'");
                const ParamRange r = v.range();
                if (r.lo > r.hi) throw ConfigError(line, key + ": empty range");
                cfg.train.preset_overrides[name][param] = r;
            }
        } else {
            auto& io = cfg.io;
            if (key == "out_dir") io.out_dir = value;
            else if (key == "data") io.data = value;
            else if (key == "checkpoint_every") io.checkpoint_every = v.size();
            else if (key == "data_seed") io.data_seed = v.u64();
            else unknown();
        }
    }
    try {
        cfg.mapping.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(mapping_line, std::string("[mapping] ") + e.what());
    }
    try {
        cfg.train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(train_line, std::string("[train] ") + e.what());
    }
    if (cfg.io.data.rfind("synthetic:", 0) == 0) {
        const std::string n = cfg.io.data.substr(10);
        std::size_t count = 0;
        auto [p, ec] = std::from_chars(n.data(), n.data() + n.size(), count);
        if (ec != std::errc() || p != n.data() + n.size() || count == 0)
            throw ConfigError(0, "[io] data: expected synthetic:<count> with count >= 1");
    }
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(0, "cannot read config file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig& cfg) {
    std::ostringstream os;
    const auto& m = cfg.mapping;
    os << "[mapping]\n"
       << "d_e = " << m.d_e << "\nd_d = " << m.d_d << "\nmessage_length = " << m.message_length
       << "\nframes = " << m.frames << "\nheight = " << m.height << "\nwidth = " << m.width
       << "\nmessage_channels = " << m.message_channels << "\nmask_channels = " << m.mask_channels << "\n\n";
    const auto& t = cfg.train;
    auto b = [](bool x) { return x ? "true" : "false"; };
    auto d = [](double x) {
        char buf[32];
        return std::string(buf, std::to_chars(buf, buf + sizeof buf, x).ptr);
    };
    os << "[train]\n"
       << "steps = " << t.steps << "\nlr = " << d(t.lr) << "\nwarmup_steps = " << t.warmup_steps
       << "\nbatch_size = " << t.batch_size << "\nbeta_enc = " << d(t.beta_enc) << "\nbeta_dec_init = " << d(t.beta_dec_init)
       << "\nbeta_dec_final = " << d(t.beta_dec_final) << "\nbeta_dec_decay_steps = " << t.beta_dec_decay_steps
       << "\nalpha = " << d(t.alpha) << "\njnd_start_step = " << t.jnd_start_step << "\nmu = " << d(t.mu)
       << "\ns1 = " << t.s1 << "\ns2 = " << t.s2 << "\nseed = " << t.seed << "\nweight_decay = " << d(t.weight_decay)
       << "\nadam_beta1 = " << d(t.adam_beta1) << "\nadam_beta2 = " << d(t.adam_beta2) << "\nadam_eps = " << d(t.adam_eps)
       << "\ndistortions = " << b(t.distortions) << "\nmask_curriculum = " << b(t.mask_curriculum)
       << "\nfixed_payloads = " << b(t.fixed_payloads) << "\n\n";
    os << "[distort]\n";
    if (!t.categories.empty()) {
        os << "categories = ";
        for (std::size_t i = 0; i < t.categories.size(); ++i) os << (i ? "," : "") << category_name(t.categories[i]);
        os << "\n";
    }
    for (const auto& [name, params] : t.preset_overrides)
        for (const auto& [key, r] : params) {
            os << name << "." << key << " = " << d(r.lo);
            if (r.hi != r.lo) os << ":" << d(r.hi);
            os << "\n";
        }
    os << "\n[io]\n"
       << "out_dir = " << cfg.io.out_dir.string() << "\ndata = " << cfg.io.data
       << "\ncheckpoint_every = " << cfg.io.checkpoint_every << "\ndata_seed = " << cfg.io.data_seed << "\n";
    return os.str();
}

std::vector<VideoClip> load_training_data(const RunConfig& cfg) {
    if (cfg.io.data.rfind("synthetic:", 0) == 0) {
        const std::size_t n = std::stoul(cfg.io.data.substr(10));
        return synthetic_dataset(n, cfg.mapping.frames, cfg.mapping.height, cfg.mapping.width, cfg.io.data_seed);
    }
    return load_dataset(cfg.io.data);
}

}  // namespace dimwm
