#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dimwm/trainer.hpp"

namespace dimwm {

namespace fs = std::filesystem;

// RawTensorFile: "DIMT", version byte, rank byte, dtype byte, rank x u32 LE
// dims, then the payload (f32 LE or u8).
enum class DType : std::uint8_t { F32 = 0, U8 = 1 };

struct RawTensor {
    DType dtype = DType::F32;
    Shape shape;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;
};

std::vector<std::uint8_t> encode_raw_tensor(const RawTensor& t);
RawTensor decode_raw_tensor(const std::vector<std::uint8_t>& bytes);
void write_raw_tensor(const fs::path& path, const RawTensor& t);
RawTensor read_raw_tensor(const fs::path& path);

RawTensor raw_from(const Tensor<float>& t);
RawTensor raw_from(const SpatioTemporalMask& m);

/// A .dimt file of shape (T, H, W, 3), or a directory of binary PPM frames
/// taken in lexicographic order.
VideoClip load_clip(const fs::path& path);
void save_clip(const fs::path& path, const VideoClip& clip);
void save_clip_frames(const fs::path& dir, const VideoClip& clip);

/// (T, H, W, C) u8 tensor; (H, W, C) loads as a single frame.
SpatioTemporalMask load_mask(const fs::path& path);
void save_mask(const fs::path& path, const SpatioTemporalMask& mask);

/// Every clip in a directory: .dimt files and frame subdirectories, sorted by name.
std::vector<VideoClip> load_dataset(const fs::path& dir);

// Checkpoint: "DIMC", version byte, u32 LE header length, JSON header, then
// the f32 LE tensors at the offsets listed in the header.
void save_checkpoint(const fs::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const fs::path& path);

struct IoConfig {
    fs::path out_dir = "run";
    /// Directory of clips, or "synthetic:<count>".
    std::string data = "synthetic:4";
    std::size_t checkpoint_every = 0;
    std::uint64_t data_seed = 0;
};

struct RunConfig {
    MappingConfig mapping;
    TrainConfig train;
    IoConfig io;
};

/// Sectioned key = value text ([mapping], [train], [distort], [io]); '#'
/// starts a comment. Throws ConfigError with the offending line.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const fs::path& path);
std::string format_run_config(const RunConfig& cfg);

/// Clips named by io.data.
std::vector<VideoClip> load_training_data(const RunConfig& cfg);

}  // namespace dimwm
