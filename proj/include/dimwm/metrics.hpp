#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dimwm/distort.hpp"
#include "dimwm/model.hpp"

namespace dimwm {

/// Fraction of positions where (pred > 0.5) equals the truth bit.
double bit_accuracy(const std::vector<float>& pred, const BinaryMessage& truth);

/// |bin(pred) & truth| / |bin(pred) | truth| over every cell; 1 when both are empty.
/// pred has the mask's (T, H, W, C) shape.
double iou(const Tensor<float>& pred, const SpatioTemporalMask& truth, float threshold = 0.5f);
double iou(const SpatioTemporalMask& a, const SpatioTemporalMask& b);

/// Mean over codewords present in `truth` of the IoU between the cells whose
/// binarised channel vector equals that codeword in pred and in truth.
/// Empty truth gives nullopt.
std::optional<double> miou(const Tensor<float>& pred, const SpatioTemporalMask& truth, const FrameCodebook& codebook);

/// For each observed frame, the original frame index whose codeword is
/// nearest (Hamming, ties to the lowest index) to the code read from the
/// frame's predicted region; -1 when that region is empty.
std::vector<int> recover_order(const Tensor<float>& pred, const FrameCodebook& codebook);

/// 10 log10(1 / MSE) on [0, 1] data, capped at 99 dB.
double psnr(const VideoClip& a, const VideoClip& b);
double psnr(const std::vector<float>& a, const std::vector<float>& b);
constexpr double kPsnrCap = 99.0;

/// Gaussian-window SSIM (11 x 11, sigma 1.5, reflect padding) per frame and
/// channel, averaged.
double ssim(const VideoClip& a, const VideoClip& b);

/// Mask-ratio bin in [0, 9]: floor(ratio * 10), with ratio 1 in the last bin.
std::size_t ratio_bin(double ratio);

struct DistortionResult {
    std::string name;
    std::string category;  // "clean" or a Category name
    bool available = true;
    std::string note;
    std::size_t clips = 0;          // clips that contributed bits
    std::size_t excluded = 0;       // clips with an empty predicted region
    double bit_accuracy = 0;
    double iou = 0;
    std::optional<double> miou;
};

struct BinResult {
    std::size_t count = 0;    // clips scored for IoU
    std::size_t decoded = 0;  // clips that contributed bits
    double bit_accuracy = 0;
    double iou = 0;
};

struct CategorySummary {
    std::string category;
    bool available = false;
    double bit_accuracy = 0;
    double iou = 0;
    std::optional<double> miou;
    std::vector<std::string> members;
};

struct EvalReport {
    MappingConfig mapping;
    std::size_t clip_count = 0;
    std::uint64_t seed = 0;
    bool truth_mask = false;
    double psnr = 0;
    double ssim = 0;
    DistortionResult clean;
    std::vector<DistortionResult> distortions;
    std::vector<CategorySummary> categories;
    /// Per distortion (including "clean"), ten mask-ratio bins.
    std::map<std::string, std::array<BinResult, 10>> bins;
    std::vector<std::string> footnotes;
};

struct EvalOptions {
    std::uint64_t seed = 0;
    /// Decode from the ground-truth region instead of the predicted mask.
    bool truth_mask = false;
    /// Subset of evaluation presets by name (empty: all).
    std::vector<std::string> presets;
    /// Mask kinds drawn uniformly per clip.
    std::vector<MaskKind> mask_kinds = {MaskKind::Full, MaskKind::Rectangular, MaskKind::Irregular,
                                        MaskKind::Segmented};
};

EvalReport evaluate(const ModelBundle<float>& bundle, const std::vector<VideoClip>& dataset,
                    const EvalOptions& options = {});

std::string report_to_text(const EvalReport& r);
/// Tables: distortion,category,available,clips,bit_accuracy,iou,miou
std::string distortions_csv(const EvalReport& r);
std::string categories_csv(const EvalReport& r);
/// Table: distortion,bin,lo,hi,count,decoded,bit_accuracy,iou
std::string bins_csv(const EvalReport& r);

}  // namespace dimwm
