#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dimwm/distort.hpp"
#include "dimwm/model.hpp"

namespace dimwm {

struct TrainConfig {
    std::size_t steps = 3000;
    double lr = 2e-4;
    std::size_t warmup_steps = 200;
    std::size_t batch_size = 4;
    double beta_enc = 1.0;
    double beta_dec_init = 20.0;
    double beta_dec_final = 0.2;
    std::size_t beta_dec_decay_steps = 1000;
    double alpha = 0.5;
    std::size_t jnd_start_step = 1000;
    double mu = 1.0;
    std::size_t s1 = 100;  // full masks only before s1
    std::size_t s2 = 200;  // distortions from s2
    std::uint64_t seed = 0;
    double weight_decay = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Off: the attack stage is skipped at every step.
    bool distortions = true;
    /// Off: full masks at every step.
    bool mask_curriculum = true;
    /// On: each clip keeps one message and mask for the whole run (overfit runs).
    bool fixed_payloads = false;
    /// Enabled distortion categories (empty: all).
    std::vector<Category> categories;
    /// preset name -> parameter -> range, replacing the built-in values.
    std::map<std::string, std::map<std::string, ParamRange>> preset_overrides;

    static TrainConfig full_scale();
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

enum class TrainPhase { FullMask, AllMasks, Distorted };
std::string train_phase_name(TrainPhase p);
TrainPhase parse_train_phase(const std::string& name);

struct LossReport {
    std::size_t step = 0;
    double l_enc = 0, l_msg = 0, l_mask = 0, l_dec = 0, l_total = 0;
    double beta_enc = 0, beta_dec = 0, alpha = 0;
    double lr = 0;
    TrainPhase phase = TrainPhase::FullMask;
    std::string mask_kind;
    std::string attack;  // empty when no distortion ran
    double bit_accuracy = 0;

    bool operator==(const LossReport&) const = default;
};

double beta_dec_at(const TrainConfig& cfg, std::size_t step);
double learning_rate_at(const TrainConfig& cfg, std::size_t step);

struct CurriculumDraw {
    MaskKind kind = MaskKind::Full;
    bool distortions = false;
    TrainPhase phase = TrainPhase::FullMask;
};

CurriculumDraw curriculum_mask(const TrainConfig& cfg, std::size_t step, std::uint64_t seed);

/// Ground-truth payloads for one sample.
struct SamplePayload {
    BinaryMessage message;
    MaskPayload mask;                 // what the encoder is given (per regime)
    SpatioTemporalMask truth;         // (T, H, W, C_p) mask the predictor must recover
};

/// Message, encoder mask operand and predictor target of one sample.
SamplePayload draw_payload(const MappingConfig& cfg, MaskKind kind, std::uint64_t seed);

struct TrainingBatch {
    Tensor<float> host;  // (N, 3, T, H, W)
    Tensor<float> bits;  // (N, L)
    std::vector<SamplePayload> payloads;
    std::vector<std::size_t> clip_index;
    CurriculumDraw draw;
};

TrainingBatch make_batch(const MappingConfig& cfg, const TrainConfig& tcfg, const std::vector<VideoClip>& data,
                         std::size_t step);

struct AdamState {
    std::size_t t = 0;
    std::vector<Tensor<float>> m, v;
};

struct Checkpoint {
    ModelBundle<float> bundle;
    AdamState optimizer;
    std::size_t step = 0;
    TrainPhase phase = TrainPhase::FullMask;
    std::optional<TrainConfig> train;
};

/// One optimiser update on `bundle`; returns the losses of the forward pass.
LossReport train_step(ModelBundle<float>& bundle, AdamState& opt, const TrainConfig& tcfg, const TrainingBatch& batch,
                      std::size_t step);

struct FitOptions {
    std::optional<std::filesystem::path> out_dir;  // checkpoints and log
    std::size_t checkpoint_every = 0;
    std::ostream* log = nullptr;                    // NDJSON records, in addition to out_dir/train.log
    std::function<void(const LossReport&)> on_step;
};

Checkpoint fit(const MappingConfig& cfg, const TrainConfig& tcfg, const std::vector<VideoClip>& data,
               const FitOptions& options = {}, std::optional<Checkpoint> resume = std::nullopt);

/// Freshly initialised parameters and zeroed optimiser state.
Checkpoint initial_checkpoint(const MappingConfig& cfg, const TrainConfig& tcfg);

std::string loss_record_json(const LossReport& r);
LossReport parse_loss_record(const std::string& line);

/// Deterministic synthetic training clips.
std::vector<VideoClip> synthetic_dataset(std::size_t count, std::size_t frames, std::size_t height, std::size_t width,
                                         std::uint64_t seed);

}  // namespace dimwm
