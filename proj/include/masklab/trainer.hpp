#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "masklab/alignment.hpp"
#include "masklab/encoder.hpp"
#include "masklab/masking.hpp"
#include "masklab/vad.hpp"

namespace masklab {

struct TrainConfig {
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 4;
    int num_steps = 2000;
    LossScope loss_scope = LossScope::MaskedOnly;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Everything pre-training needs about one utterance.
struct TrainingUtterance {
    std::string utt_id;
    int speaker_id = 0;
    FeatureMatrix features;
    PhonemeAlignment alignment;
    SpeechLists lists;
};

struct AdamState {
    EncoderParams m;
    EncoderParams v;
    long step = 0;
};

AdamState init_adam(const EncoderConfig &cfg);

/// One bias-corrected Adam step. Parameters and moments are rounded to
/// float precision afterwards, matching what checkpoints store.
void adam_update(EncoderParams &params, const EncoderParams &grads, AdamState &state, const TrainConfig &cfg);

/// Masked-reconstruction pre-training. Step k draws its batch, masks and
/// dropout from seeds derived from (seed, k, utt_id) only, so a run resumed
/// from a checkpoint continues exactly as an uninterrupted one.
class Trainer {
public:
    Trainer(EncoderModel model, MaskPolicyConfig mask_cfg, TrainConfig train_cfg);
    Trainer(EncoderModel model, AdamState optimizer, MaskPolicyConfig mask_cfg, TrainConfig train_cfg);

    /// Runs one step and returns its loss.
    double step(const std::vector<TrainingUtterance> &corpus);

    /// Runs `steps` steps, appending losses.
    void run(const std::vector<TrainingUtterance> &corpus, int steps, std::vector<double> &losses);

    /// Masked examples the given step trains on.
    std::vector<TrainingExample> make_batch(const std::vector<TrainingUtterance> &corpus, long step_index) const;

    const EncoderModel &model() const { return model_; }
    const AdamState &optimizer() const { return adam_; }
    long steps_done() const { return adam_.step; }

private:
    EncoderModel model_;
    AdamState adam_;
    MaskPolicyConfig mask_cfg_;
    TrainConfig train_cfg_;
};

struct PretrainResult {
    EncoderModel model;
    AdamState optimizer;
    std::vector<double> losses;
};

/// Initializes an encoder from train_cfg.seed and trains num_steps steps.
PretrainResult pretrain(const std::vector<TrainingUtterance> &corpus, const MaskPolicyConfig &mask_cfg,
                        const EncoderConfig &enc_cfg, const TrainConfig &train_cfg);

void write_loss_curve(const std::vector<double> &losses, const std::filesystem::path &path, long first_step = 1);

constexpr int kCheckpointFormatVersion = 1;

struct LoadedCheckpoint {
    EncoderModel model;
    std::optional<AdamState> optimizer;
    std::map<std::string, std::string> manifest;
};

/// Single file: UTF-8 key=value manifest, a '\0' sentinel, then every
/// tensor as little-endian float32 in manifest order.
void save_checkpoint(const std::filesystem::path &path, const EncoderModel &model, const AdamState *optimizer,
                     const std::map<std::string, std::string> &extra = {});

LoadedCheckpoint load_checkpoint(const std::filesystem::path &path);

} // namespace masklab
