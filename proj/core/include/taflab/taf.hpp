#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "taflab/attack.hpp"
#include "taflab/checkpoint.hpp"
#include "taflab/data.hpp"
#include "taflab/nn.hpp"

// Training loops: plain supervised baseline training on the clean
// normalization path, and the adversarial fine-tune that mixes the clean
// cross-entropy with the cross-entropy on temporally attacked clips routed
// through the adversarial path. Inference always uses the clean path;
// evaluate() exposes no way to select the other one.

namespace taflab {

struct LrSchedule {
    float lr = 0.05f;
    float decay_factor = 10.0f;    // divide by this once decay_epoch is reached
    std::size_t decay_epoch = 10;  // local epoch index at which the decay applies

    float at(std::size_t local_epoch) const {
        return local_epoch >= decay_epoch ? lr / decay_factor : lr;
    }
};

struct TafConfig {
    float alpha = 0.7f;  // weight on the clean loss term
    std::size_t epochs = 15;
    LrSchedule lr{0.01f, 10.0f, 10};
    std::size_t batch_size = 32;
    AttackConfig attack;
    std::uint64_t seed = 0;

    void validate() const {
        if (alpha < 0.0f || alpha > 1.0f) throw ConfigError("taf: alpha must lie in [0,1]");
        if (epochs == 0) throw ConfigError("taf: need at least one epoch");
        if (batch_size == 0) throw ConfigError("taf: batch size must be >= 1");
    }
};

struct MetricsRecord {
    std::size_t epoch = 0;
    std::string split;  // "train" or "val"
    double top1 = 0, top5 = 0;
    double clean_loss = 0, adv_loss = 0;
    double cam_entropy = 0;

    std::string csv_line() const;
};

inline constexpr const char* kMetricsHeader = "epoch,split,top1,top5,clean_loss,adv_loss,cam_entropy";

// Per-step decomposition of the fine-tune objective, logged for verification.
struct StepLoss {
    double total = 0, clean = 0, adv = 0;
};

struct TrainResult {
    std::vector<MetricsRecord> metrics;
    std::vector<StepLoss> step_losses;  // empty for baseline training
};

// Epoch indices are global (continuing a checkpoint keeps counting), so a
// continuation and a fine-tune from the same checkpoint draw identical
// shuffles. The learning rate schedule indexes the local epoch.
std::uint64_t epoch_shuffle_seed(std::uint64_t run_seed, std::size_t global_epoch);

// Clean-path supervised training for `epochs` epochs starting at start_epoch.
TrainResult train_baseline(VideoModel& model, Sgd& opt, const Dataset& train, const Dataset& val,
                           std::size_t epochs, const LrSchedule& sched, std::size_t batch_size,
                           std::uint64_t seed, std::size_t start_epoch = 0);

// Eq-style mixed objective: per batch, total = alpha * ce(clean path, x, y) +
// (1 - alpha) * ce(adversarial path, attacked x, y). Excluded clips appear
// only in the clean term; alpha = 1 skips the attack entirely and reduces to
// clean fine-tuning. Copies the clean normalization state into the
// adversarial path before the first step.
TrainResult finetune_taf(VideoModel& model, Sgd& opt, const Dataset& train, const Dataset& val,
                         const TafConfig& cfg, std::size_t start_epoch);

// Clean-path, eval-mode, single-view metrics; optionally on a corrupted copy
// of the split.
MetricsRecord evaluate(VideoModel& model, const Dataset& split,
                       const std::optional<CorruptionSpec>& corruption = std::nullopt,
                       std::size_t batch_size = 64);

// Fixed seeded probe subset of a split, used for the attention-spread metric.
std::vector<std::size_t> probe_indices(std::size_t split_size, std::size_t count,
                                       std::uint64_t seed);

// Mean entropy of the normalized per-frame CAM mass over the probe clips.
double probe_entropy(VideoModel& model, const Dataset& split,
                     const std::vector<std::size_t>& probe);

struct AblationCell {
    std::string axis;   // grid dimension, e.g. "alpha"
    std::string label;  // cell value, e.g. "0.7"
    TafConfig cfg;
};

struct AblationRow {
    std::string axis, label;
    double top1 = 0, top5 = 0;
};

// Sweep axes: alpha, (epsilon, steps), frames_n, inclusion policy, loss kind.
std::vector<AblationCell> default_ablation_grid(const TafConfig& base);

// One fine-tune from the pretrained checkpoint plus one evaluation per cell.
std::vector<AblationRow> ablation_sweep(const Checkpoint& pretrained, const Dataset& train,
                                        const Dataset& val, const std::vector<AblationCell>& cells);

}  // namespace taflab
