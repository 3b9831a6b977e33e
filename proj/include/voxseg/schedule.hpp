#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "voxseg/common.hpp"

// Training hyperparameters and the warm-restart learning-rate schedule:
// step decay (÷ lr_decay_factor every decay_every epochs) inside a period,
// with a hard reset to base_lr at every period boundary.

namespace voxseg {

enum class LossMode { combined, dice_only };

inline std::string loss_mode_name(LossMode m) {
    return m == LossMode::combined ? "combined" : "dice";
}

struct TrainConfig {
    int batch_size = 8;
    int patch_size = 32;  // cubic patch edge, must be divisible by 16
    double base_lr = 0.01;
    double lr_decay_factor = 10.0;
    int decay_every = 40;     // epochs between in-period decays
    int period_length = 200;  // epochs per warm-restart period
    int num_periods = 50;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double lambda_dice = 1.0;
    std::uint64_t seed = 1;
    int steps_per_epoch = 50;  // one "epoch" = this many sampled batches
    LossMode loss_mode = LossMode::combined;
    int checkpoint_every = 0;  // epochs between periodic checkpoints; 0 = final only
    bool foreground_bias = true;
    bool normalize = true;

    void validate() const {
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (patch_size < 16 || patch_size % 16 != 0)
            throw ConfigError("train: patch_size must be a positive multiple of 16, got " +
                              std::to_string(patch_size));
        if (!(base_lr > 0.0)) throw ConfigError("train: base_lr must be > 0");
        if (!(lr_decay_factor > 0.0)) throw ConfigError("train: lr_decay_factor must be > 0");
        if (decay_every < 1) throw ConfigError("train: decay_every must be >= 1");
        if (period_length < 1) throw ConfigError("train: period_length must be >= 1");
        if (period_length % decay_every != 0)
            throw ConfigError("train: decay_every (" + std::to_string(decay_every) +
                              ") must divide period_length (" + std::to_string(period_length) +
                              ")");
        if (num_periods < 1) throw ConfigError("train: num_periods must be >= 1");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ConfigError("train: momentum must be in [0, 1)");
        if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
        if (lambda_dice < 0.0) throw ConfigError("train: lambda_dice must be >= 0");
        if (steps_per_epoch < 1) throw ConfigError("train: steps_per_epoch must be >= 1");
        if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
    }

    int total_epochs() const { return num_periods * period_length; }
};

// lr(e) = base_lr / decay_factor^floor((e mod period_length) / decay_every).
// With defaults: 0.01 at a period start, ÷10 every 40 epochs, reset to 0.01
// when the next 200-epoch period begins.
inline double warm_restart_lr(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ValidationError("warm_restart_lr: epoch must be >= 0");
    const int in_period = epoch % cfg.period_length;
    const int decays = in_period / cfg.decay_every;
    return cfg.base_lr / std::pow(cfg.lr_decay_factor, static_cast<double>(decays));
}

}  // namespace voxseg
