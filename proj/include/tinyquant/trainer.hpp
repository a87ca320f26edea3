#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tinyquant/netgraph.hpp"
#include "tinyquant/tensor.hpp"

namespace tinyquant {

struct TrainConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
    double plateau_factor = 0.2;
    int plateau_patience = 5;
    int max_epochs = 50;
    int batch_size = 32;
    std::uint64_t seed = 0;
    double loss_clamp_eps = 1e-7;

    void validate() const;
};

// First/second moment estimates mirror the parameter layout; t counts
// completed optimizer steps.
template <typename T>
struct AdamStateT {
    ModelParamsT<T> m;
    ModelParamsT<T> v;
    std::int64_t t = 0;

    static AdamStateT zero(const ModelParamsT<T>& params) {
        return AdamStateT{zero_like(params), zero_like(params), 0};
    }
};
using AdamState = AdamStateT<float>;

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double learning_rate = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
};

std::string history_to_csv(const TrainHistory& history);

// Binary cross-entropy with p clamped into [eps, 1-eps] before evaluation.
double bce_loss(int y, double p, double eps = 1e-7);

// One Adam update over every parameter tensor; cfg supplies lr/beta/epsilon.
template <typename T>
void adam_step(ModelParamsT<T>& params, const ModelParamsT<T>& grads, AdamStateT<T>& state,
               const TrainConfig& cfg);

// Learning rate in effect for the epoch after `history`, derived from scratch:
// lr shrinks by plateau_factor whenever best val accuracy fails to strictly
// improve for plateau_patience consecutive epochs (window resets on
// reduction).
double plateau_lr(const TrainHistory& history, const TrainConfig& cfg);

// Mean loss and accuracy of params over a dataset (inference mode, no
// dropout). Prediction rule: p >= 0.5 -> class 1.
struct EvalStats {
    double loss = 0.0;
    double accuracy = 0.0;
};
EvalStats evaluate_float(const Network& net, const ModelParams& params,
                         const std::vector<Sample>& samples, double loss_clamp_eps = 1e-7);

struct TrainResult {
    ModelParams best_params;
    TrainHistory history;
    int best_epoch = 0;  // 1-based epoch whose snapshot is returned
    double best_val_accuracy = 0.0;
};

// Full training loop: seeded shuffles, mean-over-batch gradients, Adam,
// plateau LR scheduling, best-checkpoint retention (ties -> earlier epoch).
TrainResult train(const TrainConfig& cfg, const NetworkConfig& net_cfg,
                  const std::vector<Sample>& train_set, const std::vector<Sample>& val_set);

}  // namespace tinyquant
