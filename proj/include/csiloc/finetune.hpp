// Confidence-aware supervised fine-tuning of Z independently seeded models.
#pragma once

#include "csiloc/model.hpp"

#include <string>
#include <vector>

namespace csiloc {

struct Prediction {
    double x = 0, y = 0;
    double floor = 0;          // continuous, pre-rounding
    double sigma_x = 1, sigma_y = 1;
};

struct FinetuneConfig {
    int ensemble_size = 5;
    int epochs = 100;
    double lr_frozen_part = 0.001;   // GCN layers 1-3
    double lr_rest = 0.01;           // GCN layer 4 + MLP head
    int batch_size = 64;
    int plateau_patience = 10;
    double plateau_factor = 0.5;
    double min_lr = 1e-5;
    bool standard_nll = false;       // ablation: log(sigma) instead of 0.5*log(sigma)
    double ap_dropout = 0.25;        // per-AP drop probability during training
    uint64_t base_seed = 21;
    std::string checkpoint_dir;
};

// Confidence loss per axis: 0.5*log(sigma) + r^2 / (2 sigma^2), with
// sigma = exp(raw). `pred_axis` is B x 1 coordinates, `raw_sigma` B x 1.
Tape::Id kl_confidence_loss(Tape& tape, Tape::Id pred_axis, Tape::Id raw_sigma,
                            const Mat& truth_axis, bool standard_nll = false);

// Sum of the two per-axis confidence losses plus the floor L1 term.
// `d` is the B x 5 head output; truth columns are (x, y, floor).
Tape::Id finetune_loss(Tape& tape, Tape::Id d, const Mat& truth, bool standard_nll = false);

struct LabeledGraphSet {
    std::vector<const EventGraph*> train, val, test;
};

struct FinetuneLogRow {
    int epoch = 0;
    double train_loss = 0;
    double val_score = 0;
    double lr_scale = 1.0;
};

struct FinetuneResult {
    std::vector<ModelParams> members;
    std::vector<std::vector<FinetuneLogRow>> logs;   // per member
};

FinetuneResult finetune_run(const ModelParams& pretrained, const LabeledGraphSet& data,
                            const FinetuneConfig& config);

// Random init, single learning rate 0.001; baseline arm.
ModelParams train_from_scratch(const LabeledGraphSet& data, const ModelConfig& arch,
                               const FinetuneConfig& config, uint64_t seed);

// Single-model prediction from a B x 5 head output row.
Prediction prediction_from_row(const double* d_row);

}  // namespace csiloc
