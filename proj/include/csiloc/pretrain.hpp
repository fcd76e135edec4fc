// Spatiotemporal pretraining: temporal NT-Xent, spatial triplet, floor
// regression, jointly optimized with unit weights.
#pragma once

#include "csiloc/graph.hpp"
#include "csiloc/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace csiloc {

struct AnchorPositivePair {
    int anchor = 0;     // indices into the graph list
    int positive = 0;
};

inline constexpr double kPairWindowSeconds = 6.0;

// Per anchor, positive = nearest-in-time same-user graph with 0 < dt <= 6 s.
std::vector<AnchorPositivePair> mine_pairs(const std::vector<EventGraph>& graphs);

struct TripletTargets {
    bool has_positive = false;
    bool has_negative = false;
    double pos[3] = {0, 0, 0};   // (x, y, floor index)
    double neg[3] = {0, 0, 0};
};

// Positive = strongest-RSSI reporting AP; negative uniform among APs 5-20 dBm
// weaker, fallback weakest; tie-break lowest ap_id.
TripletTargets select_triplet_targets(const LocalizationEvent& event, const Scene& scene,
                                      std::mt19937_64& rng);

struct PretrainConfig {
    double temperature = 0.5;
    double margin = 3.0;
    int epochs = 150;
    int batch_size = 256;
    double learning_rate = 0.01;
    int checkpoint_every = 10;
    std::string checkpoint_dir;   // empty = no checkpoints written
    uint64_t seed = 11;
};

// Loss terms as tape nodes; used by the training loop and by gradient tests.
Tape::Id nt_xent(Tape& tape, Tape::Id z_batch, double temperature);
Tape::Id triplet_loss(Tape& tape, Tape::Id d_xyz, const Mat& r_p, const Mat& r_n, double margin);
Tape::Id floor_loss(Tape& tape, Tape::Id d_floor, const Mat& r_p_floor);

struct EpochLosses {
    double temporal = 0, spatial = 0, floor = 0, total = 0;
};

struct PretrainResult {
    ModelParams model;
    std::vector<EpochLosses> curve;
};

struct PretrainSample {
    const EventGraph* graph = nullptr;
    TripletTargets targets;
};

PretrainResult pretrain_run(const ModelParams& init, const std::vector<PretrainSample>& samples,
                            const std::vector<AnchorPositivePair>& pairs,
                            const PretrainConfig& config);

// Greedy RSSI-similarity downsampling of an unlabeled stream; returns kept
// event indices.
std::vector<int> downsample_unlabeled(const std::vector<LocalizationEvent>& events,
                                      const Scene& scene, double threshold = 0.995);

void write_loss_curve_csv(const std::vector<EpochLosses>& curve, const std::string& path);

}  // namespace csiloc
