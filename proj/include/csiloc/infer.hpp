// Online-phase ensemble fusion and event-level prediction.
#pragma once

#include "csiloc/finetune.hpp"
#include "csiloc/graph.hpp"
#include "csiloc/model.hpp"

#include <vector>

namespace csiloc {

struct EnsemblePrediction {
    double x = 0, y = 0;
    int floor = 0;
    double sigma_x = 1, sigma_y = 1;
    std::vector<Prediction> member_outputs;
};

struct FuseOptions {
    bool inverse_variance = false;   // ablation: 1/sigma^2 weights
    int min_floor = 0, max_floor = 0;
};

// Coordinates weighted by 1/sigma, floor = round(mean), sigma = mean.
EnsemblePrediction fuse(const std::vector<Prediction>& members, const FuseOptions& options = {});

struct Ensemble {
    std::vector<ModelParams> members;
    const Scene* scene = nullptr;
    SceneBounds bounds;
    FuseOptions fuse_options;
};

// encode_event -> normalize_metadata -> per-member forward -> fuse.
// Throws ConfigError for events with fewer than 3 distinct APs.
EnsemblePrediction predict(Ensemble& ensemble, const LocalizationEvent& event);

// Batched variant over pre-encoded, pre-normalized graphs.
std::vector<EnsemblePrediction> predict_graphs(std::vector<ModelParams>& members,
                                               const std::vector<const EventGraph*>& graphs,
                                               const FuseOptions& options = {});

}  // namespace csiloc
