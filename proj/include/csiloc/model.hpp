// GCN encoder, projection head, MLP head, Adam, and checkpoint I/O.
#pragma once

#include "csiloc/graph.hpp"
#include "csiloc/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace csiloc {

struct ModelConfig {
    int input_width = kNodeWidth;     // 250
    int hidden_width = 256;
    int gcn_layers = 4;
    bool gcn_bias = false;
    int projection_dim = 128;
    int head_output = 5;              // (x, y, floor, raw_conf_x, raw_conf_y)
    bool readout_all_layers = true;   // final-layer-only variant for ablation
    uint64_t seed = 7;
};

struct Param {
    std::string name;
    Mat value;
    Mat grad;
};

struct ModelParams {
    ModelConfig config;
    std::vector<Param> params;   // fixed enumeration order

    Param& find(const std::string& name);
    const Param& find(const std::string& name) const;
    void zero_grads();
    bool all_finite() const;
    double max_abs_difference(const ModelParams& other) const;
};

ModelParams init_model(const ModelConfig& config);

// A batch of graphs: concatenated node features, block-diagonal normalized
// adjacency (self-loops included), per-graph node ranges.
struct GraphBatch {
    Mat node_features;                        // total_nodes x input_width
    SpMat adjacency;                          // symmetrically normalized A + I
    std::vector<std::pair<int, int>> ranges;  // per-graph [start, end)
    int size() const { return static_cast<int>(ranges.size()); }
};

GraphBatch make_batch(const std::vector<const EventGraph*>& graphs);

struct ForwardNodes {
    Tape::Id embedding = -1;   // B x hidden_width
};

// READOUT(batch) as a tape node; params enter the tape as leaves so
// gradients flow back into `model` after Tape::backward.
ForwardNodes gcn_forward(Tape& tape, ModelParams& model, const GraphBatch& batch,
                         std::map<std::string, Tape::Id>* leaf_ids = nullptr);

Tape::Id project(Tape& tape, const std::map<std::string, Tape::Id>& leaves, Tape::Id embedding);
Tape::Id head(Tape& tape, const std::map<std::string, Tape::Id>& leaves, Tape::Id embedding);

// Copies tape leaf gradients back into parameter grad buffers.
void collect_grads(Tape& tape, ModelParams& model, const std::map<std::string, Tape::Id>& leaves);

// Convenience inference path (no tape bookkeeping kept).
Mat forward_head(ModelParams& model, const GraphBatch& batch);        // B x 5
Mat forward_projection(ModelParams& model, const GraphBatch& batch);  // B x 128

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    int64_t step_count = 0;
    std::vector<Mat> m, v;   // parallel to ModelParams::params
};

// lr_map maps a parameter-name prefix to a learning rate; longest matching
// prefix wins; a negative rate freezes the group.
void optimizer_step(ModelParams& model, AdamState& state,
                    const std::map<std::string, double>& lr_map, double default_lr);

void save_checkpoint(const ModelParams& model, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace csiloc
