// Evaluation metrics, the k-NN RSSI baseline, and experiment protocols.
#pragma once

#include "csiloc/infer.hpp"
#include "csiloc/pretrain.hpp"
#include "csiloc/sim.hpp"

#include <string>
#include <vector>

namespace csiloc {

// sqrt((x - xh)^2 + (y - yh)^2) + p * |fh - f|
double score(const Position& pred, const Position& truth, double p = 15.0);

struct MetricReport {
    double median_score = 0, p90_score = 0;
    double median_planar = 0, p90_planar = 0;
    double mae = 0;                  // planar MAE, meters
    double floor_accuracy = 0;
    double pearson_x = 0, pearson_y = 0;
    int n = 0;
};

struct EvalSample {
    Position pred;
    Position truth;
    double sigma_x = 0, sigma_y = 0;
};

MetricReport summarize(const std::vector<EvalSample>& samples, double penalty = 15.0);

// Linear-interpolation (inclusive) percentile over a copy of the samples.
double percentile(std::vector<double> values, double q);
double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct KnnBaseline {
    std::vector<std::vector<double>> fingerprints;
    std::vector<Position> labels;
    int k = 5;

    void fit(const std::vector<LocalizationEvent>& train, const Scene& scene);
    Position predict(const std::vector<double>& query) const;
};

struct ArmReport {
    std::string arm;
    double parameter = 0;   // ratio, epoch count, or fold index
    MetricReport report;
};

enum class Protocol { label_ratio_sweep, epoch_sweep, device_holdout, temporal_holdout };

struct ProtocolConfig {
    std::vector<double> label_ratios = {0.10, 0.20, 0.40, 0.60, 0.80, 1.00};
    std::vector<int> pretrain_epochs = {0, 10, 30, 60, 100, 150};
    double temporal_split = 0.5;   // train on earlier fraction, test on the rest
};

// Everything a protocol run needs: the labeled pool with per-event device ids
// and timestamps, an optional pretrained encoder, and the training configs.
struct ProtocolDeps {
    const Scene* scene = nullptr;
    std::vector<const EventGraph*> labeled_graphs;     // chronological order
    std::vector<std::string> device_ids;               // parallel to labeled_graphs
    const ModelParams* pretrained = nullptr;           // for label_ratio_sweep
    // For epoch_sweep: pretraining inputs re-run per arm.
    const std::vector<PretrainSample>* pretrain_samples = nullptr;
    const std::vector<AnchorPositivePair>* pretrain_pairs = nullptr;
    ModelConfig arch;
    const PretrainConfig* pretrain_config = nullptr;
    FinetuneConfig finetune_config;
    double penalty = 15.0;
    uint64_t seed = 33;
};

std::vector<ArmReport> run_protocol(Protocol protocol, const ProtocolConfig& config,
                                    ProtocolDeps& deps);

void write_reports_csv(const std::vector<ArmReport>& reports, const std::string& path);

}  // namespace csiloc
