#include "csiloc/finetune.hpp"

#include "csiloc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace csiloc {

Tape::Id kl_confidence_loss(Tape& tape, Tape::Id pred_axis, Tape::Id raw_sigma,
                            const Mat& truth_axis, bool standard_nll) {
    // sigma = exp(raw); c1*log(sigma) + r^2 / (2 sigma^2)
    // with c1 = 0.5 as printed, or 1.0 for the standard Gaussian NLL ablation.
    const double c1 = standard_nll ? 1.0 : 0.5;
    Tape::Id truth = tape.leaf(truth_axis, false);
    Tape::Id residual_sq = tape.square(tape.sub(truth, pred_axis));
    Tape::Id log_term = tape.scale(raw_sigma, c1);   // log(exp(raw)) = raw
    Tape::Id inv_two_sigma_sq = tape.scale(tape.exp(tape.scale(raw_sigma, -2.0)), 0.5);
    return tape.mean_all(tape.add(log_term, tape.mul(residual_sq, inv_two_sigma_sq)));
}

Tape::Id finetune_loss(Tape& tape, Tape::Id d, const Mat& truth, bool standard_nll) {
    if (truth.cols != 3) throw std::invalid_argument("finetune_loss: truth must be B x 3");
    Mat tx(truth.rows, 1), ty(truth.rows, 1), tf(truth.rows, 1);
    for (int r = 0; r < truth.rows; ++r) {
        tx.at(r, 0) = truth.at(r, 0);
        ty.at(r, 0) = truth.at(r, 1);
        tf.at(r, 0) = truth.at(r, 2);
    }
    Tape::Id loss_x = kl_confidence_loss(tape, tape.slice_cols(d, 0, 1),
                                         tape.slice_cols(d, 3, 1), tx, standard_nll);
    Tape::Id loss_y = kl_confidence_loss(tape, tape.slice_cols(d, 1, 1),
                                         tape.slice_cols(d, 4, 1), ty, standard_nll);
    Tape::Id floor_l1 = tape.mean_all(
        tape.abs(tape.sub(tape.leaf(tf, false), tape.slice_cols(d, 2, 1))));
    return tape.add(tape.add(loss_x, loss_y), floor_l1);
}

Prediction prediction_from_row(const double* d) {
    Prediction p;
    p.x = d[0];
    p.y = d[1];
    p.floor = d[2];
    p.sigma_x = std::exp(d[3]);
    p.sigma_y = std::exp(d[4]);
    return p;
}

namespace {

Mat truth_matrix(const std::vector<const EventGraph*>& graphs) {
    Mat t(static_cast<int>(graphs.size()), 3);
    for (size_t i = 0; i < graphs.size(); ++i) {
        if (!graphs[i]->truth)
            throw std::invalid_argument("fine-tuning requires labeled graphs");
        t.at(static_cast<int>(i), 0) = graphs[i]->truth->x;
        t.at(static_cast<int>(i), 1) = graphs[i]->truth->y;
        t.at(static_cast<int>(i), 2) = graphs[i]->truth->floor;
    }
    return t;
}

double validation_score(ModelParams& model, const std::vector<const EventGraph*>& val) {
    if (val.empty()) return 0;
    std::vector<double> scores;
    constexpr size_t kChunk = 256;
    for (size_t start = 0; start < val.size(); start += kChunk) {
        std::vector<const EventGraph*> chunk(
            val.begin() + start,
            val.begin() + std::min(val.size(), start + kChunk));
        Mat d = forward_head(model, make_batch(chunk));
        for (int r = 0; r < d.rows; ++r) {
            const Position pred{d.at(r, 0), d.at(r, 1),
                                static_cast<int>(std::floor(d.at(r, 2) + 0.5))};
            scores.push_back(score(pred, *chunk[r]->truth));
        }
    }
    return percentile(scores, 0.5);
}

struct TrainLoopConfig {
    int epochs = 100;
    int batch_size = 64;
    std::map<std::string, double> lr_map;
    double default_lr = 0.001;
    int plateau_patience = 10;
    double plateau_factor = 0.5;
    double min_lr = 1e-5;
    bool standard_nll = false;
    double ap_dropout = 0.0;
    uint64_t seed = 0;
};

// Training-time augmentation: remove whole APs from a graph, the same kind
// of variation the report dropout in the capture produces naturally. Keeps
// at least three APs so the position stays identifiable.
EventGraph drop_aps(const EventGraph& g, std::mt19937_64& rng, double p) {
    std::vector<int> aps;
    for (const NodeTag& t : g.node_kinds)
        if (std::find(aps.begin(), aps.end(), t.ap_id) == aps.end())
            aps.push_back(t.ap_id);

    std::bernoulli_distribution flip(p);
    std::vector<char> dropped(aps.size(), 0);
    size_t kept = aps.size();
    for (size_t a = 0; a < aps.size() && kept > 3; ++a)
        if (flip(rng)) {
            dropped[a] = 1;
            --kept;
        }
    if (kept == aps.size()) return g;

    auto is_dropped = [&](int ap_id) {
        for (size_t a = 0; a < aps.size(); ++a)
            if (aps[a] == ap_id) return dropped[a] != 0;
        return false;
    };

    EventGraph out;
    out.truth = g.truth;
    out.user_id = g.user_id;
    out.timestamp = g.timestamp;
    out.metadata_normalized = g.metadata_normalized;
    std::vector<int> remap(g.num_nodes, -1);
    for (int n = 0; n < g.num_nodes; ++n) {
        if (is_dropped(g.node_kinds[n].ap_id)) continue;
        remap[n] = out.num_nodes++;
        out.node_kinds.push_back(g.node_kinds[n]);
        const float* r = g.row(n);
        out.node_features.insert(out.node_features.end(), r, r + kNodeWidth);
    }
    for (const auto& [i, j] : g.edges)
        if (remap[i] >= 0 && remap[j] >= 0) out.edges.emplace_back(remap[i], remap[j]);
    return out;
}

std::vector<FinetuneLogRow> train_loop(ModelParams& model, const LabeledGraphSet& data,
                                       const TrainLoopConfig& cfg) {
    if (data.train.empty()) throw std::invalid_argument("empty labeled training set");

    AdamState adam;
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<FinetuneLogRow> log;
    double lr_scale = 1.0;
    double best_val = 1e300;
    int stall = 0;
    ModelParams best_model = model;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        int batches = 0;

        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<const EventGraph*> graphs;
            std::vector<EventGraph> augmented;
            augmented.reserve(end - start);
            for (size_t i = start; i < end; ++i) {
                const EventGraph* g = data.train[order[i]];
                if (cfg.ap_dropout > 0) {
                    augmented.push_back(drop_aps(*g, rng, cfg.ap_dropout));
                    g = &augmented.back();
                }
                graphs.push_back(g);
            }

            GraphBatch batch = make_batch(graphs);
            Tape tape;
            std::map<std::string, Tape::Id> leaves;
            ForwardNodes f = gcn_forward(tape, model, batch, &leaves);
            Tape::Id d = head(tape, leaves, f.embedding);
            Tape::Id loss = finetune_loss(tape, d, truth_matrix(graphs), cfg.standard_nll);

            const double loss_val = tape.value(loss).at(0, 0);
            if (!std::isfinite(loss_val))
                throw std::runtime_error("fine-tuning: non-finite loss at epoch " +
                                         std::to_string(epoch));

            model.zero_grads();
            tape.backward(loss);
            collect_grads(tape, model, leaves);

            std::map<std::string, double> lr_map = cfg.lr_map;
            for (auto& [k, v] : lr_map)
                if (v > 0) v = std::max(cfg.min_lr, v * lr_scale);
            optimizer_step(model, adam, lr_map,
                           std::max(cfg.min_lr, cfg.default_lr * lr_scale));

            epoch_loss += loss_val;
            ++batches;
        }
        if (!model.all_finite())
            throw std::runtime_error("fine-tuning: non-finite parameters after epoch " +
                                     std::to_string(epoch));

        const double val = validation_score(model, data.val);
        if (val < best_val - 1e-9) {
            best_val = val;
            stall = 0;
            if (!data.val.empty()) best_model = model;
        } else if (++stall >= cfg.plateau_patience) {
            lr_scale *= cfg.plateau_factor;
            stall = 0;
        }
        log.push_back({epoch, batches ? epoch_loss / batches : 0.0, val, lr_scale});
    }
    // Return the weights from the best validation epoch, not the last one.
    if (!data.val.empty()) model = std::move(best_model);
    return log;
}

// Pretraining never updates the sigma output columns, so their random init
// sits on top of whatever activation scale the encoder reached; exp() of
// that can start the confidence loss at astronomic values. Start sigma at
// exactly 1 by zeroing those columns.
void reset_sigma_outputs(ModelParams& model) {
    for (const char* name : {"head.2.w", "head.2.b"}) {
        Param& p = model.find(name);
        for (int r = 0; r < p.value.rows; ++r)
            for (int c = 3; c < p.value.cols; ++c) p.value.at(r, c) = 0.0;
    }
}

}  // namespace

FinetuneResult finetune_run(const ModelParams& pretrained, const LabeledGraphSet& data,
                            const FinetuneConfig& config) {
    FinetuneResult result;
    const int depth = pretrained.config.gcn_layers;

    for (int z = 0; z < config.ensemble_size; ++z) {
        ModelParams model = pretrained;
        reset_sigma_outputs(model);
        TrainLoopConfig cfg;
        cfg.epochs = config.epochs;
        cfg.batch_size = config.batch_size;
        cfg.plateau_patience = config.plateau_patience;
        cfg.plateau_factor = config.plateau_factor;
        cfg.min_lr = config.min_lr;
        cfg.standard_nll = config.standard_nll;
        cfg.ap_dropout = config.ap_dropout;
        cfg.seed = config.base_seed + static_cast<uint64_t>(z);
        // Layers nearest the input train slowly; the last GCN layer and the
        // MLP head train at the higher rate; projection head stays frozen.
        for (int l = 0; l + 1 < depth; ++l)
            cfg.lr_map["gcn." + std::to_string(l) + "."] = config.lr_frozen_part;
        cfg.lr_map["gcn." + std::to_string(depth - 1) + "."] = config.lr_rest;
        cfg.lr_map["head."] = config.lr_rest;
        cfg.lr_map["proj."] = -1.0;
        cfg.default_lr = config.lr_rest;

        result.logs.push_back(train_loop(model, data, cfg));
        if (!config.checkpoint_dir.empty())
            save_checkpoint(model, config.checkpoint_dir + "/member_seed_" +
                                       std::to_string(cfg.seed) + ".ckpt");
        result.members.push_back(std::move(model));
    }
    return result;
}

ModelParams train_from_scratch(const LabeledGraphSet& data, const ModelConfig& arch,
                               const FinetuneConfig& config, uint64_t seed) {
    ModelConfig cfg_arch = arch;
    cfg_arch.seed = seed;
    ModelParams model = init_model(cfg_arch);
    reset_sigma_outputs(model);

    TrainLoopConfig cfg;
    cfg.epochs = config.epochs;
    cfg.batch_size = config.batch_size;
    cfg.plateau_patience = config.plateau_patience;
    cfg.plateau_factor = config.plateau_factor;
    cfg.min_lr = config.min_lr;
    cfg.standard_nll = config.standard_nll;
    cfg.ap_dropout = config.ap_dropout;
    cfg.seed = seed;
    cfg.default_lr = 0.001;
    cfg.lr_map["proj."] = -1.0;   // unused by the objective either way

    train_loop(model, data, cfg);
    return model;
}

}  // namespace csiloc
