#include "csiloc/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace csiloc {

std::vector<AnchorPositivePair> mine_pairs(const std::vector<EventGraph>& graphs) {
    std::vector<AnchorPositivePair> pairs;
    for (int a = 0; a < static_cast<int>(graphs.size()); ++a) {
        int best = -1;
        double best_dt = kPairWindowSeconds + 1.0;
        for (int b = 0; b < static_cast<int>(graphs.size()); ++b) {
            if (b == a || graphs[b].user_id != graphs[a].user_id) continue;
            const double dt = std::fabs(graphs[b].timestamp - graphs[a].timestamp);
            if (dt <= 0 || dt > kPairWindowSeconds) continue;
            if (dt < best_dt) {
                best_dt = dt;
                best = b;
            }
        }
        if (best >= 0) pairs.push_back({a, best});
    }
    return pairs;
}

TripletTargets select_triplet_targets(const LocalizationEvent& event, const Scene& scene,
                                      std::mt19937_64& rng) {
    struct ApRssi {
        int ap_id;
        double rssi;
    };
    std::vector<ApRssi> aps;
    for (const auto& m : event.matrices) {
        bool merged = false;
        for (auto& a : aps)
            if (a.ap_id == m.ap_id) {
                a.rssi = std::max(a.rssi, m.max_rssi());
                merged = true;
            }
        if (!merged) aps.push_back({m.ap_id, m.max_rssi()});
    }

    TripletTargets t;
    if (aps.empty()) return t;

    // Positive: strongest RSSI, ties to the lowest ap_id.
    std::sort(aps.begin(), aps.end(), [](const ApRssi& a, const ApRssi& b) {
        return a.rssi != b.rssi ? a.rssi > b.rssi : a.ap_id < b.ap_id;
    });
    const ApRssi& strongest = aps.front();
    const ApDescriptor* pos_ap = scene.find_ap(strongest.ap_id);
    if (!pos_ap) return t;
    t.has_positive = true;
    t.pos[0] = pos_ap->x;
    t.pos[1] = pos_ap->y;
    t.pos[2] = pos_ap->floor;

    if (aps.size() < 2) return t;   // no negative exists

    // Negative: uniform among APs 5-20 dBm weaker; fallback weakest.
    std::vector<int> band;
    for (size_t i = 1; i < aps.size(); ++i) {
        const double gap = strongest.rssi - aps[i].rssi;
        if (gap >= 5.0 && gap <= 20.0) band.push_back(static_cast<int>(i));
    }
    int pick;
    if (!band.empty()) {
        pick = band[static_cast<size_t>(rng() % band.size())];
    } else {
        // Weakest reporting AP, ties resolved to the lowest ap_id.
        pick = 0;
        for (size_t i = 1; i < aps.size(); ++i)
            if (aps[i].rssi < aps[pick].rssi ||
                (aps[i].rssi == aps[pick].rssi && aps[i].ap_id < aps[pick].ap_id))
                pick = static_cast<int>(i);
    }
    const ApDescriptor* neg_ap = scene.find_ap(aps[pick].ap_id);
    if (!neg_ap) return t;
    t.has_negative = true;
    t.neg[0] = neg_ap->x;
    t.neg[1] = neg_ap->y;
    t.neg[2] = neg_ap->floor;
    return t;
}

Tape::Id nt_xent(Tape& tape, Tape::Id z_batch, double temperature) {
    if (tape.value(z_batch).rows < 4)
        throw std::invalid_argument("nt_xent: batch needs at least 2 pairs");
    Tape::Id zn = tape.row_l2_normalize(z_batch);
    return tape.nt_xent_from_normalized(zn, temperature);
}

Tape::Id triplet_loss(Tape& tape, Tape::Id d_xyz, const Mat& r_p, const Mat& r_n, double margin) {
    Tape::Id rp = tape.leaf(r_p, false);
    Tape::Id rn = tape.leaf(r_n, false);
    Tape::Id dp = tape.sum_cols(tape.square(tape.sub(d_xyz, rp)));
    Tape::Id dn = tape.sum_cols(tape.square(tape.sub(d_xyz, rn)));
    return tape.mean_all(tape.relu(tape.add_scalar(tape.sub(dp, dn), margin)));
}

Tape::Id floor_loss(Tape& tape, Tape::Id d_floor, const Mat& r_p_floor) {
    Tape::Id target = tape.leaf(r_p_floor, false);
    return tape.mean_all(tape.abs(tape.sub(d_floor, target)));
}

namespace {

// Spatial + floor terms for one stream (anchors or positives) of the batch.
// `rows` are the stream's row offsets in the B x 5 head output.
struct StreamLossTerms {
    Tape::Id spatial = -1;
    Tape::Id floor = -1;
};

StreamLossTerms stream_losses(Tape& tape, Tape::Id d, const std::vector<int>& rows,
                              const std::vector<const PretrainSample*>& samples,
                              double margin) {
    StreamLossTerms out;
    std::vector<int> triplet_rows, floor_rows;
    for (size_t i = 0; i < samples.size(); ++i) {
        if (samples[i]->targets.has_positive) floor_rows.push_back(rows[i]);
        if (samples[i]->targets.has_negative) triplet_rows.push_back(rows[i]);
    }
    if (!triplet_rows.empty()) {
        Mat rp(static_cast<int>(triplet_rows.size()), 3);
        Mat rn(static_cast<int>(triplet_rows.size()), 3);
        int r = 0;
        for (size_t i = 0; i < samples.size(); ++i) {
            if (!samples[i]->targets.has_negative) continue;
            for (int c = 0; c < 3; ++c) {
                rp.at(r, c) = samples[i]->targets.pos[c];
                rn.at(r, c) = samples[i]->targets.neg[c];
            }
            ++r;
        }
        Tape::Id d_xyz = tape.slice_cols(tape.gather_rows(d, triplet_rows), 0, 3);
        out.spatial = triplet_loss(tape, d_xyz, rp, rn, margin);
    }
    if (!floor_rows.empty()) {
        Mat rpf(static_cast<int>(floor_rows.size()), 1);
        int r = 0;
        for (size_t i = 0; i < samples.size(); ++i)
            if (samples[i]->targets.has_positive)
                rpf.at(r++, 0) = samples[i]->targets.pos[2];
        Tape::Id d_floor = tape.slice_cols(tape.gather_rows(d, floor_rows), 2, 1);
        out.floor = floor_loss(tape, d_floor, rpf);
    }
    return out;
}

}  // namespace

PretrainResult pretrain_run(const ModelParams& init, const std::vector<PretrainSample>& samples,
                            const std::vector<AnchorPositivePair>& pairs,
                            const PretrainConfig& config) {
    if (pairs.empty()) throw std::invalid_argument("pretrain_run: no pairs");

    PretrainResult result;
    result.model = init;
    AdamState adam;
    std::mt19937_64 rng(config.seed);
    std::vector<int> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochLosses epoch_losses;
        int batches = 0;

        for (size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
            const size_t end = std::min(order.size(), start + config.batch_size);
            if (end - start < 2) break;

            std::vector<const PretrainSample*> anchors, positives;
            std::vector<const EventGraph*> graphs;
            for (size_t i = start; i < end; ++i) {
                anchors.push_back(&samples[pairs[order[i]].anchor]);
                positives.push_back(&samples[pairs[order[i]].positive]);
            }
            for (const auto* s : anchors) graphs.push_back(s->graph);
            for (const auto* s : positives) graphs.push_back(s->graph);
            const int b = static_cast<int>(anchors.size());

            GraphBatch batch = make_batch(graphs);
            Tape tape;
            std::map<std::string, Tape::Id> leaves;
            ForwardNodes f = gcn_forward(tape, result.model, batch, &leaves);
            Tape::Id z = project(tape, leaves, f.embedding);
            Tape::Id d = head(tape, leaves, f.embedding);

            Tape::Id loss_t = nt_xent(tape, z, config.temperature);

            std::vector<int> anchor_rows(b), positive_rows(b);
            std::iota(anchor_rows.begin(), anchor_rows.end(), 0);
            std::iota(positive_rows.begin(), positive_rows.end(), b);
            StreamLossTerms anc = stream_losses(tape, d, anchor_rows, anchors, config.margin);
            StreamLossTerms pos = stream_losses(tape, d, positive_rows, positives, config.margin);

            Tape::Id total = loss_t;
            double spatial_val = 0, floor_val = 0;
            auto accumulate = [&](Tape::Id term, double& val) {
                if (term < 0) return;
                val += tape.value(term).at(0, 0);
                total = tape.add(total, term);
            };
            accumulate(anc.spatial, spatial_val);
            accumulate(pos.spatial, spatial_val);
            accumulate(anc.floor, floor_val);
            accumulate(pos.floor, floor_val);

            const double total_val = tape.value(total).at(0, 0);
            if (!std::isfinite(total_val)) {
                throw std::runtime_error(
                    "pretrain_run: non-finite loss at epoch " + std::to_string(epoch) +
                    " batch " + std::to_string(batches) +
                    " (L_t=" + std::to_string(tape.value(loss_t).at(0, 0)) +
                    " L_s=" + std::to_string(spatial_val) +
                    " L_f=" + std::to_string(floor_val) + ")");
            }

            result.model.zero_grads();
            tape.backward(total);
            collect_grads(tape, result.model, leaves);
            optimizer_step(result.model, adam, {}, config.learning_rate);

            epoch_losses.temporal += tape.value(loss_t).at(0, 0);
            epoch_losses.spatial += spatial_val;
            epoch_losses.floor += floor_val;
            epoch_losses.total += total_val;
            ++batches;
        }

        if (batches > 0) {
            epoch_losses.temporal /= batches;
            epoch_losses.spatial /= batches;
            epoch_losses.floor /= batches;
            epoch_losses.total /= batches;
        }
        result.curve.push_back(epoch_losses);

        if (!result.model.all_finite())
            throw std::runtime_error("pretrain_run: non-finite parameters after epoch " +
                                     std::to_string(epoch));
        if (!config.checkpoint_dir.empty() &&
            ((epoch + 1) % config.checkpoint_every == 0 || epoch + 1 == config.epochs)) {
            save_checkpoint(result.model, config.checkpoint_dir + "/pretrain_epoch_" +
                                              std::to_string(epoch + 1) + ".ckpt");
        }
    }
    return result;
}

std::vector<int> downsample_unlabeled(const std::vector<LocalizationEvent>& events,
                                      const Scene& scene, double threshold) {
    std::vector<int> kept;
    // Last kept fingerprint per user.
    std::map<std::string, std::vector<double>> last;
    for (int i = 0; i < static_cast<int>(events.size()); ++i) {
        const auto v = rssi_vector(events[i], scene);
        auto it = last.find(events[i].user_id);
        if (it != last.end()) {
            double dot = 0, na = 0, nb = 0;
            for (size_t k = 0; k < v.size(); ++k) {
                dot += v[k] * it->second[k];
                na += v[k] * v[k];
                nb += it->second[k] * it->second[k];
            }
            const double cosine = (na > 0 && nb > 0) ? dot / std::sqrt(na * nb) : 0.0;
            if (cosine > threshold) continue;
        }
        kept.push_back(i);
        last[events[i].user_id] = v;
    }
    return kept;
}

void write_loss_curve_csv(const std::vector<EpochLosses>& curve, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open loss curve file: " + path);
    f << "epoch,temporal,spatial,floor,total\n";
    for (size_t i = 0; i < curve.size(); ++i)
        f << i << ',' << curve[i].temporal << ',' << curve[i].spatial << ','
          << curve[i].floor << ',' << curve[i].total << '\n';
}

}  // namespace csiloc
