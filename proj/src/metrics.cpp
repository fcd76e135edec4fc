#include "csiloc/metrics.hpp"

#include "csiloc/dataset.hpp"
#include "csiloc/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace csiloc {

double score(const Position& pred, const Position& truth, double p) {
    const double dx = pred.x - truth.x, dy = pred.y - truth.y;
    return std::sqrt(dx * dx + dy * dy) + p * std::abs(pred.floor - truth.floor);
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of empty set");
    std::sort(values.begin(), values.end());
    const double pos = q * (static_cast<double>(values.size()) - 1.0);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = static_cast<size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("pearson: mismatched or tiny inputs");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va == 0 || vb == 0) return 0;
    return cov / std::sqrt(va * vb);
}

MetricReport summarize(const std::vector<EvalSample>& samples, double penalty) {
    if (samples.empty()) throw std::invalid_argument("summarize: no samples");
    std::vector<double> scores, planar, err_x, err_y, sig_x, sig_y;
    int floors_correct = 0;
    for (const auto& s : samples) {
        scores.push_back(score(s.pred, s.truth, penalty));
        const double dx = s.pred.x - s.truth.x, dy = s.pred.y - s.truth.y;
        planar.push_back(std::sqrt(dx * dx + dy * dy));
        err_x.push_back(std::fabs(dx));
        err_y.push_back(std::fabs(dy));
        sig_x.push_back(s.sigma_x);
        sig_y.push_back(s.sigma_y);
        if (s.pred.floor == s.truth.floor) ++floors_correct;
    }
    MetricReport r;
    r.n = static_cast<int>(samples.size());
    r.median_score = percentile(scores, 0.5);
    r.p90_score = percentile(scores, 0.9);
    r.median_planar = percentile(planar, 0.5);
    r.p90_planar = percentile(planar, 0.9);
    r.mae = std::accumulate(planar.begin(), planar.end(), 0.0) / r.n;
    r.floor_accuracy = static_cast<double>(floors_correct) / r.n;
    r.pearson_x = r.n >= 2 ? pearson(sig_x, err_x) : 0.0;
    r.pearson_y = r.n >= 2 ? pearson(sig_y, err_y) : 0.0;
    return r;
}

void KnnBaseline::fit(const std::vector<LocalizationEvent>& train, const Scene& scene) {
    fingerprints.clear();
    labels.clear();
    for (const auto& e : train) {
        if (!e.truth) throw std::invalid_argument("kNN baseline needs labeled events");
        fingerprints.push_back(rssi_vector(e, scene));
        labels.push_back(*e.truth);
    }
}

Position KnnBaseline::predict(const std::vector<double>& query) const {
    if (fingerprints.empty()) throw std::logic_error("kNN baseline not fitted");
    const int kk = std::min<int>(k, static_cast<int>(fingerprints.size()));

    std::vector<std::pair<double, int>> dist;
    dist.reserve(fingerprints.size());
    for (size_t i = 0; i < fingerprints.size(); ++i) {
        double d2 = 0;
        for (size_t j = 0; j < query.size(); ++j) {
            const double d = fingerprints[i][j] - query[j];
            d2 += d * d;
        }
        dist.emplace_back(d2, static_cast<int>(i));
    }
    std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());

    Position out;
    std::map<int, int> floor_votes;
    for (int i = 0; i < kk; ++i) {
        const Position& l = labels[dist[i].second];
        out.x += l.x / kk;
        out.y += l.y / kk;
        ++floor_votes[l.floor];
    }
    int best_floor = 0, best_votes = -1;
    for (const auto& [floor, votes] : floor_votes)
        if (votes > best_votes) {
            best_votes = votes;
            best_floor = floor;
        }
    out.floor = best_floor;
    return out;
}

namespace {

LabeledGraphSet split_set(const std::vector<const EventGraph*>& graphs, uint64_t seed) {
    SplitIndices idx = split_811(static_cast<int>(graphs.size()), seed);
    LabeledGraphSet set;
    for (int i : idx.train) set.train.push_back(graphs[i]);
    for (int i : idx.val) set.val.push_back(graphs[i]);
    for (int i : idx.test) set.test.push_back(graphs[i]);
    return set;
}

MetricReport evaluate_members(std::vector<ModelParams>& members,
                              const std::vector<const EventGraph*>& test, double penalty,
                              int max_floor) {
    FuseOptions opts;
    opts.min_floor = 0;
    opts.max_floor = max_floor;
    auto preds = predict_graphs(members, test, opts);
    std::vector<EvalSample> samples;
    for (size_t i = 0; i < test.size(); ++i) {
        EvalSample s;
        s.pred = {preds[i].x, preds[i].y, preds[i].floor};
        s.truth = *test[i]->truth;
        s.sigma_x = preds[i].sigma_x;
        s.sigma_y = preds[i].sigma_y;
        samples.push_back(s);
    }
    return summarize(samples, penalty);
}

}  // namespace

std::vector<ArmReport> run_protocol(Protocol protocol, const ProtocolConfig& config,
                                    ProtocolDeps& deps) {
    if (!deps.scene) throw std::invalid_argument("run_protocol: scene required");
    const int max_floor = deps.scene->floors - 1;
    std::vector<ArmReport> reports;

    auto finetuned_report = [&](const ModelParams* base, const LabeledGraphSet& set,
                                uint64_t seed) {
        FinetuneConfig ft = deps.finetune_config;
        ft.base_seed = seed;
        FinetuneResult r = base
            ? finetune_run(*base, set, ft)
            : FinetuneResult{{train_from_scratch(set, deps.arch, ft, seed)}, {}};
        return evaluate_members(r.members, set.test, deps.penalty, max_floor);
    };

    switch (protocol) {
        case Protocol::label_ratio_sweep: {
            // Fixed test split; training slice grows with the ratio.
            LabeledGraphSet full = split_set(deps.labeled_graphs, deps.seed);
            for (double ratio : config.label_ratios) {
                const int n = std::max<int>(1, static_cast<int>(
                    std::lround(ratio * static_cast<double>(full.train.size()))));
                LabeledGraphSet sliced = full;
                sliced.train.resize(std::min<size_t>(full.train.size(), n));
                if (sliced.train.size() < static_cast<size_t>(deps.finetune_config.batch_size))
                    throw std::invalid_argument("label ratio slice smaller than one batch");
                reports.push_back({"pretrained", ratio,
                                   finetuned_report(deps.pretrained, sliced, deps.seed)});
                reports.push_back({"scratch", ratio,
                                   finetuned_report(nullptr, sliced, deps.seed)});
            }
            break;
        }
        case Protocol::epoch_sweep: {
            if (!deps.pretrain_samples || !deps.pretrain_pairs || !deps.pretrain_config)
                throw std::invalid_argument("epoch_sweep: pretraining inputs required");
            LabeledGraphSet set = split_set(deps.labeled_graphs, deps.seed);
            for (int epochs : config.pretrain_epochs) {
                if (epochs == 0) {
                    // Epoch 0 is by definition the from-scratch arm.
                    reports.push_back({"epochs", 0.0,
                                       finetuned_report(nullptr, set, deps.seed)});
                    continue;
                }
                PretrainConfig pc = *deps.pretrain_config;
                pc.epochs = epochs;
                pc.checkpoint_dir.clear();
                ModelParams base = init_model(deps.arch);
                PretrainResult pre =
                    pretrain_run(base, *deps.pretrain_samples, *deps.pretrain_pairs, pc);
                reports.push_back({"epochs", static_cast<double>(epochs),
                                   finetuned_report(&pre.model, set, deps.seed)});
            }
            break;
        }
        case Protocol::device_holdout: {
            std::set<std::string> devices(deps.device_ids.begin(), deps.device_ids.end());
            int fold = 0;
            for (const auto& held_out : devices) {
                LabeledGraphSet set;
                std::vector<const EventGraph*> train_pool;
                for (size_t i = 0; i < deps.labeled_graphs.size(); ++i) {
                    if (deps.device_ids[i] == held_out)
                        set.test.push_back(deps.labeled_graphs[i]);
                    else
                        train_pool.push_back(deps.labeled_graphs[i]);
                }
                // 9:1 train/val over the remaining devices.
                SplitIndices idx = split_811(static_cast<int>(train_pool.size()), deps.seed);
                for (int i : idx.train) set.train.push_back(train_pool[i]);
                for (int i : idx.val) set.val.push_back(train_pool[i]);
                for (int i : idx.test) set.train.push_back(train_pool[i]);
                reports.push_back({"holdout:" + held_out, static_cast<double>(fold++),
                                   finetuned_report(deps.pretrained, set, deps.seed)});
            }
            break;
        }
        case Protocol::temporal_holdout: {
            // Graphs arrive chronologically: train on segment A, test on B.
            const size_t cut = static_cast<size_t>(
                config.temporal_split * static_cast<double>(deps.labeled_graphs.size()));
            std::vector<const EventGraph*> early(deps.labeled_graphs.begin(),
                                                 deps.labeled_graphs.begin() + cut);
            LabeledGraphSet set;
            SplitIndices idx = split_811(static_cast<int>(early.size()), deps.seed);
            for (int i : idx.train) set.train.push_back(early[i]);
            for (int i : idx.val) set.val.push_back(early[i]);
            for (int i : idx.test) set.train.push_back(early[i]);
            set.test.assign(deps.labeled_graphs.begin() + cut, deps.labeled_graphs.end());
            reports.push_back({"temporal", config.temporal_split,
                               finetuned_report(deps.pretrained, set, deps.seed)});
            break;
        }
    }
    return reports;
}

void write_reports_csv(const std::vector<ArmReport>& reports, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open report file: " + path);
    f << "arm,parameter,n,median_score,p90_score,median_planar,p90_planar,mae,"
         "floor_accuracy,pearson_x,pearson_y\n";
    for (const auto& r : reports) {
        f << r.arm << ',' << r.parameter << ',' << r.report.n << ','
          << r.report.median_score << ',' << r.report.p90_score << ','
          << r.report.median_planar << ',' << r.report.p90_planar << ','
          << r.report.mae << ',' << r.report.floor_accuracy << ','
          << r.report.pearson_x << ',' << r.report.pearson_y << '\n';
    }
}

}  // namespace csiloc
