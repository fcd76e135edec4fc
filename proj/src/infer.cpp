#include "csiloc/infer.hpp"

#include <cmath>
#include <stdexcept>

namespace csiloc {

EnsemblePrediction fuse(const std::vector<Prediction>& members, const FuseOptions& options) {
    if (members.empty()) throw std::invalid_argument("fuse: empty ensemble");

    EnsemblePrediction out;
    out.member_outputs = members;

    double num_x = 0, den_x = 0, num_y = 0, den_y = 0;
    double floor_sum = 0, sx_sum = 0, sy_sum = 0;
    for (const auto& m : members) {
        if (m.sigma_x <= 0 || m.sigma_y <= 0)
            throw std::invalid_argument("fuse: non-positive confidence scale");
        const double wx = options.inverse_variance ? 1.0 / (m.sigma_x * m.sigma_x)
                                                   : 1.0 / m.sigma_x;
        const double wy = options.inverse_variance ? 1.0 / (m.sigma_y * m.sigma_y)
                                                   : 1.0 / m.sigma_y;
        num_x += m.x * wx;
        den_x += wx;
        num_y += m.y * wy;
        den_y += wy;
        floor_sum += m.floor;
        sx_sum += m.sigma_x;
        sy_sum += m.sigma_y;
    }
    const double z = static_cast<double>(members.size());
    out.x = num_x / den_x;
    out.y = num_y / den_y;
    // Half-up rounding of the floor mean.
    out.floor = static_cast<int>(std::floor(floor_sum / z + 0.5));
    if (options.max_floor >= options.min_floor)
        out.floor = std::clamp(out.floor, options.min_floor, options.max_floor);
    out.sigma_x = sx_sum / z;
    out.sigma_y = sy_sum / z;
    return out;
}

EnsemblePrediction predict(Ensemble& ensemble, const LocalizationEvent& event) {
    if (event.distinct_ap_count() < 3)
        throw ConfigError("insufficient APs: localization needs at least 3 reporting APs");
    if (!ensemble.scene) throw ConfigError("ensemble has no scene attached");
    EventGraph graph = encode_event(event, *ensemble.scene);
    normalize_metadata(graph, ensemble.bounds);
    auto results = predict_graphs(ensemble.members, {&graph}, ensemble.fuse_options);
    return results.front();
}

std::vector<EnsemblePrediction> predict_graphs(std::vector<ModelParams>& members,
                                               const std::vector<const EventGraph*>& graphs,
                                               const FuseOptions& options) {
    if (members.empty()) throw std::invalid_argument("predict_graphs: empty ensemble");

    std::vector<std::vector<Prediction>> per_event(graphs.size());
    constexpr size_t kChunk = 256;
    for (size_t start = 0; start < graphs.size(); start += kChunk) {
        std::vector<const EventGraph*> chunk(
            graphs.begin() + start, graphs.begin() + std::min(graphs.size(), start + kChunk));
        GraphBatch batch = make_batch(chunk);
        for (auto& member : members) {
            Mat d = forward_head(member, batch);
            for (int r = 0; r < d.rows; ++r)
                per_event[start + r].push_back(
                    prediction_from_row(d.d.data() + static_cast<size_t>(r) * d.cols));
        }
    }

    std::vector<EnsemblePrediction> out;
    out.reserve(graphs.size());
    for (auto& preds : per_event) out.push_back(fuse(preds, options));
    return out;
}

}  // namespace csiloc
