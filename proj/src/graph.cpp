#include "csiloc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

namespace csiloc {

namespace {

std::tuple<int, int, int, int, int, int> sort_key(const NodeTag& t) {
    return {t.ap_id, t.matrix_index, static_cast<int>(t.kind), t.rx, t.rx_pair_second, t.sts};
}

}  // namespace

bool EventGraph::has_edge(int i, int j) const {
    if (i > j) std::swap(i, j);
    return std::binary_search(edges.begin(), edges.end(), std::make_pair(i, j));
}

EventGraph encode_event(const LocalizationEvent& event, const Scene& scene) {
    if (event.matrices.empty()) throw ConfigError("cannot encode an empty event");

    struct PendingNode {
        NodeTag tag;
        FeatureVector feature;
    };
    std::vector<PendingNode> pending;

    // Matrix index within the event, counted per AP in event order.
    std::map<int, int> per_ap_counter;
    struct MatrixRef {
        const CsiMatrix* m = nullptr;
        int ap_id = 0, matrix_index = 0;
    };
    std::vector<MatrixRef> refs;
    for (const auto& m : event.matrices) {
        refs.push_back({&m, m.ap_id, per_ap_counter[m.ap_id]++});
    }

    for (const auto& ref : refs) {
        const CsiMatrix& m = *ref.m;
        const double freq = m.config.center_frequency;
        auto base_feature = [&](FeatureKind kind, int rx, int rx2, int sts,
                                std::vector<double> values, double rssi) {
            FeatureVector f;
            f.kind = kind;
            f.values = standardize_length(values);
            f.center_frequency = freq;
            f.rssi_dbm = rssi;
            f.ap_id = ref.ap_id;
            f.matrix_index = ref.matrix_index;
            f.rx = rx;
            f.rx_pair_second = rx2;
            f.sts = sts;
            pending.push_back(
                {NodeTag{ref.ap_id, ref.matrix_index, kind, rx, rx2, sts}, std::move(f)});
        };
        for (int sts = 0; sts < m.config.n_sts; ++sts) {
            for (int rx = 0; rx < m.n_rx; ++rx) {
                base_feature(FeatureKind::csi_mag, rx, -1, sts, csi_magnitude(m, rx, sts),
                             m.rssi_dbm[rx]);
                base_feature(FeatureKind::cir_mag, rx, -1, sts, cir_magnitude(m, rx, sts),
                             m.rssi_dbm[rx]);
            }
            for (int i = 0; i < m.n_rx; ++i)
                for (int j = i + 1; j < m.n_rx; ++j)
                    base_feature(FeatureKind::phase_diff, i, j, sts,
                                 phase_difference(m, i, j, sts),
                                 std::max(m.rssi_dbm[i], m.rssi_dbm[j]));
        }
    }

    std::sort(pending.begin(), pending.end(),
              [](const PendingNode& a, const PendingNode& b) {
                  return sort_key(a.tag) < sort_key(b.tag);
              });

    EventGraph g;
    g.user_id = event.user_id;
    g.timestamp = event.timestamp;
    g.truth = event.truth;
    g.num_nodes = static_cast<int>(pending.size());
    g.node_features.assign(static_cast<size_t>(g.num_nodes) * kNodeWidth, 0.0f);
    g.node_kinds.reserve(pending.size());

    std::map<std::tuple<int, int, int, int, int, int>, int> index_of;
    for (int n = 0; n < g.num_nodes; ++n) {
        const auto& p = pending[n];
        g.node_kinds.push_back(p.tag);
        index_of[sort_key(p.tag)] = n;
        float* row = g.row(n);
        for (int i = 0; i < kFeatureLength; ++i)
            row[i] = static_cast<float>(p.feature.values[i]);
        // Raw metadata; normalize_metadata rescales it.
        const ApDescriptor* ap = scene.find_ap(p.tag.ap_id);
        if (!ap) throw ConfigError("event references an AP missing from the scene");
        row[kFeatureLength + 0] = static_cast<float>(ap->x);
        row[kFeatureLength + 1] = static_cast<float>(ap->y);
        row[kFeatureLength + 2] = static_cast<float>(ap->floor);
        row[kFeatureLength + 3] = static_cast<float>(p.feature.center_frequency);
        row[kFeatureLength + 4] = static_cast<float>(p.feature.rssi_dbm);
    }

    auto find_node = [&](int ap, int mi, FeatureKind kind, int rx, int rx2, int sts) {
        return index_of.at(std::tuple{ap, mi, static_cast<int>(kind), rx, rx2, sts});
    };

    std::set<std::pair<int, int>> edges;
    auto add_edge = [&](int a, int b) {
        if (a == b) return;
        edges.insert({std::min(a, b), std::max(a, b)});
    };

    std::vector<int> bridge_nodes;   // strongest-RSSI csi_mag node per matrix
    for (const auto& ref : refs) {
        const CsiMatrix& m = *ref.m;
        // R4 bridge antenna: highest RSSI, ties to the lowest rx index.
        int best_rx = 0;
        for (int rx = 1; rx < m.n_rx; ++rx)
            if (m.rssi_dbm[rx] > m.rssi_dbm[best_rx]) best_rx = rx;

        for (int sts = 0; sts < m.config.n_sts; ++sts) {
            // R1: csi_mag(i) -- phase_diff(i,j) -- csi_mag(j)
            for (int i = 0; i < m.n_rx; ++i) {
                for (int j = i + 1; j < m.n_rx; ++j) {
                    const int pd = find_node(ref.ap_id, ref.matrix_index,
                                             FeatureKind::phase_diff, i, j, sts);
                    add_edge(find_node(ref.ap_id, ref.matrix_index, FeatureKind::csi_mag,
                                       i, -1, sts), pd);
                    add_edge(find_node(ref.ap_id, ref.matrix_index, FeatureKind::csi_mag,
                                       j, -1, sts), pd);
                }
            }
            // R2: csi_mag -- cir_mag per (rx, sts)
            for (int rx = 0; rx < m.n_rx; ++rx)
                add_edge(find_node(ref.ap_id, ref.matrix_index, FeatureKind::csi_mag,
                                   rx, -1, sts),
                         find_node(ref.ap_id, ref.matrix_index, FeatureKind::cir_mag,
                                   rx, -1, sts));
            // R3: csi_mag clique within the same spatial stream
            for (int i = 0; i < m.n_rx; ++i)
                for (int j = i + 1; j < m.n_rx; ++j)
                    add_edge(find_node(ref.ap_id, ref.matrix_index, FeatureKind::csi_mag,
                                       i, -1, sts),
                             find_node(ref.ap_id, ref.matrix_index, FeatureKind::csi_mag,
                                       j, -1, sts));
        }
        bridge_nodes.push_back(
            find_node(ref.ap_id, ref.matrix_index, FeatureKind::csi_mag, best_rx, -1, 0));
    }

    // R4: clique over the matrices' strongest csi_mag nodes.
    for (size_t a = 0; a < bridge_nodes.size(); ++a)
        for (size_t b = a + 1; b < bridge_nodes.size(); ++b)
            add_edge(bridge_nodes[a], bridge_nodes[b]);

    g.edges.assign(edges.begin(), edges.end());
    return g;
}

void normalize_metadata(EventGraph& graph, const SceneBounds& bounds) {
    graph.metadata_normalized = true;
    for (int n = 0; n < graph.num_nodes; ++n) {
        float* row = graph.row(n);
        row[kFeatureLength + 0] = static_cast<float>(row[kFeatureLength + 0] / bounds.width);
        row[kFeatureLength + 1] = static_cast<float>(row[kFeatureLength + 1] / bounds.depth);
        // floor index left untouched
        row[kFeatureLength + 3] = static_cast<float>(row[kFeatureLength + 3] * 1e-10);
        const double r = (row[kFeatureLength + 4] + 100.0) / 70.0;
        row[kFeatureLength + 4] = static_cast<float>(std::clamp(r, 0.0, 1.0));
    }
}

GraphCounts node_count_oracle(const std::vector<std::pair<int, int>>& configs) {
    GraphCounts c;
    for (const auto& [n_rx, n_sts] : configs) {
        const int pairs = n_rx * (n_rx - 1) / 2;
        c.nodes += 2 * n_rx * n_sts + pairs * n_sts;
        c.edges += 2 * pairs * n_sts;   // R1
        c.edges += n_rx * n_sts;        // R2
        c.edges += pairs * n_sts;       // R3
    }
    const int m = static_cast<int>(configs.size());
    c.edges += m * (m - 1) / 2;         // R4 bridge clique
    return c;
}

}  // namespace csiloc
