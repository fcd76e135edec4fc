// Event-to-graph encoding: node features plus the four edge rules.
#pragma once

#include "csiloc/features.hpp"
#include "csiloc/sim.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace csiloc {

// 245 feature values + (ap x, ap y, floor, frequency, rssi) metadata.
inline constexpr int kNodeWidth = kFeatureLength + 5;

struct NodeTag {
    int ap_id = 0;
    int matrix_index = 0;
    FeatureKind kind = FeatureKind::csi_mag;
    int rx = 0;                // first antenna of the pair for phase_diff
    int rx_pair_second = -1;   // second antenna for phase_diff, else -1
    int sts = 0;

    friend bool operator==(const NodeTag&, const NodeTag&) = default;
};

struct EventGraph {
    int num_nodes = 0;
    std::vector<float> node_features;            // num_nodes * kNodeWidth, row-major
    std::vector<NodeTag> node_kinds;
    std::vector<std::pair<int, int>> edges;      // undirected, i < j, sorted
    std::optional<Position> truth;
    std::string user_id;
    double timestamp = 0;
    bool metadata_normalized = false;

    const float* row(int n) const { return node_features.data() + static_cast<size_t>(n) * kNodeWidth; }
    float* row(int n) { return node_features.data() + static_cast<size_t>(n) * kNodeWidth; }
    bool has_edge(int i, int j) const;
};

// AP positions for the metadata columns come from the scene.
EventGraph encode_event(const LocalizationEvent& event, const Scene& scene);

struct SceneBounds {
    double width = 1, depth = 1;
};

// AP x,y -> [0,1] by extent; frequency scaled by 1e-10; rssi -> (rssi+100)/70
// clipped to [0,1]; floor kept as an integer index.
void normalize_metadata(EventGraph& graph, const SceneBounds& bounds);

struct GraphCounts {
    int nodes = 0;
    int edges = 0;
};

// Brute-force enumeration of the edge rules for a list of per-matrix
// (n_rx, n_sts) configurations; test oracle.
GraphCounts node_count_oracle(const std::vector<std::pair<int, int>>& configs);

}  // namespace csiloc
