// JSON Lines persistence for events and graphs, checkpoint manifests, splits.
#pragma once

#include "csiloc/graph.hpp"
#include "csiloc/sim.hpp"

#include <string>
#include <vector>

namespace csiloc {

inline constexpr int kEventSchemaVersion = 1;
inline constexpr int kGraphSchemaVersion = 1;

struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_events_jsonl(const std::vector<LocalizationEvent>& events, const std::string& path);
std::vector<LocalizationEvent> read_events_jsonl(const std::string& path);

void write_graphs_jsonl(const std::vector<EventGraph>& graphs, const std::string& path);
std::vector<EventGraph> read_graphs_jsonl(const std::string& path);

void write_scene_json(const Scene& scene, const std::string& path);
Scene read_scene_json(const std::string& path);

struct SplitIndices {
    std::vector<int> train, val, test;
};

// Deterministic seeded shuffle, then an 8:1:1 slice.
SplitIndices split_811(int n, uint64_t seed);

}  // namespace csiloc
