#include "csiloc/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

namespace csiloc {

using nlohmann::json;

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    return f;
}

void check_version(const json& j, int expected, const char* what) {
    if (!j.contains("schema_version"))
        throw SchemaError(std::string(what) + " record missing schema_version");
    const int v = j.at("schema_version").get<int>();
    if (v != expected)
        throw SchemaError(std::string(what) + " schema_version " + std::to_string(v) +
                          " unsupported (expected " + std::to_string(expected) + ")");
}

json complex_array(const std::vector<cdouble>& v) {
    json out = json::array();
    for (const auto& c : v) out.push_back({c.real(), c.imag()});
    return out;
}

std::vector<cdouble> parse_complex_array(const json& j) {
    std::vector<cdouble> out;
    out.reserve(j.size());
    for (const auto& pair : j) {
        if (!pair.is_array() || pair.size() != 2)
            throw SchemaError("complex values must be [re, im] pairs");
        out.emplace_back(pair[0].get<double>(), pair[1].get<double>());
    }
    return out;
}

}  // namespace

void write_events_jsonl(const std::vector<LocalizationEvent>& events, const std::string& path) {
    auto f = open_out(path);
    for (const auto& e : events) {
        json j;
        j["schema_version"] = kEventSchemaVersion;
        j["user_id"] = e.user_id;
        j["timestamp"] = e.timestamp;
        if (e.truth)
            j["truth"] = {{"x", e.truth->x}, {"y", e.truth->y}, {"floor", e.truth->floor}};
        json mats = json::array();
        for (const auto& m : e.matrices) {
            json mj;
            mj["ap_id"] = m.ap_id;
            mj["n_rx"] = m.n_rx;
            mj["n_sts"] = m.config.n_sts;
            mj["n_sub"] = m.config.n_sub;
            mj["center_frequency"] = m.config.center_frequency;
            mj["mode"] = tx_mode_name(m.config.mode);
            mj["rssi_dbm"] = m.rssi_dbm;
            mj["csi"] = complex_array(m.values);
            mats.push_back(std::move(mj));
        }
        j["matrices"] = std::move(mats);
        f << j.dump() << '\n';
    }
}

std::vector<LocalizationEvent> read_events_jsonl(const std::string& path) {
    auto f = open_in(path);
    std::vector<LocalizationEvent> events;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        check_version(j, kEventSchemaVersion, "event");
        LocalizationEvent e;
        e.user_id = j.at("user_id").get<std::string>();
        e.timestamp = j.at("timestamp").get<double>();
        if (j.contains("truth")) {
            const auto& t = j["truth"];
            e.truth = Position{t.at("x").get<double>(), t.at("y").get<double>(),
                               t.at("floor").get<int>()};
        }
        for (const auto& mj : j.at("matrices")) {
            CsiMatrix m;
            m.ap_id = mj.at("ap_id").get<int>();
            m.n_rx = mj.at("n_rx").get<int>();
            m.config.n_sts = mj.at("n_sts").get<int>();
            m.config.n_sub = mj.at("n_sub").get<int>();
            m.config.center_frequency = mj.at("center_frequency").get<double>();
            m.config.mode = tx_mode_from_name(mj.at("mode").get<std::string>());
            m.rssi_dbm = mj.at("rssi_dbm").get<std::vector<double>>();
            m.values = parse_complex_array(mj.at("csi"));
            const size_t expected = static_cast<size_t>(m.n_rx) * m.config.n_sts * m.config.n_sub;
            if (m.values.size() != expected)
                throw SchemaError(path + ":" + std::to_string(lineno) +
                                  ": csi length does not match n_rx * n_sts * n_sub");
            e.matrices.push_back(std::move(m));
        }
        events.push_back(std::move(e));
    }
    return events;
}

void write_graphs_jsonl(const std::vector<EventGraph>& graphs, const std::string& path) {
    auto f = open_out(path);
    for (const auto& g : graphs) {
        json j;
        j["schema_version"] = kGraphSchemaVersion;
        j["num_nodes"] = g.num_nodes;
        j["user_id"] = g.user_id;
        j["timestamp"] = g.timestamp;
        j["metadata_normalized"] = g.metadata_normalized;
        if (g.truth)
            j["truth"] = {{"x", g.truth->x}, {"y", g.truth->y}, {"floor", g.truth->floor}};
        j["node_features"] = g.node_features;
        json tags = json::array();
        for (const auto& t : g.node_kinds)
            tags.push_back({t.ap_id, t.matrix_index, static_cast<int>(t.kind), t.rx,
                            t.rx_pair_second, t.sts});
        j["node_tags"] = std::move(tags);
        json edges = json::array();
        for (const auto& [a, b] : g.edges) edges.push_back({a, b});
        j["edges"] = std::move(edges);
        f << j.dump() << '\n';
    }
}

std::vector<EventGraph> read_graphs_jsonl(const std::string& path) {
    auto f = open_in(path);
    std::vector<EventGraph> graphs;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        check_version(j, kGraphSchemaVersion, "graph");
        EventGraph g;
        g.num_nodes = j.at("num_nodes").get<int>();
        g.user_id = j.at("user_id").get<std::string>();
        g.timestamp = j.at("timestamp").get<double>();
        g.metadata_normalized = j.value("metadata_normalized", false);
        if (j.contains("truth")) {
            const auto& t = j["truth"];
            g.truth = Position{t.at("x").get<double>(), t.at("y").get<double>(),
                               t.at("floor").get<int>()};
        }
        g.node_features = j.at("node_features").get<std::vector<float>>();
        if (g.node_features.size() != static_cast<size_t>(g.num_nodes) * kNodeWidth)
            throw SchemaError(path + ":" + std::to_string(lineno) +
                              ": node_features length does not match num_nodes");
        for (const auto& tj : j.at("node_tags")) {
            NodeTag t;
            t.ap_id = tj.at(0).get<int>();
            t.matrix_index = tj.at(1).get<int>();
            t.kind = static_cast<FeatureKind>(tj.at(2).get<int>());
            t.rx = tj.at(3).get<int>();
            t.rx_pair_second = tj.at(4).get<int>();
            t.sts = tj.at(5).get<int>();
            g.node_kinds.push_back(t);
        }
        for (const auto& ej : j.at("edges")) {
            const int a = ej.at(0).get<int>(), b = ej.at(1).get<int>();
            if (a < 0 || b < 0 || a >= g.num_nodes || b >= g.num_nodes)
                throw SchemaError(path + ":" + std::to_string(lineno) + ": edge out of range");
            g.edges.emplace_back(a, b);
        }
        graphs.push_back(std::move(g));
    }
    return graphs;
}

void write_scene_json(const Scene& scene, const std::string& path) {
    json j;
    j["schema_version"] = 1;
    j["floors"] = scene.floors;
    j["floor_height"] = scene.floor_height;
    j["width"] = scene.width;
    j["depth"] = scene.depth;
    j["rng_seed"] = scene.rng_seed;
    json aps = json::array();
    for (const auto& ap : scene.aps) {
        aps.push_back({{"id", ap.id},
                       {"x", ap.x},
                       {"y", ap.y},
                       {"floor", ap.floor},
                       {"n_rx", ap.n_rx},
                       {"center_frequency", ap.center_frequency},
                       {"antenna_spacing", ap.antenna_spacing},
                       {"n_sub", ap.n_sub}});
    }
    j["aps"] = std::move(aps);
    auto f = open_out(path);
    f << j.dump(2) << '\n';
}

Scene read_scene_json(const std::string& path) {
    auto f = open_in(path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw SchemaError(path + ": " + e.what());
    }
    check_version(j, 1, "scene");
    Scene s;
    s.floors = j.at("floors").get<int>();
    s.floor_height = j.at("floor_height").get<double>();
    s.width = j.at("width").get<double>();
    s.depth = j.at("depth").get<double>();
    s.rng_seed = j.at("rng_seed").get<uint64_t>();
    for (const auto& aj : j.at("aps")) {
        ApDescriptor ap;
        ap.id = aj.at("id").get<int>();
        ap.x = aj.at("x").get<double>();
        ap.y = aj.at("y").get<double>();
        ap.floor = aj.at("floor").get<int>();
        ap.n_rx = aj.at("n_rx").get<int>();
        ap.center_frequency = aj.at("center_frequency").get<double>();
        ap.antenna_spacing = aj.at("antenna_spacing").get<double>();
        ap.n_sub = aj.at("n_sub").get<int>();
        s.aps.push_back(ap);
    }
    return s;
}

SplitIndices split_811(int n, uint64_t seed) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const int n_train = static_cast<int>(0.8 * n);
    const int n_val = static_cast<int>(0.1 * n);
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    s.test.assign(order.begin() + n_train + n_val, order.end());
    return s;
}

}  // namespace csiloc
