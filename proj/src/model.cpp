#include "csiloc/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace csiloc {

Param& ModelParams::find(const std::string& name) {
    for (auto& p : params)
        if (p.name == name) return p;
    throw std::invalid_argument("unknown parameter: " + name);
}

const Param& ModelParams::find(const std::string& name) const {
    return const_cast<ModelParams*>(this)->find(name);
}

void ModelParams::zero_grads() {
    for (auto& p : params) p.grad.zero();
}

bool ModelParams::all_finite() const {
    for (const auto& p : params)
        if (!p.value.all_finite()) return false;
    return true;
}

double ModelParams::max_abs_difference(const ModelParams& other) const {
    double mx = 0;
    for (size_t i = 0; i < params.size(); ++i)
        for (size_t j = 0; j < params[i].value.d.size(); ++j)
            mx = std::max(mx, std::fabs(params[i].value.d[j] - other.params[i].value.d[j]));
    return mx;
}

ModelParams init_model(const ModelConfig& config) {
    std::mt19937_64 rng(config.seed);
    ModelParams m;
    m.config = config;
    auto add = [&](const std::string& name, int rows, int cols, bool zero = false) {
        Param p;
        p.name = name;
        p.value = zero ? Mat(rows, cols) : glorot_uniform(rows, cols, rng);
        p.grad = Mat(rows, cols);
        m.params.push_back(std::move(p));
    };

    const int h = config.hidden_width;
    for (int l = 0; l < config.gcn_layers; ++l) {
        add("gcn." + std::to_string(l) + ".w", l == 0 ? config.input_width : h, h);
        if (config.gcn_bias) add("gcn." + std::to_string(l) + ".b", 1, h, true);
    }
    add("proj.0.w", h, h);
    add("proj.0.b", 1, h, true);
    add("proj.1.w", h, config.projection_dim);
    add("proj.1.b", 1, config.projection_dim, true);
    // Head halves its width per layer: h -> h/2 -> h/4 -> 5.
    add("head.0.w", h, h / 2);
    add("head.0.b", 1, h / 2, true);
    add("head.1.w", h / 2, h / 4);
    add("head.1.b", 1, h / 4, true);
    add("head.2.w", h / 4, config.head_output);
    add("head.2.b", 1, config.head_output, true);
    return m;
}

GraphBatch make_batch(const std::vector<const EventGraph*>& graphs) {
    int total_nodes = 0;
    for (const auto* g : graphs) total_nodes += g->num_nodes;
    if (graphs.empty() || total_nodes == 0)
        throw std::invalid_argument("make_batch: empty batch");

    const int width = kNodeWidth;
    GraphBatch batch;
    batch.node_features = Mat(total_nodes, width);
    std::vector<std::tuple<int, int, double>> triplets;

    int offset = 0;
    for (const auto* g : graphs) {
        for (int n = 0; n < g->num_nodes; ++n) {
            const float* src = g->row(n);
            double* dst = batch.node_features.d.data() +
                          static_cast<size_t>(offset + n) * width;
            for (int c = 0; c < width; ++c) dst[c] = src[c];
        }
        // Symmetrically normalized adjacency with self-loops.
        std::vector<double> degree(g->num_nodes, 1.0);
        for (const auto& [i, j] : g->edges) {
            degree[i] += 1.0;
            degree[j] += 1.0;
        }
        for (int n = 0; n < g->num_nodes; ++n)
            triplets.emplace_back(offset + n, offset + n, 1.0 / degree[n]);
        for (const auto& [i, j] : g->edges) {
            const double v = 1.0 / std::sqrt(degree[i] * degree[j]);
            triplets.emplace_back(offset + i, offset + j, v);
            triplets.emplace_back(offset + j, offset + i, v);
        }
        batch.ranges.emplace_back(offset, offset + g->num_nodes);
        offset += g->num_nodes;
    }
    batch.adjacency = SpMat::from_triplets(total_nodes, total_nodes, std::move(triplets));
    return batch;
}

namespace {

Tape::Id dense(Tape& tape, const std::map<std::string, Tape::Id>& leaves, Tape::Id x,
               const std::string& stem) {
    Tape::Id y = tape.matmul(x, leaves.at(stem + ".w"));
    auto it = leaves.find(stem + ".b");
    if (it != leaves.end()) y = tape.add_row_broadcast(y, it->second);
    return y;
}

}  // namespace

ForwardNodes gcn_forward(Tape& tape, ModelParams& model, const GraphBatch& batch,
                         std::map<std::string, Tape::Id>* leaf_ids) {
    std::map<std::string, Tape::Id> local;
    std::map<std::string, Tape::Id>& leaves = leaf_ids ? *leaf_ids : local;
    if (leaves.empty())
        for (auto& p : model.params) leaves[p.name] = tape.leaf(p.value, true);

    Tape::Id h = tape.leaf(batch.node_features, false);
    Tape::Id readout = -1;
    for (int l = 0; l < model.config.gcn_layers; ++l) {
        Tape::Id agg = tape.spmm(batch.adjacency, h);
        h = tape.relu(dense(tape, leaves, agg, "gcn." + std::to_string(l)));
        const bool use_layer =
            model.config.readout_all_layers || l == model.config.gcn_layers - 1;
        if (use_layer) {
            Tape::Id pooled = tape.segment_mean(h, batch.ranges);
            readout = readout < 0 ? pooled : tape.add(readout, pooled);
        }
    }
    return {readout};
}

Tape::Id project(Tape& tape, const std::map<std::string, Tape::Id>& leaves, Tape::Id embedding) {
    Tape::Id h = tape.relu(dense(tape, leaves, embedding, "proj.0"));
    return dense(tape, leaves, h, "proj.1");
}

Tape::Id head(Tape& tape, const std::map<std::string, Tape::Id>& leaves, Tape::Id embedding) {
    Tape::Id h = tape.relu(dense(tape, leaves, embedding, "head.0"));
    h = tape.relu(dense(tape, leaves, h, "head.1"));
    return dense(tape, leaves, h, "head.2");
}

void collect_grads(Tape& tape, ModelParams& model, const std::map<std::string, Tape::Id>& leaves) {
    for (auto& p : model.params) {
        const Mat& g = tape.grad(leaves.at(p.name));
        for (size_t i = 0; i < p.grad.d.size(); ++i) p.grad.d[i] += g.d[i];
    }
}

Mat forward_head(ModelParams& model, const GraphBatch& batch) {
    Tape tape;
    std::map<std::string, Tape::Id> leaves;
    for (auto& p : model.params) leaves[p.name] = tape.leaf(p.value, false);
    ForwardNodes f = gcn_forward(tape, model, batch, &leaves);
    return tape.value(head(tape, leaves, f.embedding));
}

Mat forward_projection(ModelParams& model, const GraphBatch& batch) {
    Tape tape;
    std::map<std::string, Tape::Id> leaves;
    for (auto& p : model.params) leaves[p.name] = tape.leaf(p.value, false);
    ForwardNodes f = gcn_forward(tape, model, batch, &leaves);
    return tape.value(project(tape, leaves, f.embedding));
}

void optimizer_step(ModelParams& model, AdamState& state,
                    const std::map<std::string, double>& lr_map, double default_lr) {
    if (state.m.empty()) {
        for (auto& p : model.params) {
            state.m.emplace_back(p.value.rows, p.value.cols);
            state.v.emplace_back(p.value.rows, p.value.cols);
        }
    }
    ++state.step_count;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));

    for (size_t i = 0; i < model.params.size(); ++i) {
        Param& p = model.params[i];
        double lr = default_lr;
        size_t best_len = 0;
        for (const auto& [prefix, rate] : lr_map) {
            if (p.name.rfind(prefix, 0) == 0 && prefix.size() >= best_len) {
                lr = rate;
                best_len = prefix.size();
            }
        }
        if (lr < 0) continue;   // frozen group
        for (size_t j = 0; j < p.value.d.size(); ++j) {
            const double g = p.grad.d[j];
            state.m[i].d[j] = state.beta1 * state.m[i].d[j] + (1 - state.beta1) * g;
            state.v[i].d[j] = state.beta2 * state.v[i].d[j] + (1 - state.beta2) * g * g;
            const double mhat = state.m[i].d[j] / bc1;
            const double vhat = state.v[i].d[j] / bc2;
            p.value.d[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

namespace {
constexpr char kCheckpointMagic[4] = {'C', 'S', 'L', '1'};
}

void save_checkpoint(const ModelParams& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    f.write(kCheckpointMagic, 4);
    auto w32 = [&](int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto w64 = [&](uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    w32(1);   // format version
    w32(model.config.input_width);
    w32(model.config.hidden_width);
    w32(model.config.gcn_layers);
    w32(model.config.gcn_bias ? 1 : 0);
    w32(model.config.projection_dim);
    w32(model.config.head_output);
    w32(model.config.readout_all_layers ? 1 : 0);
    w64(model.config.seed);
    w32(static_cast<int32_t>(model.params.size()));
    for (const auto& p : model.params) {
        w32(static_cast<int32_t>(p.name.size()));
        f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        w32(p.value.rows);
        w32(p.value.cols);
        f.write(reinterpret_cast<const char*>(p.value.d.data()),
                static_cast<std::streamsize>(p.value.d.size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error("bad checkpoint magic: " + path);
    auto r32 = [&]() { int32_t v = 0; f.read(reinterpret_cast<char*>(&v), 4); return v; };
    auto r64 = [&]() { uint64_t v = 0; f.read(reinterpret_cast<char*>(&v), 8); return v; };
    if (r32() != 1) throw std::runtime_error("unsupported checkpoint version: " + path);

    ModelConfig cfg;
    cfg.input_width = r32();
    cfg.hidden_width = r32();
    cfg.gcn_layers = r32();
    cfg.gcn_bias = r32() != 0;
    cfg.projection_dim = r32();
    cfg.head_output = r32();
    cfg.readout_all_layers = r32() != 0;
    cfg.seed = r64();

    ModelParams expected = init_model(cfg);
    const int count = r32();
    if (count != static_cast<int>(expected.params.size()))
        throw std::runtime_error("checkpoint parameter count mismatch: " + path);
    for (auto& p : expected.params) {
        const int name_len = r32();
        std::string name(static_cast<size_t>(name_len), '\0');
        f.read(name.data(), name_len);
        const int rows = r32(), cols = r32();
        if (name != p.name || rows != p.value.rows || cols != p.value.cols)
            throw std::runtime_error("checkpoint shape table mismatch at " + name);
        f.read(reinterpret_cast<char*>(p.value.d.data()),
               static_cast<std::streamsize>(p.value.d.size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    return expected;
}

}  // namespace csiloc
