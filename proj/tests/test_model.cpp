#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "csiloc/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

using namespace csiloc;

namespace {

ModelConfig small_arch() {
    ModelConfig a;
    a.input_width = kNodeWidth;
    a.hidden_width = 16;
    a.projection_dim = 8;
    a.seed = 3;
    return a;
}

EventGraph random_graph(int n_nodes, uint64_t seed) {
    EventGraph g;
    g.num_nodes = n_nodes;
    g.node_features.assign(static_cast<size_t>(n_nodes) * kNodeWidth, 0.0f);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    for (auto& x : g.node_features) x = static_cast<float>(gauss(rng) * 0.1);
    std::uniform_int_distribution<int> pick(0, n_nodes - 1);
    for (int i = 1; i < n_nodes; ++i) {
        int j = std::uniform_int_distribution<int>(0, i - 1)(rng);
        g.edges.emplace_back(j, i);
    }
    std::sort(g.edges.begin(), g.edges.end());
    return g;
}

}  // namespace

TEST_CASE("model shapes follow the width schedule") {
    ModelConfig a;   // defaults: 250 -> 256 x4, proj 128, head 5
    ModelParams m = init_model(a);
    CHECK(m.find("gcn.0.w").value.rows == 250);
    CHECK(m.find("gcn.0.w").value.cols == 256);
    CHECK(m.find("gcn.3.w").value.rows == 256);
    CHECK(m.find("proj.0.w").value.cols == 256);
    CHECK(m.find("proj.1.w").value.cols == 128);
    CHECK(m.find("head.0.w").value.cols == 128);
    CHECK(m.find("head.1.w").value.cols == 64);
    CHECK(m.find("head.2.w").value.cols == 5);
    CHECK(m.all_finite());
}

TEST_CASE("forward shapes: embedding, projection, head") {
    ModelParams m = init_model(small_arch());
    auto g1 = random_graph(6, 1);
    auto g2 = random_graph(9, 2);
    GraphBatch batch = make_batch({&g1, &g2});
    Mat d = forward_head(m, batch);
    CHECK(d.rows == 2);
    CHECK(d.cols == 5);
    Mat z = forward_projection(m, batch);
    CHECK(z.rows == 2);
    CHECK(z.cols == 8);
}

TEST_CASE("graph embedding is invariant to node relabeling") {
    ModelParams m = init_model(small_arch());
    auto g = random_graph(8, 5);

    // permuted copy
    std::vector<int> perm{3, 1, 7, 0, 6, 2, 5, 4};
    EventGraph p = g;
    for (int old_idx = 0; old_idx < 8; ++old_idx)
        for (int c = 0; c < kNodeWidth; ++c)
            p.row(perm[old_idx])[c] = g.row(old_idx)[c];
    p.edges.clear();
    for (auto [a, b] : g.edges) {
        int x = perm[a], y = perm[b];
        p.edges.emplace_back(std::min(x, y), std::max(x, y));
    }
    std::sort(p.edges.begin(), p.edges.end());

    GraphBatch b1 = make_batch({&g});
    GraphBatch b2 = make_batch({&p});
    Mat d1 = forward_head(m, b1);
    Mat d2 = forward_head(m, b2);
    for (size_t i = 0; i < d1.size(); ++i)
        CHECK(std::fabs(d1.d[i] - d2.d[i]) < 1e-9);
}

TEST_CASE("batched graphs are independent") {
    ModelParams m = init_model(small_arch());
    auto g1 = random_graph(5, 11);
    auto g2 = random_graph(12, 12);
    auto g3 = random_graph(7, 13);
    Mat together = forward_head(m, make_batch({&g1, &g2, &g3}));
    Mat alone = forward_head(m, make_batch({&g2}));
    for (int c = 0; c < 5; ++c)
        CHECK(together.at(1, c) == doctest::Approx(alone.at(0, c)).epsilon(1e-12));

    // two identical graphs in one batch embed identically
    Mat twice = forward_head(m, make_batch({&g1, &g1}));
    for (int c = 0; c < 5; ++c)
        CHECK(twice.at(0, c) == twice.at(1, c));
}

TEST_CASE("adam: zero grad no-op, first-step magnitude, group scaling") {
    ModelParams m = init_model(small_arch());
    ModelParams before = m;
    AdamState state;

    SUBCASE("zero gradient leaves parameters unchanged") {
        m.zero_grads();
        optimizer_step(m, state, {}, 0.01);
        CHECK(m.max_abs_difference(before) == 0.0);
    }
    SUBCASE("constant gradient, first step magnitude is about lr") {
        m.zero_grads();
        for (auto& p : m.params)
            for (auto& g : p.grad.d) g = 0.37;
        optimizer_step(m, state, {}, 0.01);
        for (size_t pi = 0; pi < m.params.size(); ++pi)
            for (size_t i = 0; i < m.params[pi].value.size(); ++i) {
                const double step = before.params[pi].value.d[i] - m.params[pi].value.d[i];
                CHECK(step == doctest::Approx(0.01).epsilon(1e-4));
            }
    }
    SUBCASE("per-group rates scale steps 1:10") {
        m.zero_grads();
        for (auto& p : m.params)
            for (auto& g : p.grad.d) g = 1.0;
        optimizer_step(m, state, {{"gcn.0", 0.001}, {"gcn.1", 0.01}}, 0.0);
        const double s0 = std::fabs(before.find("gcn.0.w").value.d[0] - m.find("gcn.0.w").value.d[0]);
        const double s1 = std::fabs(before.find("gcn.1.w").value.d[0] - m.find("gcn.1.w").value.d[0]);
        CHECK(s1 / s0 == doctest::Approx(10.0).epsilon(1e-6));
    }
    SUBCASE("negative rate freezes the group") {
        m.zero_grads();
        for (auto& p : m.params)
            for (auto& g : p.grad.d) g = 1.0;
        optimizer_step(m, state, {{"proj", -1.0}}, 0.01);
        CHECK(m.find("proj.0.w").value.d == before.find("proj.0.w").value.d);
        CHECK(m.find("gcn.0.w").value.d != before.find("gcn.0.w").value.d);
    }
}

TEST_CASE("gradients flow through the full stack") {
    ModelParams m = init_model(small_arch());
    auto g1 = random_graph(6, 21);
    auto g2 = random_graph(8, 22);
    GraphBatch batch = make_batch({&g1, &g2});
    Tape tape;
    std::map<std::string, Tape::Id> leaves;
    auto fwd = gcn_forward(tape, m, batch, &leaves);
    Tape::Id d = head(tape, leaves, fwd.embedding);
    Tape::Id loss = tape.mean_all(tape.square(d));
    tape.backward(loss);
    collect_grads(tape, m, leaves);
    bool any_gcn = false, any_head = false;
    for (const auto& p : m.params) {
        double mx = 0;
        for (double x : p.grad.d) mx = std::max(mx, std::fabs(x));
        if (p.name.rfind("gcn.", 0) == 0 && mx > 0) any_gcn = true;
        if (p.name.rfind("head.", 0) == 0 && mx > 0) any_head = true;
    }
    CHECK(any_gcn);
    CHECK(any_head);
}

TEST_CASE("checkpoint round trip and shape validation") {
    ModelParams m = init_model(small_arch());
    const char* path = "model_roundtrip.ckpt";
    save_checkpoint(m, path);
    ModelParams back = load_checkpoint(path);
    CHECK(back.config.hidden_width == 16);
    CHECK(m.max_abs_difference(back) == 0.0);

    // truncated file must be refused
    {
        FILE* f = std::fopen(path, "rb");
        std::fseek(f, 0, SEEK_END);
        const long n = std::ftell(f) / 2;
        std::fseek(f, 0, SEEK_SET);
        std::vector<char> half(n);
        REQUIRE(std::fread(half.data(), 1, n, f) == static_cast<size_t>(n));
        std::fclose(f);
        f = std::fopen("model_truncated.ckpt", "wb");
        std::fwrite(half.data(), 1, n, f);
        std::fclose(f);
    }
    CHECK_THROWS(load_checkpoint("model_truncated.ckpt"));
    std::remove(path);
    std::remove("model_truncated.ckpt");
}

TEST_CASE("final-layer-only readout differs from all-layer readout") {
    ModelConfig a = small_arch();
    ModelParams m = init_model(a);
    auto g = random_graph(7, 31);
    Mat all = forward_head(m, make_batch({&g}));
    m.config.readout_all_layers = false;
    Mat last = forward_head(m, make_batch({&g}));
    double diff = 0;
    for (size_t i = 0; i < all.size(); ++i) diff = std::max(diff, std::fabs(all.d[i] - last.d[i]));
    CHECK(diff > 0);
}
