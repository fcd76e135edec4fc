#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "csiloc/finetune.hpp"

#include <cmath>
#include <random>

using namespace csiloc;

namespace {

double kl_value(const Mat& pred, const Mat& raw, const Mat& truth, bool standard = false) {
    Tape tape;
    Tape::Id loss = kl_confidence_loss(tape, tape.leaf(pred, false), tape.leaf(raw, false),
                                       truth, standard);
    return tape.value(loss).d[0];
}

EventGraph labeled_graph(uint64_t seed, double x, double y, int floor) {
    EventGraph g;
    g.num_nodes = 5;
    g.node_features.assign(5 * static_cast<size_t>(kNodeWidth), 0.0f);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    for (auto& v : g.node_features) v = static_cast<float>(gauss(rng) * 0.1);
    for (int i = 1; i < 5; ++i) g.edges.emplace_back(i - 1, i);
    g.truth = Position{x, y, floor};
    return g;
}

}  // namespace

TEST_CASE("confidence loss worked examples") {
    Mat pred(1, 1), raw(1, 1), truth(1, 1);
    // perfect prediction, sigma = exp(0) = 1
    CHECK(kl_value(pred, raw, truth) == doctest::Approx(0.0).epsilon(1e-12));
    // residual 2, sigma = 1: 0 + 4/2 = 2
    truth.at(0, 0) = 2.0;
    CHECK(kl_value(pred, raw, truth) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("the halved-log form is minimized at sigma^2 = 2 r^2") {
    // d/dsigma [0.5 log(sigma) + r^2/(2 sigma^2)] = 0  =>  sigma^2 = 2 r^2
    const double r = 1.7;
    Mat pred(1, 1), truth(1, 1), raw(1, 1);
    truth.at(0, 0) = r;
    const double opt_raw = 0.5 * std::log(2.0 * r * r);
    raw.at(0, 0) = opt_raw;
    const double at_opt = kl_value(pred, raw, truth);
    for (double delta : {-0.3, -0.05, 0.05, 0.3}) {
        raw.at(0, 0) = opt_raw + delta;
        CHECK(kl_value(pred, raw, truth) > at_opt);
    }
}

TEST_CASE("standard-nll ablation changes only the log coefficient") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    Mat pred(8, 1), raw(8, 1), truth(8, 1);
    for (auto* m : {&pred, &raw, &truth})
        for (auto& x : m->d) x = g(rng);
    double log_mean = 0;
    for (int i = 0; i < 8; ++i) log_mean += raw.at(i, 0);
    log_mean /= 8;   // log(sigma) = raw
    CHECK(kl_value(pred, raw, truth, true) - kl_value(pred, raw, truth, false) ==
          doctest::Approx(0.5 * log_mean).epsilon(1e-9));
}

TEST_CASE("with sigma = 1 the full loss reduces to half squared error plus floor L1") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    Mat d(16, 5), truth(16, 3);
    for (auto& x : d.d) x = g(rng);
    for (auto& x : truth.d) x = g(rng) * 3;
    for (int r = 0; r < 16; ++r) {
        d.at(r, 3) = 0.0;   // raw sigma 0 -> sigma 1
        d.at(r, 4) = 0.0;
    }
    Tape tape;
    Tape::Id loss = finetune_loss(tape, tape.leaf(d, false), truth);
    double expect = 0;
    for (int r = 0; r < 16; ++r) {
        const double rx = truth.at(r, 0) - d.at(r, 0);
        const double ry = truth.at(r, 1) - d.at(r, 1);
        expect += 0.5 * rx * rx + 0.5 * ry * ry + std::fabs(truth.at(r, 2) - d.at(r, 2));
    }
    expect /= 16;
    CHECK(tape.value(loss).d[0] == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("penalty grows with the residual at fixed sigma") {
    Mat pred(1, 1), raw(1, 1), truth(1, 1);
    double prev = -1;
    for (double r : {0.0, 0.5, 1.0, 2.0, 4.0}) {
        truth.at(0, 0) = r;
        const double v = kl_value(pred, raw, truth);
        CHECK(v > prev);
        prev = v;
    }
}

TEST_CASE("confidence loss gradients match finite differences") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    Mat d(6, 5), truth(6, 3);
    for (auto& x : d.d) x = g(rng);
    for (auto& x : truth.d) x = g(rng);

    Tape tape;
    Tape::Id leaf = tape.leaf(d, true);
    tape.backward(finetune_loss(tape, leaf, truth));
    const Mat& analytic = tape.grad(leaf);

    const double eps = 1e-5;
    for (size_t i = 0; i < d.size(); ++i) {
        Mat lo = d, hi = d;
        lo.d[i] -= eps;
        hi.d[i] += eps;
        Tape tl, th;
        const double fl = tl.value(finetune_loss(tl, tl.leaf(lo, false), truth)).d[0];
        const double fh = th.value(finetune_loss(th, th.leaf(hi, false), truth)).d[0];
        const double numeric = (fh - fl) / (2 * eps);
        const double denom = std::max({std::fabs(numeric), std::fabs(analytic.d[i]), 1e-3});
        CHECK(std::fabs(numeric - analytic.d[i]) / denom < 1e-3);
    }
}

TEST_CASE("prediction rows expose exp-mapped confidence scales") {
    double row[5] = {3.0, -1.0, 2.4, 0.0, std::log(2.0)};
    Prediction p = prediction_from_row(row);
    CHECK(p.x == 3.0);
    CHECK(p.y == -1.0);
    CHECK(p.floor == 2.4);
    CHECK(p.sigma_x == doctest::Approx(1.0));
    CHECK(p.sigma_y == doctest::Approx(2.0));
}

TEST_CASE("fine-tuning produces distinct members and never touches the projection head") {
    ModelConfig arch;
    arch.hidden_width = 16;
    arch.projection_dim = 8;
    arch.seed = 9;
    ModelParams pretrained = init_model(arch);

    std::vector<EventGraph> graphs;
    for (int i = 0; i < 40; ++i)
        graphs.push_back(labeled_graph(500 + i, i % 10, i % 7, 0));
    LabeledGraphSet set;
    for (int i = 0; i < 32; ++i) set.train.push_back(&graphs[i]);
    for (int i = 32; i < 36; ++i) set.val.push_back(&graphs[i]);
    for (int i = 36; i < 40; ++i) set.test.push_back(&graphs[i]);

    FinetuneConfig cfg;
    cfg.ensemble_size = 3;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    auto result = finetune_run(pretrained, set, cfg);
    REQUIRE(result.members.size() == 3);
    for (size_t a = 0; a < result.members.size(); ++a) {
        // projection head bit-identical to the pretrained encoder
        for (const char* name : {"proj.0.w", "proj.0.b", "proj.1.w", "proj.1.b"})
            CHECK(result.members[a].find(name).value.d == pretrained.find(name).value.d);
        CHECK(result.members[a].all_finite());
        for (size_t b = a + 1; b < result.members.size(); ++b)
            CHECK(result.members[a].max_abs_difference(result.members[b]) > 0.0);
    }
    // seeds induce divergence from the shared initialization
    for (const auto& m : result.members)
        CHECK(m.max_abs_difference(pretrained) > 0.0);

    // deterministic under a fixed base seed
    auto again = finetune_run(pretrained, set, cfg);
    for (size_t z = 0; z < result.members.size(); ++z)
        CHECK(result.members[z].max_abs_difference(again.members[z]) == 0.0);
}

TEST_CASE("empty labeled set is rejected") {
    ModelConfig arch;
    arch.hidden_width = 16;
    arch.projection_dim = 8;
    ModelParams pretrained = init_model(arch);
    LabeledGraphSet empty;
    FinetuneConfig cfg;
    CHECK_THROWS(finetune_run(pretrained, empty, cfg));
}
