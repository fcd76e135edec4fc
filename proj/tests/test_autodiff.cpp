#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "csiloc/tensor.hpp"

#include <cmath>
#include <random>

using namespace csiloc;

namespace {

Mat random_mat(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
    Mat m(r, c);
    std::normal_distribution<double> g(0.0, scale);
    for (auto& x : m.d) x = g(rng);
    return m;
}

// Central finite differences against the analytic gradient of a scalar
// function of one leaf matrix.
void check_gradient(const Mat& input, const std::function<Tape::Id(Tape&, Tape::Id)>& f,
                    double tol = 1e-5) {
    Tape tape;
    Tape::Id x = tape.leaf(input, true);
    Tape::Id loss = f(tape, x);
    REQUIRE(tape.value(loss).size() == 1);
    tape.backward(loss);
    const Mat analytic = tape.grad(x);

    const double eps = 1e-6;
    for (size_t i = 0; i < input.size(); ++i) {
        Mat lo = input, hi = input;
        lo.d[i] -= eps;
        hi.d[i] += eps;
        Tape tl, th;
        const double fl = tl.value(f(tl, tl.leaf(lo, false))).d[0];
        const double fh = th.value(f(th, th.leaf(hi, false))).d[0];
        const double numeric = (fh - fl) / (2 * eps);
        const double denom = std::max({std::fabs(numeric), std::fabs(analytic.d[i]), 1.0});
        CHECK(std::fabs(numeric - analytic.d[i]) / denom < tol);
    }
}

}  // namespace

TEST_CASE("d/dw of w^2 at w=3 is 6; gradient of a constant is 0") {
    Tape tape;
    Mat w(1, 1);
    w.d[0] = 3.0;
    Tape::Id x = tape.leaf(w, true);
    Tape::Id c = tape.leaf(w, false);
    Tape::Id loss = tape.sum_all(tape.add(tape.square(x), tape.square(c)));
    tape.backward(loss);
    CHECK(tape.grad(x).d[0] == doctest::Approx(6.0).epsilon(1e-12));
    for (double g : tape.grad(c).d) CHECK(g == 0.0);   // constants accumulate nothing
}

TEST_CASE("elementwise and reduction ops match finite differences") {
    std::mt19937_64 rng(1);
    Mat x = random_mat(4, 3, rng);
    check_gradient(x, [](Tape& t, Tape::Id a) { return t.mean_all(t.square(a)); });
    check_gradient(x, [](Tape& t, Tape::Id a) { return t.sum_all(t.exp(t.scale(a, 0.3))); });
    check_gradient(x, [](Tape& t, Tape::Id a) { return t.sum_all(t.abs(a)); }, 1e-4);
    check_gradient(x, [](Tape& t, Tape::Id a) { return t.sum_all(t.relu(a)); }, 1e-4);
    check_gradient(x, [](Tape& t, Tape::Id a) {
        return t.sum_all(t.log(t.add_scalar(t.square(a), 1.0)));
    });
    check_gradient(x, [](Tape& t, Tape::Id a) { return t.sum_all(t.sum_cols(t.mul(a, a))); });
}

TEST_CASE("matmul and bias broadcast match finite differences") {
    std::mt19937_64 rng(2);
    Mat a = random_mat(3, 4, rng);
    Mat b = random_mat(4, 2, rng);
    Mat bias = random_mat(1, 2, rng);
    check_gradient(a, [&](Tape& t, Tape::Id x) {
        Tape::Id bb = t.leaf(b, false);
        return t.mean_all(t.square(t.matmul(x, bb)));
    });
    check_gradient(b, [&](Tape& t, Tape::Id x) {
        Tape::Id aa = t.leaf(a, false);
        return t.mean_all(t.square(t.matmul(aa, x)));
    });
    std::mt19937_64 rng2(7);
    Mat base = random_mat(5, 2, rng2);
    check_gradient(bias, [&](Tape& t, Tape::Id x) {
        Tape::Id aa = t.leaf(base, false);
        return t.mean_all(t.square(t.add_row_broadcast(aa, x)));
    });
}

TEST_CASE("structural ops: slice, concat, gather, segment mean") {
    std::mt19937_64 rng(3);
    Mat x = random_mat(6, 5, rng);
    check_gradient(x, [](Tape& t, Tape::Id a) {
        return t.mean_all(t.square(t.slice_cols(a, 1, 3)));
    });
    check_gradient(x, [](Tape& t, Tape::Id a) {
        return t.sum_all(t.square(t.concat_rows(a, t.scale(a, -2.0))));
    });
    check_gradient(x, [](Tape& t, Tape::Id a) {
        return t.sum_all(t.square(t.gather_rows(a, {0, 2, 2, 5})));
    });
    check_gradient(x, [](Tape& t, Tape::Id a) {
        return t.sum_all(t.square(t.segment_mean(a, {{0, 2}, {2, 6}})));
    });
}

TEST_CASE("sparse matmul with a constant CSR factor") {
    // The tape reuses the sparse factor for the backward multiply, so the
    // factor must be symmetric (it is always a normalized adjacency there).
    std::mt19937_64 rng(4);
    SpMat s = SpMat::from_triplets(
        4, 4, {{0, 0, 1.0}, {0, 3, -0.5}, {3, 0, -0.5}, {1, 1, 2.0}, {1, 2, 0.25},
               {2, 1, 0.25}, {2, 2, 1.5}});
    Mat x = random_mat(4, 3, rng);

    // value check against dense multiply
    Mat dense(4, 4);
    dense.at(0, 0) = 1.0;
    dense.at(0, 3) = -0.5;
    dense.at(3, 0) = -0.5;
    dense.at(1, 1) = 2.0;
    dense.at(1, 2) = 0.25;
    dense.at(2, 1) = 0.25;
    dense.at(2, 2) = 1.5;
    Mat ref = matmul(dense, x);
    Mat got = spmm(s, x);
    for (size_t i = 0; i < ref.size(); ++i)
        CHECK(got.d[i] == doctest::Approx(ref.d[i]).epsilon(1e-12));

    check_gradient(x, [&](Tape& t, Tape::Id a) {
        return t.mean_all(t.square(t.spmm(s, a)));
    });
}

TEST_CASE("row normalization and the contrastive loss gradient") {
    std::mt19937_64 rng(5);
    Mat z = random_mat(6, 4, rng);
    check_gradient(z, [](Tape& t, Tape::Id a) {
        return t.sum_all(t.square(t.row_l2_normalize(a)));
    });
    check_gradient(z, [](Tape& t, Tape::Id a) {
        return t.nt_xent_from_normalized(t.row_l2_normalize(a), 0.5);
    }, 1e-4);
}

TEST_CASE("row normalization leaves zero rows at zero") {
    Tape tape;
    Mat z(2, 3);
    z.at(1, 0) = 3.0;
    z.at(1, 1) = 4.0;
    Tape::Id n = tape.row_l2_normalize(tape.leaf(z, false));
    const Mat& v = tape.value(n);
    CHECK(v.at(0, 0) == 0.0);
    CHECK(v.at(0, 1) == 0.0);
    CHECK(v.at(1, 0) == doctest::Approx(0.6));
    CHECK(v.at(1, 1) == doctest::Approx(0.8));
}

TEST_CASE("glorot bounds") {
    std::mt19937_64 rng(6);
    Mat w = glorot_uniform(100, 50, rng);
    const double bound = std::sqrt(6.0 / 150.0);
    for (double x : w.d) {
        CHECK(x <= bound);
        CHECK(x >= -bound);
    }
}
