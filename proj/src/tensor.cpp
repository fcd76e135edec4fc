#include "csiloc/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <tuple>

namespace csiloc {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using CEMap = Eigen::Map<const EMat>;

CEMap map(const Mat& m) { return CEMap(m.d.data(), m.rows, m.cols); }
EMap map(Mat& m) { return EMap(m.d.data(), m.rows, m.cols); }

}  // namespace

bool Mat::all_finite() const {
    for (double v : d)
        if (!std::isfinite(v)) return false;
    return true;
}

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
    Mat out(a.rows, b.cols);
    map(out).noalias() = map(a) * map(b);
    return out;
}

Mat transpose(const Mat& a) {
    Mat out(a.cols, a.rows);
    map(out) = map(a).transpose();
    return out;
}

SpMat SpMat::from_triplets(int rows, int cols,
                           std::vector<std::tuple<int, int, double>> triplets) {
    std::sort(triplets.begin(), triplets.end());
    SpMat s;
    s.rows = rows;
    s.cols = cols;
    s.row_ptr.assign(rows + 1, 0);
    for (const auto& [r, c, v] : triplets) ++s.row_ptr[r + 1];
    for (int r = 0; r < rows; ++r) s.row_ptr[r + 1] += s.row_ptr[r];
    s.col_idx.reserve(triplets.size());
    s.vals.reserve(triplets.size());
    for (const auto& [r, c, v] : triplets) {
        s.col_idx.push_back(c);
        s.vals.push_back(v);
    }
    return s;
}

Mat spmm(const SpMat& s, const Mat& x) {
    if (s.cols != x.rows) throw std::invalid_argument("spmm: shape mismatch");
    Mat out(s.rows, x.cols);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < s.rows; ++r) {
        double* dst = out.d.data() + static_cast<size_t>(r) * x.cols;
        for (int p = s.row_ptr[r]; p < s.row_ptr[r + 1]; ++p) {
            const double w = s.vals[p];
            const double* src = x.d.data() + static_cast<size_t>(s.col_idx[p]) * x.cols;
            for (int c = 0; c < x.cols; ++c) dst[c] += w * src[c];
        }
    }
    return out;
}

Tape::Id Tape::push(Mat value, bool requires_grad, std::function<void(Tape&, Id)> back) {
    Node n;
    n.grad = Mat(value.rows, value.cols);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
}

Tape::Id Tape::leaf(Mat value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
}

Tape::Id Tape::matmul(Id a, Id b) {
    Mat out = csiloc::matmul(nodes_[a].value, nodes_[b].value);
    const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    return push(std::move(out), rg, [a, b](Tape& t, Id self) {
        const Mat& g = t.nodes_[self].grad;
        if (t.nodes_[a].requires_grad)
            map(t.nodes_[a].grad).noalias() += map(g) * map(t.nodes_[b].value).transpose();
        if (t.nodes_[b].requires_grad)
            map(t.nodes_[b].grad).noalias() += map(t.nodes_[a].value).transpose() * map(g);
    });
}

Tape::Id Tape::add(Id a, Id b) {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
        throw std::invalid_argument("add: shape mismatch");
    Mat out = nodes_[a].value;
    map(out) += map(nodes_[b].value);
    const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    return push(std::move(out), rg, [a, b](Tape& t, Id self) {
        const Mat& g = t.nodes_[self].grad;
        if (t.nodes_[a].requires_grad) map(t.nodes_[a].grad) += map(g);
        if (t.nodes_[b].requires_grad) map(t.nodes_[b].grad) += map(g);
    });
}

Tape::Id Tape::sub(Id a, Id b) {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
        throw std::invalid_argument("sub: shape mismatch");
    Mat out = nodes_[a].value;
    map(out) -= map(nodes_[b].value);
    const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    return push(std::move(out), rg, [a, b](Tape& t, Id self) {
        const Mat& g = t.nodes_[self].grad;
        if (t.nodes_[a].requires_grad) map(t.nodes_[a].grad) += map(g);
        if (t.nodes_[b].requires_grad) map(t.nodes_[b].grad) -= map(g);
    });
}

Tape::Id Tape::mul(Id a, Id b) {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
        throw std::invalid_argument("mul: shape mismatch");
    Mat out = nodes_[a].value;
    map(out).array() *= map(nodes_[b].value).array();
    const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    return push(std::move(out), rg, [a, b](Tape& t, Id self) {
        const Mat& g = t.nodes_[self].grad;
        if (t.nodes_[a].requires_grad)
            map(t.nodes_[a].grad).array() += map(g).array() * map(t.nodes_[b].value).array();
        if (t.nodes_[b].requires_grad)
            map(t.nodes_[b].grad).array() += map(g).array() * map(t.nodes_[a].value).array();
    });
}

Tape::Id Tape::scale(Id a, double c) {
    Mat out = nodes_[a].value;
    map(out) *= c;
    return push(std::move(out), nodes_[a].requires_grad, [a, c](Tape& t, Id self) {
        if (t.nodes_[a].requires_grad)
            map(t.nodes_[a].grad) += c * map(t.nodes_[self].grad);
    });
}

Tape::Id Tape::add_scalar(Id a, double c) {
    Mat out = nodes_[a].value;
    map(out).array() += c;
    return push(std::move(out), nodes_[a].requires_grad, [a](Tape& t, Id self) {
        if (t.nodes_[a].requires_grad)
            map(t.nodes_[a].grad) += map(t.nodes_[self].grad);
    });
}

Tape::Id Tape::add_row_broadcast(Id a, Id row) {
    const Mat& av = nodes_[a].value;
    const Mat& rv = nodes_[row].value;
    if (rv.rows != 1 || rv.cols != av.cols)
        throw std::invalid_argument("add_row_broadcast: shape mismatch");
    Mat out = av;
    map(out).rowwise() += CEMap(rv.d.data(), 1, rv.cols).row(0);
    const bool rg = nodes_[a].requires_grad || nodes_[row].requires_grad;
    return push(std::move(out), rg, [a, row](Tape& t, Id self) {
        const Mat& g = t.nodes_[self].grad;
        if (t.nodes_[a].requires_grad) map(t.nodes_[a].grad) += map(g);
        if (t.nodes_[row].requires_grad)
            map(t.nodes_[row].grad).row(0) += map(g).colwise().sum();
    });
}

Tape::Id Tape::relu(Id a) {
    Mat out = nodes_[a].value;
    for (double& v : out.d) v = v > 0 ? v : 0.0;
    return push(std::move(out), nodes_[a].requires_grad, [a](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        const Mat& g = t.nodes_[self].grad;
        const Mat& x = t.nodes_[a].value;
        Mat& ga = t.nodes_[a].grad;
        for (size_t i = 0; i < g.d.size(); ++i)
            if (x.d[i] > 0) ga.d[i] += g.d[i];
    });
}

Tape::Id Tape::exp(Id a) {
    Mat out = nodes_[a].value;
    for (double& v : out.d) v = std::exp(v);
    return push(std::move(out), nodes_[a].requires_grad, [a](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        const Mat& g = t.nodes_[self].grad;
        const Mat& y = t.nodes_[self].value;
        Mat& ga = t.nodes_[a].grad;
        for (size_t i = 0; i < g.d.size(); ++i) ga.d[i] += g.d[i] * y.d[i];
    });
}

Tape::Id Tape::log(Id a) {
    Mat out = nodes_[a].value;
    for (double& v : out.d) v = std::log(v);
    return push(std::move(out), nodes_[a].requires_grad, [a](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        const Mat& g = t.nodes_[self].grad;
        const Mat& x = t.nodes_[a].value;
        Mat& ga = t.nodes_[a].grad;
        for (size_t i = 0; i < g.d.size(); ++i) ga.d[i] += g.d[i] / x.d[i];
    });
}

Tape::Id Tape::abs(Id a) {
    Mat out = nodes_[a].value;
    for (double& v : out.d) v = std::fabs(v);
    return push(std::move(out), nodes_[a].requires_grad, [a](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        const Mat& g = t.nodes_[self].grad;
        const Mat& x = t.nodes_[a].value;
        Mat& ga = t.nodes_[a].grad;
        for (size_t i = 0; i < g.d.size(); ++i)
            ga.d[i] += g.d[i] * (x.d[i] > 0 ? 1.0 : (x.d[i] < 0 ? -1.0 : 0.0));
    });
}

Tape::Id Tape::square(Id a) {
    Mat out = nodes_[a].value;
    for (double& v : out.d) v = v * v;
    return push(std::move(out), nodes_[a].requires_grad, [a](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        const Mat& g = t.nodes_[self].grad;
        const Mat& x = t.nodes_[a].value;
        Mat& ga = t.nodes_[a].grad;
        for (size_t i = 0; i < g.d.size(); ++i) ga.d[i] += 2.0 * g.d[i] * x.d[i];
    });
}

Tape::Id Tape::spmm(const SpMat& s, Id a) {
    Mat out = csiloc::spmm(s, nodes_[a].value);
    // Adjacency is symmetric, so the backward multiply reuses s directly.
    return push(std::move(out), nodes_[a].requires_grad, [&s, a](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        Mat gin = csiloc::spmm(s, t.nodes_[self].grad);
        map(t.nodes_[a].grad) += map(gin);
    });
}

Tape::Id Tape::slice_cols(Id a, int start, int count) {
    const Mat& x = nodes_[a].value;
    if (start < 0 || start + count > x.cols)
        throw std::invalid_argument("slice_cols: out of range");
    Mat out(x.rows, count);
    for (int r = 0; r < x.rows; ++r)
        for (int c = 0; c < count; ++c) out.at(r, c) = x.at(r, start + c);
    return push(std::move(out), nodes_[a].requires_grad, [a, start, count](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        const Mat& g = t.nodes_[self].grad;
        Mat& ga = t.nodes_[a].grad;
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < count; ++c) ga.at(r, start + c) += g.at(r, c);
    });
}

Tape::Id Tape::concat_rows(Id a, Id b) {
    const Mat& x = nodes_[a].value;
    const Mat& y = nodes_[b].value;
    if (x.cols != y.cols) throw std::invalid_argument("concat_rows: column mismatch");
    Mat out(x.rows + y.rows, x.cols);
    std::copy(x.d.begin(), x.d.end(), out.d.begin());
    std::copy(y.d.begin(), y.d.end(), out.d.begin() + x.d.size());
    const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    return push(std::move(out), rg, [a, b](Tape& t, Id self) {
        const Mat& g = t.nodes_[self].grad;
        const Mat& x = t.nodes_[a].value;
        if (t.nodes_[a].requires_grad)
            for (size_t i = 0; i < x.d.size(); ++i) t.nodes_[a].grad.d[i] += g.d[i];
        if (t.nodes_[b].requires_grad) {
            Mat& gb = t.nodes_[b].grad;
            for (size_t i = 0; i < gb.d.size(); ++i) gb.d[i] += g.d[x.d.size() + i];
        }
    });
}

Tape::Id Tape::gather_rows(Id a, std::vector<int> idx) {
    const Mat& x = nodes_[a].value;
    Mat out(static_cast<int>(idx.size()), x.cols);
    for (size_t r = 0; r < idx.size(); ++r)
        for (int c = 0; c < x.cols; ++c) out.at(static_cast<int>(r), c) = x.at(idx[r], c);
    return push(std::move(out), nodes_[a].requires_grad,
                [a, idx = std::move(idx)](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        const Mat& g = t.nodes_[self].grad;
        Mat& ga = t.nodes_[a].grad;
        for (size_t r = 0; r < idx.size(); ++r)
            for (int c = 0; c < g.cols; ++c)
                ga.at(idx[r], c) += g.at(static_cast<int>(r), c);
    });
}

Tape::Id Tape::sum_cols(Id a) {
    const Mat& x = nodes_[a].value;
    Mat out(x.rows, 1);
    for (int r = 0; r < x.rows; ++r) {
        double s = 0;
        for (int c = 0; c < x.cols; ++c) s += x.at(r, c);
        out.at(r, 0) = s;
    }
    return push(std::move(out), nodes_[a].requires_grad, [a](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        const Mat& g = t.nodes_[self].grad;
        Mat& ga = t.nodes_[a].grad;
        for (int r = 0; r < ga.rows; ++r)
            for (int c = 0; c < ga.cols; ++c) ga.at(r, c) += g.at(r, 0);
    });
}

Tape::Id Tape::sum_all(Id a) {
    const Mat& x = nodes_[a].value;
    Mat out(1, 1);
    double s = 0;
    for (double v : x.d) s += v;
    out.at(0, 0) = s;
    return push(std::move(out), nodes_[a].requires_grad, [a](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        const double g = t.nodes_[self].grad.at(0, 0);
        for (double& v : t.nodes_[a].grad.d) v += g;
    });
}

Tape::Id Tape::mean_all(Id a) {
    const size_t n = nodes_[a].value.size();
    return scale(sum_all(a), 1.0 / static_cast<double>(n));
}

Tape::Id Tape::segment_mean(Id a, std::vector<std::pair<int, int>> ranges) {
    const Mat& x = nodes_[a].value;
    Mat out(static_cast<int>(ranges.size()), x.cols);
    for (size_t g = 0; g < ranges.size(); ++g) {
        const auto [s, e] = ranges[g];
        const double inv = 1.0 / std::max(1, e - s);
        for (int r = s; r < e; ++r)
            for (int c = 0; c < x.cols; ++c)
                out.at(static_cast<int>(g), c) += x.at(r, c) * inv;
    }
    return push(std::move(out), nodes_[a].requires_grad,
                [a, ranges = std::move(ranges)](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        const Mat& g = t.nodes_[self].grad;
        Mat& ga = t.nodes_[a].grad;
        for (size_t i = 0; i < ranges.size(); ++i) {
            const auto [s, e] = ranges[i];
            const double inv = 1.0 / std::max(1, e - s);
            for (int r = s; r < e; ++r)
                for (int c = 0; c < g.cols; ++c)
                    ga.at(r, c) += g.at(static_cast<int>(i), c) * inv;
        }
    });
}

Tape::Id Tape::row_l2_normalize(Id a) {
    const Mat& x = nodes_[a].value;
    Mat out(x.rows, x.cols);
    std::vector<double> norms(x.rows, 0.0);
    for (int r = 0; r < x.rows; ++r) {
        double s = 0;
        for (int c = 0; c < x.cols; ++c) s += x.at(r, c) * x.at(r, c);
        norms[r] = std::sqrt(s);
        const double inv = norms[r] > 0 ? 1.0 / norms[r] : 0.0;
        for (int c = 0; c < x.cols; ++c) out.at(r, c) = x.at(r, c) * inv;
    }
    return push(std::move(out), nodes_[a].requires_grad,
                [a, norms = std::move(norms)](Tape& t, Id self) {
        if (!t.nodes_[a].requires_grad) return;
        const Mat& g = t.nodes_[self].grad;
        const Mat& y = t.nodes_[self].value;   // normalized rows
        Mat& ga = t.nodes_[a].grad;
        for (int r = 0; r < g.rows; ++r) {
            if (norms[r] == 0) continue;
            double dot = 0;
            for (int c = 0; c < g.cols; ++c) dot += g.at(r, c) * y.at(r, c);
            const double inv = 1.0 / norms[r];
            for (int c = 0; c < g.cols; ++c)
                ga.at(r, c) += inv * (g.at(r, c) - dot * y.at(r, c));
        }
    });
}

Tape::Id Tape::nt_xent_from_normalized(Id zn, double temperature) {
    const Mat& z = nodes_[zn].value;
    const int n2 = z.rows;
    if (n2 < 4 || n2 % 2 != 0)
        throw std::invalid_argument("nt_xent: needs an even batch of at least 4 rows");
    const int n = n2 / 2;

    Mat sim = csiloc::matmul(z, transpose(z));
    map(sim) /= temperature;

    // Off-diagonal softmax per anchor row.
    Mat soft(n2, n2);
    double loss = 0;
    for (int r = 0; r < n2; ++r) {
        double mx = -1e300;
        for (int c = 0; c < n2; ++c)
            if (c != r) mx = std::max(mx, sim.at(r, c));
        double den = 0;
        for (int c = 0; c < n2; ++c) {
            if (c == r) continue;
            soft.at(r, c) = std::exp(sim.at(r, c) - mx);
            den += soft.at(r, c);
        }
        for (int c = 0; c < n2; ++c)
            if (c != r) soft.at(r, c) /= den;
        const int p = (r + n) % n2;
        loss += std::log(den) + mx - sim.at(r, p);
    }
    loss /= n2;

    Mat out(1, 1);
    out.at(0, 0) = loss;
    return push(std::move(out), nodes_[zn].requires_grad,
                [zn, soft = std::move(soft), temperature, n](Tape& t, Id self) {
        if (!t.nodes_[zn].requires_grad) return;
        const double g0 = t.nodes_[self].grad.at(0, 0);
        const Mat& z = t.nodes_[zn].value;
        const int n2 = z.rows;
        // dL/dS, then dL/dZ = (G + G^T) Z / tau.
        Mat gs(n2, n2);
        const double w = g0 / n2;
        for (int r = 0; r < n2; ++r) {
            const int p = (r + n) % n2;
            for (int c = 0; c < n2; ++c) {
                if (c == r) continue;
                gs.at(r, c) = w * (soft.at(r, c) - (c == p ? 1.0 : 0.0));
            }
        }
        Mat gsym = gs;
        map(gsym) += map(gs).transpose().eval();
        Mat gz = csiloc::matmul(gsym, z);
        map(gz) /= temperature;
        map(t.nodes_[zn].grad) += map(gz);
    });
}

void Tape::backward(Id loss) {
    if (nodes_[loss].value.rows != 1 || nodes_[loss].value.cols != 1)
        throw std::invalid_argument("backward: loss must be scalar");
    nodes_[loss].grad.at(0, 0) = 1.0;
    for (Id i = loss; i >= 0; --i) {
        if (nodes_[i].back && nodes_[i].requires_grad) nodes_[i].back(*this, i);
    }
}

Mat glorot_uniform(int rows, int cols, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    Mat out(rows, cols);
    for (double& v : out.d) v = u(rng);
    return out;
}

}  // namespace csiloc
