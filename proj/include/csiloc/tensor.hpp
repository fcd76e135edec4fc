// Dense matrices, a fixed-structure sparse matrix, and a tape for
// reverse-mode differentiation. Scalars are 1x1 matrices.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace csiloc {

struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> d;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }
    size_t size() const { return d.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    void zero() { std::fill(d.begin(), d.end(), 0.0); }
    bool all_finite() const;
};

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);

// CSR sparse matrix with fixed values; used for normalized adjacencies.
struct SpMat {
    int rows = 0, cols = 0;
    std::vector<int> row_ptr;   // size rows + 1
    std::vector<int> col_idx;
    std::vector<double> vals;

    static SpMat from_triplets(int rows, int cols,
                               std::vector<std::tuple<int, int, double>> triplets);
};

Mat spmm(const SpMat& s, const Mat& x);

class Tape {
public:
    using Id = int;

    Id leaf(Mat value, bool requires_grad);

    Id matmul(Id a, Id b);
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);                  // elementwise
    Id scale(Id a, double c);
    Id add_scalar(Id a, double c);
    Id add_row_broadcast(Id a, Id row);  // bias: row has shape 1 x cols
    Id relu(Id a);
    Id exp(Id a);
    Id log(Id a);
    Id abs(Id a);
    Id square(Id a);
    Id spmm(const SpMat& s, Id a);       // s is constant
    Id slice_cols(Id a, int start, int count);
    Id concat_rows(Id a, Id b);
    Id gather_rows(Id a, std::vector<int> idx);
    Id sum_cols(Id a);                   // (r x c) -> (r x 1)
    Id mean_all(Id a);                   // -> 1x1
    Id sum_all(Id a);                    // -> 1x1
    // Per-graph mean pooling: ranges[i] = [start, end) of graph i's rows.
    Id segment_mean(Id a, std::vector<std::pair<int, int>> ranges);
    // Rowwise L2 normalization; all-zero rows stay zero.
    Id row_l2_normalize(Id a);
    // NT-Xent over 2N normalized embeddings; row i pairs with row (i+N) mod 2N.
    Id nt_xent_from_normalized(Id zn, double temperature);

    const Mat& value(Id id) const { return nodes_[id].value; }
    const Mat& grad(Id id) const { return nodes_[id].grad; }

    // Reverse pass from a scalar node; fixed accumulation order.
    void backward(Id loss);

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        std::function<void(Tape&, Id)> back;   // pushes into input grads
    };

    Id push(Mat value, bool requires_grad, std::function<void(Tape&, Id)> back);
    std::vector<Node> nodes_;
};

// Glorot-uniform initialization in +-sqrt(6 / (fan_in + fan_out)).
Mat glorot_uniform(int rows, int cols, std::mt19937_64& rng);

}  // namespace csiloc
