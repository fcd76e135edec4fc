#include "csiloc/features.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace csiloc {

namespace {

void check_indices(const CsiMatrix& m, int rx, int sts) {
    if (rx < 0 || rx >= m.n_rx || sts < 0 || sts >= m.config.n_sts)
        throw std::out_of_range("CSI index out of range");
}

}  // namespace

std::vector<double> csi_magnitude(const CsiMatrix& m, int rx, int sts) {
    check_indices(m, rx, sts);
    std::vector<double> out(m.config.n_sub);
    for (int k = 0; k < m.config.n_sub; ++k) out[k] = std::abs(m.at(rx, sts, k));
    return out;
}

std::vector<double> cir_magnitude(const CsiMatrix& m, int rx, int sts) {
    check_indices(m, rx, sts);
    const int n = m.config.n_sub;
    std::vector<double> out(n);
    // Inverse DFT with 1/N normalization; O(N^2) with a per-call twiddle table.
    std::vector<cdouble> twiddle(n);
    for (int i = 0; i < n; ++i) {
        const double ph = 2.0 * std::numbers::pi * i / n;
        twiddle[i] = {std::cos(ph), std::sin(ph)};
    }
    for (int tap = 0; tap < n; ++tap) {
        cdouble acc{0, 0};
        int idx = 0;
        for (int k = 0; k < n; ++k) {
            acc += m.at(rx, sts, k) * twiddle[idx];
            idx += tap;
            if (idx >= n) idx -= n;
        }
        out[tap] = std::abs(acc) / n;
    }
    return out;
}

std::vector<double> phase_difference(const CsiMatrix& m, int rx_i, int rx_j, int sts) {
    check_indices(m, rx_i, sts);
    check_indices(m, rx_j, sts);
    if (rx_i == rx_j) throw std::invalid_argument("phase_difference needs distinct antennas");
    std::vector<double> out(m.config.n_sub);
    for (int k = 0; k < m.config.n_sub; ++k) {
        const cdouble diff = m.at(rx_i, sts, k) - m.at(rx_j, sts, k);
        out[k] = (diff.real() == 0.0 && diff.imag() == 0.0) ? 0.0 : std::arg(diff);
    }
    return out;
}

std::vector<double> standardize_length(const std::vector<double>& v, int target) {
    if (v.empty()) throw std::invalid_argument("standardize_length: empty input");
    const int n = static_cast<int>(v.size());
    if (n == target) return v;
    std::vector<double> out(target, 0.0);
    if (n < target) {
        std::copy(v.begin(), v.end(), out.begin());
    } else {
        for (int i = 0; i < target; ++i) {
            const int idx = static_cast<int>(
                std::lround(static_cast<double>(i) * (n - 1) / (target - 1)));
            out[i] = v[idx];
        }
    }
    return out;
}

}  // namespace csiloc
