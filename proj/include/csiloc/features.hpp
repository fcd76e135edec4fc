// Per-link node features: CSI magnitude, CIR magnitude, inter-antenna phase
// difference, each standardized to length 245.
#pragma once

#include "csiloc/sim.hpp"

#include <vector>

namespace csiloc {

inline constexpr int kFeatureLength = 245;

enum class FeatureKind { csi_mag = 0, cir_mag = 1, phase_diff = 2 };

struct FeatureVector {
    FeatureKind kind = FeatureKind::csi_mag;
    std::vector<double> values;   // length kFeatureLength after standardize
    double ap_x = 0, ap_y = 0;
    int ap_floor = 0;
    double center_frequency = 0;
    double rssi_dbm = 0;
    int ap_id = 0;
    int matrix_index = 0;         // index of the parent matrix within its event
    int rx = 0, rx_pair_second = -1;
    int sts = 0;
};

std::vector<double> csi_magnitude(const CsiMatrix& m, int rx, int sts);

// Magnitude of the inverse DFT of the subcarrier row, 1/N normalization.
std::vector<double> cir_magnitude(const CsiMatrix& m, int rx, int sts);

// arg(H[rx_i] - H[rx_j]) per subcarrier, values in (-pi, pi], arg(0) := 0.
std::vector<double> phase_difference(const CsiMatrix& m, int rx_i, int rx_j, int sts);

// Right-pad with zeros below target, uniform-stride selection above.
std::vector<double> standardize_length(const std::vector<double>& v, int target = kFeatureLength);

}  // namespace csiloc
