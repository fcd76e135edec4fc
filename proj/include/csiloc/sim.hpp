// Synthetic indoor scene and heterogeneous CSI event generation.
#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace csiloc {

using cdouble = std::complex<double>;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TxMode { diversity, multiplexing };

const char* tx_mode_name(TxMode m);
TxMode tx_mode_from_name(const std::string& s);

struct ApDescriptor {
    int id = 0;
    double x = 0, y = 0;
    int floor = 0;
    int n_rx = 2;
    double center_frequency = 5.26e9;   // Hz
    double antenna_spacing = 0.028;     // m, ~lambda/2 at 5.26 GHz
    int n_sub = 245;
};

struct DeviceProfile {
    std::string id = "dev";
    int n_tx = 2;
    bool supports_diversity = true;
    bool supports_multiplexing = true;
    double mode_switch_probability = 0.2;
    double tx_power_dbm = 15.0;
};

struct SceneConfig {
    uint64_t seed = 1;
    int floors = 1;
    double floor_height = 3.0;
    double width = 80.0;   // m
    double depth = 50.0;   // m
    int aps_per_floor = 40;
    int ap_rx_min = 2;
    int ap_rx_max = 3;
    int n_sub = 245;
    // fraction of APs assigned an alternate subcarrier count, to exercise
    // the pad/downsample path
    double alt_nsub_fraction = 0.0;
};

struct Scene {
    std::vector<ApDescriptor> aps;
    int floors = 1;
    double floor_height = 3.0;
    double width = 80.0;
    double depth = 50.0;
    uint64_t rng_seed = 1;

    const ApDescriptor* find_ap(int id) const;
    double diagonal() const;
};

Scene build_scene(const SceneConfig& config);

struct TransmissionConfig {
    int n_sts = 1;
    int n_sub = 245;
    double center_frequency = 5.26e9;
    TxMode mode = TxMode::diversity;
};

// Complex CSI tensor of shape (n_rx, n_sts, n_sub), row-major over (rx, sts).
struct CsiMatrix {
    int ap_id = 0;
    int n_rx = 0;
    TransmissionConfig config;
    std::vector<cdouble> values;            // n_rx * n_sts * n_sub
    std::vector<double> rssi_dbm;           // per receive antenna

    cdouble& at(int rx, int sts, int k) {
        return values[(static_cast<size_t>(rx) * config.n_sts + sts) * config.n_sub + k];
    }
    const cdouble& at(int rx, int sts, int k) const {
        return values[(static_cast<size_t>(rx) * config.n_sts + sts) * config.n_sub + k];
    }
    double max_rssi() const;
};

struct Position {
    double x = 0, y = 0;
    int floor = 0;
};

struct LocalizationEvent {
    std::string user_id;
    double timestamp = 0;
    std::vector<CsiMatrix> matrices;
    std::optional<Position> truth;

    int distinct_ap_count() const;
};

struct ChannelModelConfig {
    double path_loss_exponent = 3.0;
    int reflections = 5;                // P in [3, 8] by default scenes
    double reflection_amplitude = 0.5;
    double floor_attenuation_db = 15.0; // per floor penetrated
    double subcarrier_spacing = 78.125e3;
    double device_antenna_spacing = 0.05;
    double device_height = 1.5;
    double ap_height = 2.6;
};

// Physical channel H of shape (n_rx, n_tx, n_sub), row-major over (rx, tx).
std::vector<cdouble> physical_channel(const Scene& scene, const Position& device_pos,
                                      const ApDescriptor& ap, int n_tx,
                                      const ChannelModelConfig& model);

CsiMatrix apply_transmit_chain(const std::vector<cdouble>& h, int n_rx, int n_tx,
                               const ApDescriptor& ap, const DeviceProfile& device,
                               TxMode mode, const ChannelModelConfig& model);

struct NoiseConfig {
    double snr_db = 20.0;
    double rssi_threshold_dbm = -78.0;
    double report_dropout = 0.3;
};

struct TrajectorySample {
    std::string user_id;
    double t = 0;
    Position pos;
    const DeviceProfile* device = nullptr;
};

struct StepModel {
    double max_speed = 2.0;        // m/s
    double event_rate_hz = 1.0;
    double turn_sigma = 0.6;       // rad per step
    double floor_change_probability = 0.0;
};

std::vector<TrajectorySample> random_walk_trajectory(const Scene& scene, const std::string& user_id,
                                                     const DeviceProfile& device, double duration_s,
                                                     const StepModel& step, uint64_t seed);

struct EventGenStats {
    int64_t emitted = 0;
    int64_t skipped_too_few_aps = 0;
};

// Scene-aligned RSSI fingerprint: one entry per scene AP (max per-antenna
// RSSI over the AP's matrices), missing APs imputed at -100 dBm.
std::vector<double> rssi_vector(const LocalizationEvent& event, const Scene& scene);

// Deterministic given (scene, trajectory, model, noise, seed).
std::vector<LocalizationEvent> generate_events(const Scene& scene,
                                               const std::vector<TrajectorySample>& trajectory,
                                               const ChannelModelConfig& model,
                                               const NoiseConfig& noise, uint64_t seed,
                                               EventGenStats* stats = nullptr);

}  // namespace csiloc
