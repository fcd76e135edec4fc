#include "csiloc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace csiloc {

namespace {

constexpr double kSpeedOfLight = 299792458.0;
constexpr double kCsdDelayStep = 200e-9;   // per-stream / per-chain cyclic shift
constexpr double kMinPathLength = 0.1;

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d4a885398931ebULL;
    return x ^ (x >> 31);
}

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

double dist(const Vec3& a, const Vec3& b) {
    const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

const char* tx_mode_name(TxMode m) {
    return m == TxMode::diversity ? "diversity" : "multiplexing";
}

TxMode tx_mode_from_name(const std::string& s) {
    if (s == "diversity") return TxMode::diversity;
    if (s == "multiplexing") return TxMode::multiplexing;
    throw ConfigError("unknown transmission mode: " + s);
}

const ApDescriptor* Scene::find_ap(int id) const {
    for (const auto& ap : aps)
        if (ap.id == id) return &ap;
    return nullptr;
}

double Scene::diagonal() const {
    return std::sqrt(width * width + depth * depth);
}

double CsiMatrix::max_rssi() const {
    double best = -1e300;
    for (double r : rssi_dbm) best = std::max(best, r);
    return best;
}

int LocalizationEvent::distinct_ap_count() const {
    std::vector<int> ids;
    for (const auto& m : matrices) ids.push_back(m.ap_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return static_cast<int>(ids.size());
}

Scene build_scene(const SceneConfig& config) {
    if (config.aps_per_floor < 3)
        throw ConfigError("at least 3 APs per floor are required");
    if (config.floors < 1 || config.width <= 0 || config.depth <= 0)
        throw ConfigError("invalid scene geometry");

    static const double kFrequencies[] = {2.412e9, 2.437e9, 2.462e9,
                                          5.18e9,  5.26e9,  5.5e9, 5.745e9};
    static const int kAltNsub[] = {56, 114, 484};

    Scene scene;
    scene.floors = config.floors;
    scene.floor_height = config.floor_height;
    scene.width = config.width;
    scene.depth = config.depth;
    scene.rng_seed = config.seed;

    std::mt19937_64 rng(config.seed);
    const int n = config.aps_per_floor;
    const int gx = std::max(1, static_cast<int>(
        std::lround(std::sqrt(n * config.width / config.depth))));
    const int gy = (n + gx - 1) / gx;
    const double cw = config.width / gx, cd = config.depth / gy;

    int next_id = 0;
    for (int f = 0; f < config.floors; ++f) {
        int placed = 0;
        for (int iy = 0; iy < gy && placed < n; ++iy) {
            for (int ix = 0; ix < gx && placed < n; ++ix) {
                std::uniform_real_distribution<double> jx(0.15, 0.85), jy(0.15, 0.85);
                ApDescriptor ap;
                ap.id = next_id++;
                ap.x = (ix + jx(rng)) * cw;
                ap.y = (iy + jy(rng)) * cd;
                ap.floor = f;
                ap.n_rx = config.ap_rx_min +
                          static_cast<int>(rng() % static_cast<uint64_t>(
                              config.ap_rx_max - config.ap_rx_min + 1));
                ap.center_frequency = kFrequencies[rng() % 7];
                ap.antenna_spacing = kSpeedOfLight / (2.0 * ap.center_frequency);
                ap.n_sub = config.n_sub;
                if (config.alt_nsub_fraction > 0) {
                    std::uniform_real_distribution<double> u(0.0, 1.0);
                    if (u(rng) < config.alt_nsub_fraction)
                        ap.n_sub = kAltNsub[rng() % 3];
                }
                scene.aps.push_back(ap);
                ++placed;
            }
        }
    }
    return scene;
}

std::vector<cdouble> physical_channel(const Scene& scene, const Position& device_pos,
                                      const ApDescriptor& ap, int n_tx,
                                      const ChannelModelConfig& model) {
    const int n_rx = ap.n_rx, n_sub = ap.n_sub;
    const double lambda = kSpeedOfLight / ap.center_frequency;
    const double w = scene.width, d = scene.depth;

    const Vec3 dev{device_pos.x, device_pos.y,
                   device_pos.floor * scene.floor_height + model.device_height};
    const double ceiling_z = (device_pos.floor + 1) * scene.floor_height;
    const double floor_z = device_pos.floor * scene.floor_height;

    // Image positions of a device-side point for single/double wall bounces.
    auto image = [&](const Vec3& p, int path) -> Vec3 {
        switch (path) {
            case 0: return p;
            case 1: return {-p.x, p.y, p.z};
            case 2: return {2 * w - p.x, p.y, p.z};
            case 3: return {p.x, -p.y, p.z};
            case 4: return {p.x, 2 * d - p.y, p.z};
            case 5: return {p.x, p.y, 2 * ceiling_z - p.z};
            case 6: return {p.x, p.y, 2 * floor_z - p.z};
            case 7: return {-p.x, -p.y, p.z};
            default: return {2 * w - p.x, 2 * d - p.y, p.z};
        }
    };
    auto bounces = [](int path) { return path == 0 ? 0 : (path <= 6 ? 1 : 2); };

    const int n_paths = 1 + std::clamp(model.reflections, 0, 8);
    const int floors_crossed = std::abs(ap.floor - device_pos.floor);
    const double floor_gain =
        std::pow(10.0, -model.floor_attenuation_db * floors_crossed / 20.0);

    std::vector<cdouble> h(static_cast<size_t>(n_rx) * n_tx * n_sub, cdouble{0, 0});
    const double f0 = ap.center_frequency - 0.5 * (n_sub - 1) * model.subcarrier_spacing;

    for (int rx = 0; rx < n_rx; ++rx) {
        const Vec3 ap_ant{ap.x + rx * ap.antenna_spacing, ap.y,
                          ap.floor * scene.floor_height + model.ap_height};
        for (int tx = 0; tx < n_tx; ++tx) {
            const Vec3 dev_ant{dev.x + tx * model.device_antenna_spacing, dev.y, dev.z};
            for (int p = 0; p < n_paths; ++p) {
                double len = dist(image(dev_ant, p), ap_ant);
                len = std::max(len, kMinPathLength);
                const double tau = len / kSpeedOfLight;
                double amp = (lambda / (4.0 * std::numbers::pi)) *
                             std::pow(len, -model.path_loss_exponent / 2.0) * floor_gain;
                if (bounces(p) > 0)
                    amp *= std::pow(-model.reflection_amplitude, bounces(p));
                for (int k = 0; k < n_sub; ++k) {
                    const double fk = f0 + k * model.subcarrier_spacing;
                    const double phase = -2.0 * std::numbers::pi * fk * tau;
                    h[(static_cast<size_t>(rx) * n_tx + tx) * n_sub + k] +=
                        amp * cdouble{std::cos(phase), std::sin(phase)};
                }
            }
        }
    }
    return h;
}

CsiMatrix apply_transmit_chain(const std::vector<cdouble>& h, int n_rx, int n_tx,
                               const ApDescriptor& ap, const DeviceProfile& device,
                               TxMode mode, const ChannelModelConfig& model) {
    const int n_sts = mode == TxMode::diversity ? 1 : n_tx;
    if (n_sts > n_tx) throw ConfigError("N_sts exceeds N_tx");
    const int n_sub = ap.n_sub;

    CsiMatrix out;
    out.ap_id = ap.id;
    out.n_rx = n_rx;
    out.config = {n_sts, n_sub, ap.center_frequency, mode};
    out.values.assign(static_cast<size_t>(n_rx) * n_sts * n_sub, cdouble{0, 0});
    const double f0 = ap.center_frequency - 0.5 * (n_sub - 1) * model.subcarrier_spacing;

    for (int k = 0; k < n_sub; ++k) {
        const double fk = f0 + k * model.subcarrier_spacing;
        for (int rx = 0; rx < n_rx; ++rx) {
            for (int s = 0; s < n_sts; ++s) {
                cdouble acc{0, 0};
                if (mode == TxMode::diversity) {
                    // Spatial expansion: per-chain cyclic shifts, equal split.
                    for (int a = 0; a < n_tx; ++a) {
                        const double ph = 2.0 * std::numbers::pi * fk * (a * kCsdDelayStep);
                        const cdouble q = cdouble{std::cos(ph), std::sin(ph)} /
                                          std::sqrt(static_cast<double>(n_tx));
                        acc += h[(static_cast<size_t>(rx) * n_tx + a) * n_sub + k] * q;
                    }
                } else {
                    acc = h[(static_cast<size_t>(rx) * n_tx + s) * n_sub + k];
                }
                // Per-stream cyclic shift, delta_s = s * step.
                const double ph = 2.0 * std::numbers::pi * fk * (s * kCsdDelayStep);
                acc *= cdouble{std::cos(ph), std::sin(ph)};
                out.at(rx, s, k) = acc;
            }
        }
    }

    out.rssi_dbm.resize(n_rx);
    for (int rx = 0; rx < n_rx; ++rx) {
        double power = 0;
        for (int s = 0; s < n_sts; ++s)
            for (int k = 0; k < n_sub; ++k) power += std::norm(out.at(rx, s, k));
        power /= n_sub;
        out.rssi_dbm[rx] = power > 0 ? device.tx_power_dbm + 10.0 * std::log10(power)
                                     : -200.0;
    }
    return out;
}

std::vector<TrajectorySample> random_walk_trajectory(const Scene& scene, const std::string& user_id,
                                                     const DeviceProfile& device, double duration_s,
                                                     const StepModel& step, uint64_t seed) {
    if (duration_s <= 0) throw ConfigError("trajectory duration must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(1.0, scene.width - 1.0);
    std::uniform_real_distribution<double> uy(1.0, scene.depth - 1.0);
    std::uniform_real_distribution<double> uspeed(0.0, step.max_speed);
    std::uniform_real_distribution<double> uang(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> turn(0.0, step.turn_sigma);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    Position pos{ux(rng), uy(rng),
                 scene.floors > 1 ? static_cast<int>(rng() % scene.floors) : 0};
    double heading = uang(rng);
    const double dt = 1.0 / step.event_rate_hz;
    const int n = static_cast<int>(std::llround(duration_s * step.event_rate_hz));

    std::vector<TrajectorySample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        out.push_back({user_id, i * dt, pos, &device});
        heading += turn(rng);
        const double speed = uspeed(rng);
        pos.x += speed * dt * std::cos(heading);
        pos.y += speed * dt * std::sin(heading);
        if (pos.x < 0.5) { pos.x = 1.0 - pos.x; heading = std::numbers::pi - heading; }
        if (pos.x > scene.width - 0.5) { pos.x = 2 * (scene.width - 0.5) - pos.x; heading = std::numbers::pi - heading; }
        if (pos.y < 0.5) { pos.y = 1.0 - pos.y; heading = -heading; }
        if (pos.y > scene.depth - 0.5) { pos.y = 2 * (scene.depth - 0.5) - pos.y; heading = -heading; }
        if (scene.floors > 1 && u01(rng) < step.floor_change_probability) {
            const int delta = (rng() & 1) ? 1 : -1;
            pos.floor = std::clamp(pos.floor + delta, 0, scene.floors - 1);
        }
    }
    return out;
}

namespace {

// Rough LoS-only RSSI used to skip synthesizing hopeless links.
double rssi_upper_bound(const Scene& scene, const Position& p, const ApDescriptor& ap,
                        const DeviceProfile& dev, const ChannelModelConfig& model) {
    const double dx = p.x - ap.x, dy = p.y - ap.y;
    const double dz = (p.floor - ap.floor) * scene.floor_height +
                      model.device_height - model.ap_height;
    const double len = std::max(std::sqrt(dx * dx + dy * dy + dz * dz), kMinPathLength);
    const double lambda = kSpeedOfLight / ap.center_frequency;
    const double amp = (lambda / (4.0 * std::numbers::pi)) *
                       std::pow(len, -model.path_loss_exponent / 2.0) *
                       std::pow(10.0, -model.floor_attenuation_db *
                                          std::abs(p.floor - ap.floor) / 20.0);
    return dev.tx_power_dbm + 20.0 * std::log10(amp);
}

}  // namespace

std::vector<double> rssi_vector(const LocalizationEvent& event, const Scene& scene) {
    std::vector<double> out(scene.aps.size(), -100.0);
    for (const auto& m : event.matrices) {
        for (size_t i = 0; i < scene.aps.size(); ++i) {
            if (scene.aps[i].id == m.ap_id) {
                out[i] = std::max(out[i], m.max_rssi());
                break;
            }
        }
    }
    return out;
}

std::vector<LocalizationEvent> generate_events(const Scene& scene,
                                               const std::vector<TrajectorySample>& trajectory,
                                               const ChannelModelConfig& model,
                                               const NoiseConfig& noise, uint64_t seed,
                                               EventGenStats* stats) {
    std::vector<std::optional<LocalizationEvent>> slots(trajectory.size());

#pragma omp parallel for schedule(dynamic, 16)
    for (int64_t i = 0; i < static_cast<int64_t>(trajectory.size()); ++i) {
        const TrajectorySample& sample = trajectory[i];
        std::mt19937_64 rng(splitmix64(seed) ^ splitmix64(static_cast<uint64_t>(i) + 0x51ed2701));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const DeviceProfile& dev = *sample.device;

        LocalizationEvent event;
        event.user_id = sample.user_id;
        event.timestamp = sample.t;
        event.truth = sample.pos;

        struct Candidate {
            CsiMatrix matrix;
            bool dropped = false;
        };
        std::vector<Candidate> candidates;
        for (const auto& ap : scene.aps) {
            if (rssi_upper_bound(scene, sample.pos, ap, dev, model) <
                noise.rssi_threshold_dbm - 12.0)
                continue;

            TxMode mode = dev.supports_diversity ? TxMode::diversity : TxMode::multiplexing;
            if (u01(rng) < dev.mode_switch_probability) {
                std::vector<TxMode> modes;
                if (dev.supports_diversity) modes.push_back(TxMode::diversity);
                if (dev.supports_multiplexing) modes.push_back(TxMode::multiplexing);
                mode = modes[rng() % modes.size()];
            }

            auto h = physical_channel(scene, sample.pos, ap, dev.n_tx, model);
            CsiMatrix m = apply_transmit_chain(h, ap.n_rx, dev.n_tx, ap, dev, mode, model);

            // Additive circular complex Gaussian at the configured SNR.
            double signal_power = 0;
            for (const auto& v : m.values) signal_power += std::norm(v);
            signal_power /= static_cast<double>(m.values.size());
            const double sigma =
                std::sqrt(signal_power * std::pow(10.0, -noise.snr_db / 10.0) / 2.0);
            std::normal_distribution<double> gauss(0.0, sigma);
            for (auto& v : m.values) v += cdouble{gauss(rng), gauss(rng)};

            // RSSI re-measured from the noisy CSI.
            for (int rx = 0; rx < m.n_rx; ++rx) {
                double power = 0;
                for (int s = 0; s < m.config.n_sts; ++s)
                    for (int k = 0; k < m.config.n_sub; ++k)
                        power += std::norm(m.at(rx, s, k));
                power /= m.config.n_sub;
                m.rssi_dbm[rx] =
                    power > 0 ? dev.tx_power_dbm + 10.0 * std::log10(power) : -200.0;
            }

            if (m.max_rssi() < noise.rssi_threshold_dbm) continue;
            Candidate c;
            c.dropped = u01(rng) < noise.report_dropout;
            c.matrix = std::move(m);
            candidates.push_back(std::move(c));
        }

        if (candidates.size() < 3) continue;   // slot stays empty, counted below

        // Keep the >= 3 strongest even when dropout would take the count lower.
        std::vector<int> order(candidates.size());
        for (size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return candidates[a].matrix.max_rssi() > candidates[b].matrix.max_rssi();
        });
        int kept = 0;
        for (int idx : order)
            if (!candidates[idx].dropped) ++kept;
        for (int idx : order) {
            if (kept >= 3) break;
            if (candidates[idx].dropped) {
                candidates[idx].dropped = false;
                ++kept;
            }
        }
        for (int idx : order)
            if (!candidates[idx].dropped)
                event.matrices.push_back(std::move(candidates[idx].matrix));

        slots[i] = std::move(event);
    }

    std::vector<LocalizationEvent> out;
    out.reserve(trajectory.size());
    int64_t skipped = 0;
    for (auto& slot : slots) {
        if (slot)
            out.push_back(std::move(*slot));
        else
            ++skipped;
    }
    if (stats) {
        stats->emitted += static_cast<int64_t>(out.size());
        stats->skipped_too_few_aps += skipped;
    }
    return out;
}

}  // namespace csiloc
