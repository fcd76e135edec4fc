// Pipeline driver: simulate -> encode -> pretrain -> finetune -> infer ->
// eval -> report, with a per-run manifest binding the artifacts together.
#include "csiloc/config.hpp"
#include "csiloc/dataset.hpp"
#include "csiloc/finetune.hpp"
#include "csiloc/infer.hpp"
#include "csiloc/metrics.hpp"
#include "csiloc/pretrain.hpp"
#include "csiloc/sim.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace csiloc;

namespace {

constexpr int kManifestVersion = 1;

json load_manifest(const std::string& run_dir) {
    const fs::path path = fs::path(run_dir) / "manifest.json";
    std::ifstream f(path);
    if (!f) throw ConfigError("no manifest.json in " + run_dir + " (run simulate first)");
    json m = json::parse(f);
    if (m.value("version", 0) != kManifestVersion)
        throw SchemaError("unsupported manifest version in " + path.string());
    return m;
}

void store_manifest(const std::string& run_dir, const json& m) {
    std::ofstream f(fs::path(run_dir) / "manifest.json");
    f << m.dump(2) << '\n';
}

std::string artifact(const json& manifest, const std::string& key) {
    if (!manifest["artifacts"].contains(key))
        throw ConfigError("manifest has no '" + key + "' artifact; run the earlier stage first");
    const std::string path = manifest["artifacts"][key].get<std::string>();
    if (!fs::exists(path)) throw ConfigError("artifact file missing: " + path);
    return path;
}

RunConfig config_from_manifest(const json& manifest) {
    RunConfig cfg;
    for (const auto& [k, v] : manifest["config"].items()) cfg.set(k, v.get<std::string>());
    return cfg;
}

// Fixed roster of synthetic device hardware profiles; users cycle through it.
std::vector<DeviceProfile> device_roster() {
    std::vector<DeviceProfile> r;
    r.push_back({"phone_a", 2, true, true, 0.2, 15.0});
    r.push_back({"phone_b", 2, true, false, 0.0, 13.0});
    r.push_back({"phone_c", 3, true, true, 0.35, 16.0});
    r.push_back({"phone_d", 1, true, false, 0.0, 14.0});
    r.push_back({"phone_e", 2, false, true, 0.0, 17.0});
    return r;
}

const DeviceProfile& profile_for_user(const std::vector<DeviceProfile>& roster, int user_index) {
    return roster[static_cast<size_t>(user_index) % roster.size()];
}

struct SimParams {
    SceneConfig scene;
    ChannelModelConfig channel;
    NoiseConfig noise;
    StepModel step;
    int users_unlabeled = 0, users_labeled = 0;
    double duration_unlabeled = 0, duration_labeled = 0;
};

SimParams sim_params(const RunConfig& cfg, uint64_t seed) {
    SimParams p;
    p.scene.seed = seed;
    p.scene.floors = static_cast<int>(cfg.get_int("floors", 1));
    p.scene.width = cfg.get_double("width", 80.0);
    p.scene.depth = cfg.get_double("depth", 50.0);
    p.scene.aps_per_floor = static_cast<int>(cfg.get_int("aps_per_floor", 40));
    p.scene.n_sub = static_cast<int>(cfg.get_int("n_sub", 245));
    p.scene.alt_nsub_fraction = cfg.get_double("alt_nsub_fraction", 0.15);
    p.channel.path_loss_exponent = cfg.get_double("path_loss_exponent", 3.0);
    p.channel.reflections = static_cast<int>(cfg.get_int("reflections", 5));
    p.channel.floor_attenuation_db = cfg.get_double("floor_attenuation_db", 15.0);
    p.noise.snr_db = cfg.get_double("snr_db", 20.0);
    p.noise.rssi_threshold_dbm = cfg.get_double("rssi_threshold_dbm", -78.0);
    p.noise.report_dropout = cfg.get_double("report_dropout", 0.3);
    p.step.floor_change_probability = p.scene.floors > 1 ? 0.01 : 0.0;
    p.users_unlabeled = static_cast<int>(cfg.get_int("users_unlabeled", 10));
    p.users_labeled = static_cast<int>(cfg.get_int("users_labeled", 4));
    p.duration_unlabeled = cfg.get_double("duration_unlabeled_s", 2000.0);
    p.duration_labeled = cfg.get_double("duration_labeled_s", 500.0);
    return p;
}

std::vector<LocalizationEvent> simulate_cohort(const Scene& scene, const SimParams& p,
                                               const std::vector<DeviceProfile>& roster,
                                               int n_users, double duration,
                                               const std::string& prefix, uint64_t seed_base) {
    std::vector<LocalizationEvent> events;
    for (int u = 0; u < n_users; ++u) {
        const DeviceProfile& dev = profile_for_user(roster, u);
        const std::string uid = prefix + std::to_string(u) + ":" + dev.id;
        auto traj = random_walk_trajectory(scene, uid, dev, duration, p.step, seed_base + u * 2);
        auto ev = generate_events(scene, traj, p.channel, p.noise, seed_base + u * 2 + 1);
        events.insert(events.end(), std::make_move_iterator(ev.begin()),
                      std::make_move_iterator(ev.end()));
    }
    return events;
}

int cmd_simulate(const std::string& run_dir, const std::string& config_path) {
    RunConfig cfg = RunConfig::from_file(config_path);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    fs::create_directories(run_dir);

    SimParams p = sim_params(cfg, seed);
    Scene scene = build_scene(p.scene);
    auto roster = device_roster();

    auto unlabeled = simulate_cohort(scene, p, roster, p.users_unlabeled, p.duration_unlabeled,
                                     "u", seed * 1000 + 1);
    for (auto& e : unlabeled) e.truth.reset();
    auto labeled = simulate_cohort(scene, p, roster, p.users_labeled, p.duration_labeled,
                                   "l", seed * 1000 + 7001);

    const fs::path dir(run_dir);
    write_scene_json(scene, (dir / "scene.json").string());
    write_events_jsonl(unlabeled, (dir / "unlabeled.jsonl").string());
    write_events_jsonl(labeled, (dir / "labeled.jsonl").string());

    json m;
    m["version"] = kManifestVersion;
    m["seed"] = seed;
    m["tool"] = "csiloc 1.0";
    json cfg_snapshot = json::object();
    for (const auto& [k, v] : cfg.entries()) cfg_snapshot[k] = v;
    m["config"] = cfg_snapshot;
    m["artifacts"]["scene"] = (dir / "scene.json").string();
    m["artifacts"]["unlabeled_events"] = (dir / "unlabeled.jsonl").string();
    m["artifacts"]["labeled_events"] = (dir / "labeled.jsonl").string();
    store_manifest(run_dir, m);
    std::cout << "simulate: " << unlabeled.size() << " unlabeled + " << labeled.size()
              << " labeled events, " << scene.aps.size() << " APs\n";
    return 0;
}

std::vector<EventGraph> encode_all(const std::vector<LocalizationEvent>& events,
                                   const Scene& scene) {
    SceneBounds bounds{scene.width, scene.depth};
    std::vector<EventGraph> graphs(events.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (int64_t i = 0; i < static_cast<int64_t>(events.size()); ++i) {
        graphs[i] = encode_event(events[i], scene);
        normalize_metadata(graphs[i], bounds);
    }
    return graphs;
}

int cmd_encode(const std::string& run_dir) {
    json m = load_manifest(run_dir);
    Scene scene = read_scene_json(artifact(m, "scene"));
    const fs::path dir(run_dir);

    for (const auto& [in_key, out_key, out_name] :
         {std::tuple{"unlabeled_events", "unlabeled_graphs", "unlabeled_graphs.jsonl"},
          std::tuple{"labeled_events", "labeled_graphs", "labeled_graphs.jsonl"}}) {
        auto events = read_events_jsonl(artifact(m, in_key));
        const auto t0 = std::chrono::steady_clock::now();
        auto graphs = encode_all(events, scene);
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_graphs_jsonl(graphs, (dir / out_name).string());
        m["artifacts"][out_key] = (dir / out_name).string();
        std::cout << "encode: " << graphs.size() << " graphs from " << in_key << " ("
                  << static_cast<int>(graphs.size() / std::max(dt, 1e-9)) << " events/s)\n";
    }
    store_manifest(run_dir, m);
    return 0;
}

ModelConfig arch_from_config(const RunConfig& cfg, uint64_t seed) {
    ModelConfig a;
    a.hidden_width = static_cast<int>(cfg.get_int("hidden_width", 256));
    a.gcn_layers = static_cast<int>(cfg.get_int("gcn_layers", 4));
    a.projection_dim = static_cast<int>(cfg.get_int("projection_dim", 128));
    a.seed = seed;
    return a;
}

int cmd_pretrain(const std::string& run_dir) {
    json m = load_manifest(run_dir);
    RunConfig cfg = config_from_manifest(m);
    const uint64_t seed = m["seed"].get<uint64_t>();
    Scene scene = read_scene_json(artifact(m, "scene"));
    auto events = read_events_jsonl(artifact(m, "unlabeled_events"));
    auto graphs = read_graphs_jsonl(artifact(m, "unlabeled_graphs"));
    if (events.size() != graphs.size())
        throw SchemaError("unlabeled events and graphs disagree in length");

    const double ds_threshold = cfg.get_double("downsample_threshold", 1.0);
    std::vector<int> kept(graphs.size());
    if (ds_threshold < 1.0) {
        kept = downsample_unlabeled(events, scene, ds_threshold);
    } else {
        for (size_t i = 0; i < kept.size(); ++i) kept[i] = static_cast<int>(i);
    }

    std::vector<EventGraph> pool;
    std::vector<PretrainSample> samples;
    pool.reserve(kept.size());
    std::mt19937_64 rng(seed * 31 + 5);
    for (int idx : kept) pool.push_back(std::move(graphs[idx]));
    for (size_t i = 0; i < pool.size(); ++i) {
        PretrainSample s;
        s.graph = &pool[i];
        s.targets = select_triplet_targets(events[kept[i]], scene, rng);
        samples.push_back(s);
    }
    auto pairs = mine_pairs(pool);

    PretrainConfig pc;
    pc.epochs = static_cast<int>(cfg.get_int("pretrain_epochs", 150));
    pc.batch_size = static_cast<int>(cfg.get_int("pretrain_batch", 256));
    pc.learning_rate = cfg.get_double("pretrain_lr", 0.01);
    pc.seed = seed * 31 + 9;
    const fs::path dir(run_dir);
    pc.checkpoint_dir = (dir / "pretrain_ckpts").string();
    fs::create_directories(pc.checkpoint_dir);

    ModelParams init = init_model(arch_from_config(cfg, seed * 31 + 7));
    PretrainResult result = pretrain_run(init, samples, pairs, pc);

    save_checkpoint(result.model, (dir / "pretrained.ckpt").string());
    write_loss_curve_csv(result.curve, (dir / "pretrain_curve.csv").string());
    m["artifacts"]["pretrained"] = (dir / "pretrained.ckpt").string();
    m["artifacts"]["pretrain_curve"] = (dir / "pretrain_curve.csv").string();
    store_manifest(run_dir, m);
    std::cout << "pretrain: " << pool.size() << " graphs, " << pairs.size() << " pairs, "
              << pc.epochs << " epochs, final loss "
              << (result.curve.empty() ? 0.0 : result.curve.back().total) << '\n';
    return 0;
}

FinetuneConfig finetune_config_from(const RunConfig& cfg, uint64_t seed) {
    FinetuneConfig ft;
    ft.ensemble_size = static_cast<int>(cfg.get_int("ensemble_size", 5));
    ft.epochs = static_cast<int>(cfg.get_int("finetune_epochs", 100));
    ft.batch_size = static_cast<int>(cfg.get_int("finetune_batch", 64));
    ft.standard_nll = cfg.get_bool("standard_nll", false);
    ft.ap_dropout = cfg.get_double("ap_dropout", 0.25);
    ft.base_seed = seed * 101 + 13;
    return ft;
}

LabeledGraphSet split_labeled(const std::vector<EventGraph>& graphs, uint64_t seed,
                              double label_ratio) {
    SplitIndices idx = split_811(static_cast<int>(graphs.size()), seed * 101 + 3);
    LabeledGraphSet set;
    for (int i : idx.train) set.train.push_back(&graphs[i]);
    for (int i : idx.val) set.val.push_back(&graphs[i]);
    for (int i : idx.test) set.test.push_back(&graphs[i]);
    if (label_ratio < 1.0) {
        const size_t n = std::max<size_t>(1, static_cast<size_t>(
            std::lround(label_ratio * static_cast<double>(set.train.size()))));
        set.train.resize(std::min(set.train.size(), n));
    }
    return set;
}

int cmd_finetune(const std::string& run_dir) {
    json m = load_manifest(run_dir);
    RunConfig cfg = config_from_manifest(m);
    const uint64_t seed = m["seed"].get<uint64_t>();
    auto graphs = read_graphs_jsonl(artifact(m, "labeled_graphs"));
    LabeledGraphSet set = split_labeled(graphs, seed, cfg.get_double("label_ratio", 1.0));

    FinetuneConfig ft = finetune_config_from(cfg, seed);
    const fs::path dir(run_dir);
    ft.checkpoint_dir = (dir / "members").string();
    fs::create_directories(ft.checkpoint_dir);

    ModelParams pretrained = load_checkpoint(artifact(m, "pretrained"));
    FinetuneResult result = finetune_run(pretrained, set, ft);

    json members = json::array();
    for (int z = 0; z < static_cast<int>(result.members.size()); ++z) {
        const std::string path =
            (dir / "members" / ("member_seed_" + std::to_string(ft.base_seed + z) + ".ckpt"))
                .string();
        save_checkpoint(result.members[z], path);
        members.push_back(path);
        std::ofstream log(dir / "members" /
                          ("log_seed_" + std::to_string(ft.base_seed + z) + ".csv"));
        log << "epoch,train_loss,val_score,lr_scale\n";
        for (const auto& row : result.logs[z])
            log << row.epoch << ',' << row.train_loss << ',' << row.val_score << ','
                << row.lr_scale << '\n';
    }
    m["artifacts"]["members"] = members;
    store_manifest(run_dir, m);
    std::cout << "finetune: " << result.members.size() << " members on " << set.train.size()
              << " train graphs\n";
    return 0;
}

std::vector<ModelParams> load_members(const json& manifest) {
    if (!manifest["artifacts"].contains("members"))
        throw ConfigError("manifest has no ensemble members; run finetune first");
    std::vector<ModelParams> members;
    for (const auto& p : manifest["artifacts"]["members"])
        members.push_back(load_checkpoint(p.get<std::string>()));
    if (members.empty()) throw ConfigError("empty ensemble in manifest");
    return members;
}

int cmd_infer(const std::string& run_dir) {
    json m = load_manifest(run_dir);
    RunConfig cfg = config_from_manifest(m);
    const uint64_t seed = m["seed"].get<uint64_t>();
    Scene scene = read_scene_json(artifact(m, "scene"));
    auto graphs = read_graphs_jsonl(artifact(m, "labeled_graphs"));
    LabeledGraphSet set = split_labeled(graphs, seed, 1.0);
    auto members = load_members(m);

    FuseOptions opts;
    opts.inverse_variance = cfg.get_bool("inverse_variance_fusion", false);
    opts.max_floor = scene.floors - 1;
    auto preds = predict_graphs(members, set.test, opts);

    const fs::path out = fs::path(run_dir) / "predictions.csv";
    std::ofstream f(out);
    f << "x,y,floor,sigma_x,sigma_y,truth_x,truth_y,truth_floor\n";
    for (size_t i = 0; i < preds.size(); ++i) {
        const Position& t = *set.test[i]->truth;
        f << preds[i].x << ',' << preds[i].y << ',' << preds[i].floor << ',' << preds[i].sigma_x
          << ',' << preds[i].sigma_y << ',' << t.x << ',' << t.y << ',' << t.floor << '\n';
    }
    m["artifacts"]["predictions"] = out.string();
    store_manifest(run_dir, m);
    std::cout << "infer: " << preds.size() << " test predictions\n";
    return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& protocol_name) {
    json m = load_manifest(run_dir);
    RunConfig cfg = config_from_manifest(m);
    const uint64_t seed = m["seed"].get<uint64_t>();
    const double penalty = cfg.get_double("floor_penalty", 15.0);
    Scene scene = read_scene_json(artifact(m, "scene"));
    auto events = read_events_jsonl(artifact(m, "labeled_events"));
    auto graphs = read_graphs_jsonl(artifact(m, "labeled_graphs"));
    if (events.size() != graphs.size())
        throw SchemaError("labeled events and graphs disagree in length");
    const fs::path dir(run_dir);

    if (!protocol_name.empty()) {
        Protocol protocol;
        if (protocol_name == "label_ratio_sweep") protocol = Protocol::label_ratio_sweep;
        else if (protocol_name == "epoch_sweep") protocol = Protocol::epoch_sweep;
        else if (protocol_name == "device_holdout") protocol = Protocol::device_holdout;
        else if (protocol_name == "temporal_holdout") protocol = Protocol::temporal_holdout;
        else throw ConfigError("unknown protocol: " + protocol_name);

        ProtocolDeps deps;
        deps.scene = &scene;
        for (const auto& g : graphs) deps.labeled_graphs.push_back(&g);
        for (const auto& g : graphs) {
            const auto colon = g.user_id.find(':');
            deps.device_ids.push_back(colon == std::string::npos ? g.user_id
                                                                 : g.user_id.substr(colon + 1));
        }
        ModelParams pretrained = load_checkpoint(artifact(m, "pretrained"));
        deps.pretrained = &pretrained;
        deps.arch = pretrained.config;
        deps.finetune_config = finetune_config_from(cfg, seed);
        deps.penalty = penalty;
        deps.seed = seed * 101 + 3;
        auto reports = run_protocol(protocol, ProtocolConfig{}, deps);
        const fs::path out = dir / ("protocol_" + protocol_name + ".csv");
        write_reports_csv(reports, out.string());
        m["artifacts"]["protocol_" + protocol_name] = out.string();
        store_manifest(run_dir, m);
        std::cout << "eval: protocol " << protocol_name << ", " << reports.size() << " arms\n";
        return 0;
    }

    // Standard evaluation: ensemble on the test split vs. the k-NN baseline.
    LabeledGraphSet set = split_labeled(graphs, seed, 1.0);
    auto members = load_members(m);
    FuseOptions opts;
    opts.max_floor = scene.floors - 1;
    auto preds = predict_graphs(members, set.test, opts);
    std::vector<EvalSample> samples;
    for (size_t i = 0; i < preds.size(); ++i)
        samples.push_back({{preds[i].x, preds[i].y, preds[i].floor}, *set.test[i]->truth,
                           preds[i].sigma_x, preds[i].sigma_y});
    MetricReport model_report = summarize(samples, penalty);

    SplitIndices idx = split_811(static_cast<int>(graphs.size()), seed * 101 + 3);
    std::vector<LocalizationEvent> train_events;
    for (int i : idx.train) train_events.push_back(events[i]);
    KnnBaseline knn;
    knn.k = static_cast<int>(cfg.get_int("knn_k", 5));
    knn.fit(train_events, scene);
    std::vector<EvalSample> knn_samples;
    for (int i : idx.test) {
        EvalSample s;
        s.pred = knn.predict(rssi_vector(events[i], scene));
        s.truth = *events[i].truth;
        knn_samples.push_back(s);
    }
    MetricReport knn_report = summarize(knn_samples, penalty);

    std::vector<ArmReport> reports{{"ensemble", 1.0, model_report}, {"knn", 1.0, knn_report}};
    const fs::path out = dir / "reports.csv";
    write_reports_csv(reports, out.string());
    m["artifacts"]["reports"] = out.string();
    store_manifest(run_dir, m);
    std::cout << "eval: ensemble median score " << model_report.median_score << " vs knn "
              << knn_report.median_score << '\n';
    return 0;
}

int cmd_report(const std::string& run_dir) {
    json m = load_manifest(run_dir);
    std::ifstream f(artifact(m, "reports"));
    std::string line;
    std::cout << "run: " << run_dir << " (seed " << m["seed"].get<uint64_t>() << ")\n";
    while (std::getline(f, line)) std::cout << "  " << line << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heterogeneous CSI localization workbench"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "cap worker threads (0 = hardware default)");

    std::string run_dir = "run", config_path, protocol_name;
    auto* sim = app.add_subcommand("simulate", "generate a synthetic scene and event streams");
    sim->add_option("--config", config_path, "key = value run configuration")->required();
    sim->add_option("--run", run_dir, "run directory");
    for (const char* name : {"encode", "pretrain", "finetune", "infer", "report"})
        app.add_subcommand(name)->add_option("--run", run_dir, "run directory");
    auto* ev = app.add_subcommand("eval", "metrics vs. baseline, or a named protocol");
    ev->add_option("--run", run_dir, "run directory");
    ev->add_option("--protocol", protocol_name,
                   "label_ratio_sweep | epoch_sweep | device_holdout | temporal_holdout");

    CLI11_PARSE(app, argc, argv);
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    try {
        if (app.got_subcommand("simulate")) return cmd_simulate(run_dir, config_path);
        if (app.got_subcommand("encode")) return cmd_encode(run_dir);
        if (app.got_subcommand("pretrain")) return cmd_pretrain(run_dir);
        if (app.got_subcommand("finetune")) return cmd_finetune(run_dir);
        if (app.got_subcommand("infer")) return cmd_infer(run_dir);
        if (app.got_subcommand("eval")) return cmd_eval(run_dir, protocol_name);
        if (app.got_subcommand("report")) return cmd_report(run_dir);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
