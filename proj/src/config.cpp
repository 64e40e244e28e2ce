#include "pepifed/config.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace pepifed::cli {

using nlohmann::json;

namespace {

const std::set<std::string> kMethods = {"proposed", "baseline1", "baseline2", "baseline3"};

void assign_key(ExperimentConfig& cfg, const std::string& key, const json& v) {
    try {
        if (key == "method")
            cfg.method = v.get<std::string>();
        else if (key == "dataset")
            cfg.dataset = v.get<std::string>();
        else if (key == "schedule")
            cfg.schedule_path = v.get<std::string>();
        else if (key == "out")
            cfg.out_dir = v.get<std::string>();
        else if (key == "seed")
            cfg.seed = v.get<std::uint64_t>();
        else if (key == "lr")
            cfg.lr = v.get<double>();
        else if (key == "lr_decay")
            cfg.lr_decay = v.get<double>();
        else if (key == "train_batch")
            cfg.train_batch = v.get<int>();
        else if (key == "test_batch")
            cfg.test_batch = v.get<int>();
        else if (key == "epochs")
            cfg.epochs = v.get<int>();
        else if (key == "test_every")
            cfg.test_every = v.get<int>();
        else if (key == "local_epochs_per_round")
            cfg.local_epochs_per_round = v.get<int>();
        else if (key == "snr_db")
            cfg.snr_db = v.get<double>();
        else if (key == "train_per_client")
            cfg.train_per_client = v.get<int>();
        else if (key == "test_per_client")
            cfg.test_per_client = v.get<int>();
        else if (key == "synth_classes")
            cfg.synth_classes = v.get<int>();
        else if (key == "synth_dim")
            cfg.synth_dim = v.get<int>();
        else if (key == "synth_separation")
            cfg.synth_separation = v.get<double>();
        else if (key == "synth_noise_sigma")
            cfg.synth_noise_sigma = v.get<double>();
        else if (key == "mnist_train_images")
            cfg.mnist_train_images = v.get<std::string>();
        else if (key == "mnist_train_labels")
            cfg.mnist_train_labels = v.get<std::string>();
        else if (key == "mnist_test_images")
            cfg.mnist_test_images = v.get<std::string>();
        else if (key == "mnist_test_labels")
            cfg.mnist_test_labels = v.get<std::string>();
        else
            throw ConfigError("config: unknown key \"" + key + "\"");
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for \"" + key + "\": " + e.what());
    }
}

}  // namespace

void apply_preset(ExperimentConfig& cfg, const std::string& preset) {
    if (preset == "desk") {
        cfg.train_per_client = 2000;
        cfg.test_per_client = 500;
        cfg.epochs = 10;
    } else if (preset == "full") {
        cfg.train_per_client = 12000;
        cfg.test_per_client = 2000;
        cfg.epochs = 20;
    } else {
        throw ConfigError("config: unknown preset \"" + preset + "\" (use desk or full)");
    }
    cfg.preset = preset;
}

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");

    ExperimentConfig cfg;
    // preset first so explicit keys can override its values
    if (j.contains("preset")) {
        if (!j["preset"].is_string()) throw ConfigError("config: preset must be a string");
        apply_preset(cfg, j["preset"].get<std::string>());
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "preset") continue;
        assign_key(cfg, key, value);
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::vector<std::string> validate_config(const ExperimentConfig& cfg, const topo::Schedule& schedule) {
    std::vector<std::string> errs;
    auto err = [&](std::string m) { errs.push_back(std::move(m)); };

    if (!kMethods.count(cfg.method)) err("method must be one of proposed/baseline1/baseline2/baseline3");
    if (cfg.dataset != "synth" && cfg.dataset != "mnist") err("dataset must be synth or mnist");
    if (cfg.lr <= 0) err("lr must be positive");
    if (cfg.lr_decay <= 0 || cfg.lr_decay > 1) err("lr_decay must be in (0, 1]");
    if (cfg.train_batch < 1) err("train_batch must be >= 1");
    if (cfg.test_batch < 1) err("test_batch must be >= 1");
    if (cfg.epochs < 1) err("epochs must be >= 1");
    if (cfg.test_every < 1) err("test_every must be >= 1");
    if (cfg.local_epochs_per_round < 1) err("local_epochs_per_round must be >= 1");
    if (cfg.train_per_client < 1) err("train_per_client must be >= 1");
    if (cfg.test_per_client < 1) err("test_per_client must be >= 1");
    if (!std::isfinite(cfg.snr_db)) err("snr_db must be finite");

    if (cfg.dataset == "synth") {
        if (cfg.synth_classes < 2) err("synth_classes must be >= 2");
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cfg.synth_dim))));
        if (side * side != cfg.synth_dim) err("synth_dim must be a perfect square");
        if (cfg.synth_dim < cfg.synth_classes) err("synth_dim must be >= synth_classes");
        if (side * side == cfg.synth_dim) {
            // every conv block trims the image and halves it; the features
            // that come out the far end must be non-empty
            model::Architecture probe;
            probe.image_h = probe.image_w = side;
            bool fits = true;
            try {
                fits = probe.feature_shape().count() >= 1;
            } catch (const ShapeError&) {
                fits = false;
            }
            if (!fits) err("synth_dim too small for the conv encoder");
        }
        if (cfg.synth_separation <= 0) err("synth_separation must be positive");
        if (cfg.synth_noise_sigma < 0) err("synth_noise_sigma must be >= 0");
    } else if (cfg.dataset == "mnist") {
        if (cfg.mnist_train_images.empty() || cfg.mnist_train_labels.empty() || cfg.mnist_test_images.empty() ||
            cfg.mnist_test_labels.empty())
            err("mnist dataset requires the four mnist_* path keys");
    }

    if (cfg.method == "baseline1" && schedule.clients != 1)
        err("baseline1 trains a single isolated client and requires a one-client schedule (got " +
            std::to_string(schedule.clients) + " clients)");
    return errs;
}

std::string canonical_config(const ExperimentConfig& cfg) {
    json j;  // nlohmann objects iterate in sorted key order, which is the canonical form
    j["method"] = cfg.method;
    j["dataset"] = cfg.dataset;
    j["schedule"] = cfg.schedule_path;
    j["out"] = cfg.out_dir;
    j["seed"] = cfg.seed;
    j["preset"] = cfg.preset;
    j["lr"] = cfg.lr;
    j["lr_decay"] = cfg.lr_decay;
    j["train_batch"] = cfg.train_batch;
    j["test_batch"] = cfg.test_batch;
    j["epochs"] = cfg.epochs;
    j["test_every"] = cfg.test_every;
    j["local_epochs_per_round"] = cfg.local_epochs_per_round;
    j["snr_db"] = cfg.snr_db;
    j["train_per_client"] = cfg.train_per_client;
    j["test_per_client"] = cfg.test_per_client;
    j["synth_classes"] = cfg.synth_classes;
    j["synth_dim"] = cfg.synth_dim;
    j["synth_separation"] = cfg.synth_separation;
    j["synth_noise_sigma"] = cfg.synth_noise_sigma;
    j["mnist_train_images"] = cfg.mnist_train_images;
    j["mnist_train_labels"] = cfg.mnist_train_labels;
    j["mnist_test_images"] = cfg.mnist_test_images;
    j["mnist_test_labels"] = cfg.mnist_test_labels;
    return j.dump();
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string s = canonical_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

topo::Schedule resolve_schedule(const ExperimentConfig& cfg) {
    if (cfg.schedule_path.empty()) throw ConfigError("config: schedule path not set");
    topo::Schedule schedule = topo::load_schedule(cfg.schedule_path);
    const int total_rounds = cfg.epochs / cfg.local_epochs_per_round;
    topo::resolve_rounds(schedule, total_rounds);
    auto errs = topo::validate_schedule(schedule);
    if (!errs.empty()) {
        std::string joined;
        for (const auto& e : errs) joined += (joined.empty() ? "" : "; ") + e;
        throw ConfigError("schedule invalid: " + joined);
    }
    return schedule;
}

// ---- data preparation ----------------------------------------------------------

namespace {

data::Dataset take_first(const data::Dataset& ds, int m, const std::string& what) {
    if (ds.size() < m)
        throw ConfigError("not enough samples for " + what + ": have " + std::to_string(ds.size()) + ", need " +
                          std::to_string(m));
    data::Dataset out;
    out.h = ds.h;
    out.w = ds.w;
    out.classes = ds.classes;
    out.labels.assign(ds.labels.begin(), ds.labels.begin() + m);
    out.images.assign(ds.images.begin(), ds.images.begin() + static_cast<size_t>(m) * ds.pixels());
    return out;
}

int max_scale_for_client(const topo::Schedule& schedule, int client) {
    int best = 0;
    for (size_t s = 0; s < schedule.slots.size(); ++s)
        best = std::max(best, topo::query(schedule, client, static_cast<int>(s)).scale_k);
    return std::max(best, 1);  // never-active clients still get a valid (unused) set
}

model::Architecture arch_for(const ExperimentConfig& cfg) {
    model::Architecture arch;
    if (cfg.dataset == "synth") {
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cfg.synth_dim))));
        arch.image_h = arch.image_w = side;
        arch.block_widths.back() = cfg.synth_classes;
    } else {
        arch.image_h = arch.image_w = 28;
        arch.block_widths.back() = 10;
    }
    return arch;
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg, const topo::Schedule& schedule) {
    const int n = schedule.clients;
    data::Dataset base_train, base_test;
    if (cfg.dataset == "synth") {
        // one draw for both splits: the class means must match between train
        // and test, only the per-sample noise may differ
        const int n_train = n * cfg.train_per_client;
        const int n_test = n * cfg.test_per_client;
        auto pool = data::synth_blobs(cfg.synth_classes, cfg.synth_dim, cfg.synth_separation, cfg.synth_noise_sigma,
                                      n_train + n_test, derive_seed(cfg.seed, 0x73796e7468ULL));  // "synth"
        auto carve = [&](int start, int count) {
            data::Dataset out;
            out.h = pool.h;
            out.w = pool.w;
            out.classes = pool.classes;
            out.labels.assign(pool.labels.begin() + start, pool.labels.begin() + start + count);
            out.images.assign(pool.images.begin() + static_cast<size_t>(start) * pool.pixels(),
                              pool.images.begin() + static_cast<size_t>(start + count) * pool.pixels());
            return out;
        };
        base_train = carve(0, n_train);
        base_test = carve(n_train, n_test);
    } else {
        base_train = data::load_idx(cfg.mnist_train_images, cfg.mnist_train_labels);
        base_test = data::load_idx(cfg.mnist_test_images, cfg.mnist_test_labels);
    }

    auto train_parts = data::partition_disjoint(base_train, n, derive_seed(cfg.seed, 0x70742d7472ULL));
    auto test_parts = data::partition_disjoint(base_test, n, derive_seed(cfg.seed, 0x70742d7465ULL));

    const data::NoiseSpec noise{cfg.snr_db};
    PreparedData prepared;
    for (int c = 0; c < n; ++c) {
        const int k = max_scale_for_client(schedule, c);
        auto tr = take_first(train_parts[static_cast<size_t>(c)], cfg.train_per_client,
                             "client " + std::to_string(c) + " train");
        auto te = take_first(test_parts[static_cast<size_t>(c)], cfg.test_per_client,
                             "client " + std::to_string(c) + " test");
        prepared.train.push_back(
            data::make_multiview(tr, k, noise, derive_seed(cfg.seed, 0x6e6f697365ULL, static_cast<std::uint64_t>(c), 0)));
        prepared.test.push_back(
            data::make_multiview(te, k, noise, derive_seed(cfg.seed, 0x6e6f697365ULL, static_cast<std::uint64_t>(c), 1)));
    }
    return prepared;
}

// ---- experiment driving -----------------------------------------------------------

fed::RunConfig build_run(const ExperimentConfig& cfg, const topo::Schedule& schedule, const std::string& method,
                         const PreparedData& prepared, std::vector<data::MultiViewSet>& b1_train,
                         std::vector<data::MultiViewSet>& b1_test) {
    fed::RunConfig run;
    run.method_label = method;
    run.arch = arch_for(cfg);
    run.sgd = {cfg.lr, cfg.lr_decay};
    run.train_batch = cfg.train_batch;
    run.test_batch = cfg.test_batch;
    run.local_epochs_per_round = cfg.local_epochs_per_round;
    run.test_every = cfg.test_every;
    run.master_seed = cfg.seed;
    run.out_dir = cfg.out_dir;
    run.schedule = schedule;
    run.train_sets = &prepared.train;
    run.test_sets = &prepared.test;

    if (method == "proposed") {
        // defaults: scaled model, aggregation, topology-driven K
    } else if (method == "baseline2") {
        run.force_k1 = true;
    } else if (method == "baseline3") {
        run.model_kind = fed::RunConfig::ModelKind::padded;
        run.pad_k = schedule.max_scale();
    } else if (method == "baseline1") {
        // client 0 alone: same slot structure and rounds, 1x1 adjacency
        run.force_k1 = true;
        run.aggregate = false;
        topo::Schedule solo;
        solo.clients = 1;
        for (const auto& s : schedule.slots) {
            topo::Slot slot;
            slot.label = s.label;
            slot.rounds = s.rounds;
            slot.adj = topo::AdjacencyMatrix(1);
            slot.adj.set(0, 0, 1);
            solo.slots.push_back(std::move(slot));
        }
        run.schedule = std::move(solo);
        b1_train.assign(1, prepared.train.at(0));
        b1_test.assign(1, prepared.test.at(0));
        run.train_sets = &b1_train;
        run.test_sets = &b1_test;
    } else {
        throw ConfigError("unknown method \"" + method + "\"");
    }
    return run;
}

double mean_final_accuracy(const metrics::MetricsLog& log, const std::string& method) {
    std::map<int, double> last;
    for (const auto& r : log.rows)
        if (r.method == method && r.metric == "test_accuracy") last[r.client] = r.value;
    if (last.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& [c, v] : last) sum += v;
    return sum / static_cast<double>(last.size());
}

MethodOutcome run_method(const ExperimentConfig& cfg, const topo::Schedule& schedule, const std::string& method,
                         const PreparedData& prepared) {
    std::vector<data::MultiViewSet> b1_train, b1_test;
    fed::RunConfig run = build_run(cfg, schedule, method, prepared, b1_train, b1_test);

    const auto t0 = std::chrono::steady_clock::now();
    MethodOutcome outcome;
    outcome.method = method;
    outcome.run = fed::run_schedule(run);
    outcome.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    outcome.mean_final_accuracy = mean_final_accuracy(outcome.run.log, method);
    return outcome;
}

std::vector<MethodOutcome> run_compare(const ExperimentConfig& cfg, const topo::Schedule& schedule,
                                       const PreparedData& prepared) {
    std::vector<MethodOutcome> outcomes;
    for (const std::string method : {"baseline1", "baseline2", "baseline3", "proposed"})
        outcomes.push_back(run_method(cfg, schedule, method, prepared));
    return outcomes;
}

void write_manifest(const ExperimentConfig& cfg, const std::vector<MethodOutcome>& outcomes,
                    const std::vector<std::string>& artifacts, const std::string& path) {
    json j;
    j["config"] = json::parse(canonical_config(cfg));
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
    j["config_hash"] = hex;
    j["seed"] = cfg.seed;
    json methods = json::array();
    for (const auto& o : outcomes) {
        json m;
        m["name"] = o.method;
        m["wall_seconds"] = o.wall_seconds;  // informational; excluded from any byte-identity claims
        m["mean_final_accuracy"] = o.mean_final_accuracy;
        methods.push_back(std::move(m));
    }
    j["methods"] = std::move(methods);
    j["artifacts"] = artifacts;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw metrics::IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out.flush()) throw metrics::IoError("write failed: " + path);
}

}  // namespace pepifed::cli
