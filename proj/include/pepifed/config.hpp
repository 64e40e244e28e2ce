#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pepifed/federation.hpp"
#include "pepifed/topology.hpp"

namespace pepifed::cli {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::string method = "proposed";  // proposed | baseline1 | baseline2 | baseline3
    std::string dataset = "synth";    // synth | mnist
    std::string schedule_path;
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    std::string preset;  // "", "desk" or "full"

    // hyperparameters (defaults = full-scale table)
    double lr = 0.05;
    double lr_decay = 0.99;
    int train_batch = 500;
    int test_batch = 128;
    int epochs = 20;
    int test_every = 2;
    int local_epochs_per_round = 1;
    double snr_db = -10.0;
    int train_per_client = 12000;
    int test_per_client = 2000;

    // synth dataset knobs (calibrated so the desk preset separates the four
    // methods within its training budget)
    int synth_classes = 4;
    int synth_dim = 400;  // 20x20 pseudo-images
    double synth_separation = 6.0;
    double synth_noise_sigma = 0.1;

    // mnist IDX paths
    std::string mnist_train_images, mnist_train_labels, mnist_test_images, mnist_test_labels;
};

// Strict parse: unknown keys are rejected so typos fail fast.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// desk: 2000 train / 500 test per client, 10 epochs; full: the defaults.
void apply_preset(ExperimentConfig& cfg, const std::string& preset);

// Cross-field checks (method names, positive counts, baseline1's one-client
// constraint against the schedule). Returns every problem found.
std::vector<std::string> validate_config(const ExperimentConfig& cfg, const topo::Schedule& schedule);

// Canonical JSON dump of the effective config (sorted keys) and an FNV-1a
// hash of it; both go into the run manifest.
std::string canonical_config(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

// ---- data preparation ---------------------------------------------------------

struct PreparedData {
    std::vector<data::MultiViewSet> train, test;  // one per client, at that client's max K
};

// Base dataset -> per-client disjoint partitions (truncated to the per-client
// budgets) -> multi-view expansion at each client's maximum scale across the
// schedule. Noise streams depend only on (seed, client, sample), never on the
// method, so every method sees identical realizations.
PreparedData prepare_data(const ExperimentConfig& cfg, const topo::Schedule& schedule);

// ---- experiment driving ---------------------------------------------------------

// Maps (config, schedule, method) onto a federation run. For baseline1 the
// schedule collapses to client 0 alone (same slot structure and rounds), fed
// with client 0's partition.
fed::RunConfig build_run(const ExperimentConfig& cfg, const topo::Schedule& schedule, const std::string& method,
                         const PreparedData& prepared, std::vector<data::MultiViewSet>& b1_train,
                         std::vector<data::MultiViewSet>& b1_test);

struct MethodOutcome {
    std::string method;
    double mean_final_accuracy = 0.0;  // mean over clients of the last test_accuracy
    double wall_seconds = 0.0;
    fed::RunResult run;
};

// Runs one method end to end (data prep included) and returns its outcome.
MethodOutcome run_method(const ExperimentConfig& cfg, const topo::Schedule& schedule, const std::string& method,
                         const PreparedData& prepared);

// All four methods sequentially over shared data; metrics merged into one log.
std::vector<MethodOutcome> run_compare(const ExperimentConfig& cfg, const topo::Schedule& schedule,
                                       const PreparedData& prepared);

double mean_final_accuracy(const metrics::MetricsLog& log, const std::string& method);

// Resolved schedule for a config: loads, fills unset slot rounds from the
// config's epoch budget, validates. Throws ConfigError on any violation.
topo::Schedule resolve_schedule(const ExperimentConfig& cfg);

void write_manifest(const ExperimentConfig& cfg, const std::vector<MethodOutcome>& outcomes,
                    const std::vector<std::string>& artifacts, const std::string& path);

}  // namespace pepifed::cli
