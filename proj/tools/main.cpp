#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pepifed/config.hpp"
#include "pepifed/data.hpp"
#include "pepifed/federation.hpp"
#include "pepifed/metrics.hpp"
#include "pepifed/model.hpp"
#include "pepifed/topology.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct CommonOpts {
    std::string config_path;
    std::string method;
    std::string preset;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_method = true) {
    cmd->add_option("--config", opts.config_path, "experiment config (JSON)")->required();
    if (with_method) cmd->add_option("--method", opts.method, "proposed|baseline1|baseline2|baseline3");
    cmd->add_option("--preset", opts.preset, "full|desk")->check(CLI::IsMember({"full", "desk"}));
    cmd->add_option("--out", opts.out, "output directory");
    cmd->add_option("--seed", opts.seed, "master seed")->each([&](const std::string&) { opts.seed_set = true; });
}

pepifed::cli::ExperimentConfig effective_config(const CommonOpts& opts) {
    auto cfg = pepifed::cli::load_config(opts.config_path);
    if (!opts.preset.empty()) pepifed::cli::apply_preset(cfg, opts.preset);
    if (!opts.method.empty()) cfg.method = opts.method;
    if (!opts.out.empty()) cfg.out_dir = opts.out;
    if (opts.seed_set) cfg.seed = opts.seed;
    return cfg;
}

int check_config(const pepifed::cli::ExperimentConfig& cfg, const pepifed::topo::Schedule& schedule) {
    auto errs = pepifed::cli::validate_config(cfg, schedule);
    if (errs.empty()) return 0;
    for (const auto& e : errs) std::cerr << "config error: " << e << "\n";
    return kExitConfig;
}

int cmd_validate(const CommonOpts& opts) {
    auto cfg = effective_config(opts);
    auto schedule = pepifed::cli::resolve_schedule(cfg);  // throws with schedule diagnostics
    if (int rc = check_config(cfg, schedule)) return rc;
    std::cout << "config ok: method=" << cfg.method << " dataset=" << cfg.dataset
              << " clients=" << schedule.clients << " slots=" << schedule.slots.size()
              << " rounds=" << schedule.total_rounds() << "\n";
    return 0;
}

int cmd_gen_data(const CommonOpts& opts) {
    auto cfg = effective_config(opts);
    auto schedule = pepifed::cli::resolve_schedule(cfg);
    if (int rc = check_config(cfg, schedule)) return rc;

    auto prepared = pepifed::cli::prepare_data(cfg, schedule);
    std::filesystem::create_directories(cfg.out_dir);
    std::vector<std::string> artifacts;
    for (size_t c = 0; c < prepared.train.size(); ++c) {
        std::string tr = cfg.out_dir + "/train_c" + std::to_string(c) + ".mv";
        std::string te = cfg.out_dir + "/test_c" + std::to_string(c) + ".mv";
        pepifed::data::save_multiview(prepared.train[c], tr);
        pepifed::data::save_multiview(prepared.test[c], te);
        artifacts.push_back(tr);
        artifacts.push_back(te);
        std::cout << "client " << c << ": train " << prepared.train[c].size() << "x" << prepared.train[c].k
                  << " views, test " << prepared.test[c].size() << "x" << prepared.test[c].k << " views\n";
    }
    pepifed::cli::write_manifest(cfg, {}, artifacts, cfg.out_dir + "/manifest.json");
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    auto cfg = effective_config(opts);
    auto schedule = pepifed::cli::resolve_schedule(cfg);
    if (int rc = check_config(cfg, schedule)) return rc;

    auto prepared = pepifed::cli::prepare_data(cfg, schedule);
    auto outcome = pepifed::cli::run_method(cfg, schedule, cfg.method, prepared);

    std::filesystem::create_directories(cfg.out_dir);
    const std::string csv = cfg.out_dir + "/metrics.csv";
    const std::string svg = cfg.out_dir + "/accuracy.svg";
    pepifed::metrics::write_csv(outcome.run.log, csv);
    pepifed::metrics::write_accuracy_svg(outcome.run.log, svg);
    std::vector<std::string> artifacts = {csv, svg};
    for (const auto& p : outcome.run.checkpoint_paths) artifacts.push_back(p);
    pepifed::cli::write_manifest(cfg, {outcome}, artifacts, cfg.out_dir + "/manifest.json");

    std::printf("%s: mean final accuracy %.4f (%.1fs)\n", outcome.method.c_str(), outcome.mean_final_accuracy,
                outcome.wall_seconds);
    return 0;
}

int cmd_compare(const CommonOpts& opts) {
    auto cfg = effective_config(opts);
    auto schedule = pepifed::cli::resolve_schedule(cfg);
    // compare runs every method; baseline1's one-client constraint is
    // satisfied internally, so validate against the non-method fields only
    auto probe = cfg;
    probe.method = "proposed";
    if (int rc = check_config(probe, schedule)) return rc;

    auto prepared = pepifed::cli::prepare_data(cfg, schedule);
    auto outcomes = pepifed::cli::run_compare(cfg, schedule, prepared);

    pepifed::metrics::MetricsLog merged;
    for (const auto& o : outcomes) merged.append(o.run.log);

    std::filesystem::create_directories(cfg.out_dir);
    const std::string csv = cfg.out_dir + "/metrics.csv";
    const std::string svg = cfg.out_dir + "/accuracy.svg";
    pepifed::metrics::write_csv(merged, csv);
    pepifed::metrics::write_accuracy_svg(merged, svg);
    std::vector<std::string> artifacts = {csv, svg};
    for (const auto& o : outcomes)
        for (const auto& p : o.run.checkpoint_paths) artifacts.push_back(p);
    pepifed::cli::write_manifest(cfg, outcomes, artifacts, cfg.out_dir + "/manifest.json");

    for (const auto& o : outcomes)
        std::printf("%-10s mean final accuracy %.4f (%.1fs)\n", o.method.c_str(), o.mean_final_accuracy,
                    o.wall_seconds);
    return 0;
}

int cmd_param_count(const CommonOpts& opts) {
    auto cfg = effective_config(opts);
    auto schedule = pepifed::cli::resolve_schedule(cfg);
    auto probe = cfg;
    probe.method = "proposed";
    if (int rc = check_config(probe, schedule)) return rc;

    pepifed::model::Architecture arch;
    if (cfg.dataset == "synth") {
        int side = 1;
        while (side * side < cfg.synth_dim) ++side;
        arch.image_h = arch.image_w = side;
        arch.block_widths.back() = cfg.synth_classes;
    }
    const int max_k = schedule.max_scale();
    pepifed::model::ScaledNet proposed(arch, cfg.seed, 1, 0);
    pepifed::model::PaddedDenseNet padded(arch, max_k, cfg.seed);

    nlohmann::json j;
    j["architecture"] = {{"image", std::to_string(arch.image_h) + "x" + std::to_string(arch.image_w)},
                         {"conv_channels", arch.conv_channels},
                         {"block_widths", arch.block_widths}};
    nlohmann::json per_k = nlohmann::json::array();
    for (int k = 1; k <= std::max(max_k, 7); ++k) {
        auto r = pepifed::model::count_parameters(proposed, k);
        per_k.push_back({{"k", k},
                         {"trainable", r.trainable},
                         {"trainable_weights", r.trainable_weights},
                         {"effective_weights", r.effective},
                         {"shared_stack_ratio", r.ratio}});
    }
    j["proposed"] = {{"per_k", per_k}};
    j["baseline3"] = {{"pad_k", max_k}, {"trainable", pepifed::model::total_trainable(padded.snapshot())}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scalable distributed learning simulator: weight-shared block networks, "
                 "federated averaging, time-varying topologies"};
    app.require_subcommand(1);

    CommonOpts gen_o, train_o, cmp_o, pc_o, val_o;
    auto* gen = app.add_subcommand("gen-data", "prepare and cache the per-client multi-view datasets");
    add_common(gen, gen_o, false);
    auto* train = app.add_subcommand("train", "run one method over the schedule");
    add_common(train, train_o);
    auto* cmp = app.add_subcommand("compare", "run all four methods over shared data");
    add_common(cmp, cmp_o, false);
    auto* pc = app.add_subcommand("param-count", "report trainable/effective parameter counts");
    add_common(pc, pc_o, false);
    auto* val = app.add_subcommand("validate", "check config and schedule, then exit");
    add_common(val, val_o);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_o);
        if (train->parsed()) return cmd_train(train_o);
        if (cmp->parsed()) return cmd_compare(cmp_o);
        if (pc->parsed()) return cmd_param_count(pc_o);
        if (val->parsed()) return cmd_validate(val_o);
    } catch (const pepifed::cli::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const pepifed::data::FormatError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
