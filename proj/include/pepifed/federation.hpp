#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pepifed/data.hpp"
#include "pepifed/metrics.hpp"
#include "pepifed/model.hpp"
#include "pepifed/nn.hpp"
#include "pepifed/topology.hpp"

namespace pepifed::fed {

// ---- checkpoint persistence -------------------------------------------------

enum class CheckpointCode { io, bad_magic, bad_version, truncated, bad_layer };

struct CheckpointError : std::runtime_error {
    CheckpointCode code;
    CheckpointError(CheckpointCode c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const model::ModelParams& params, const std::string& path);
model::ModelParams load_checkpoint(const std::string& path);

// ---- aggregation -------------------------------------------------------------

struct LocalUpdate {
    int client_id = 0;
    std::int64_t weight = 0;  // sample count
    model::ModelParams params;
};

// Sample-count-weighted elementwise mean, summed in ascending client-id
// order with 64-bit accumulation. Identical updates are a bit-exact fixpoint.
model::ModelParams aggregate(const std::vector<LocalUpdate>& updates);

// ---- local training -----------------------------------------------------------

struct TrainReport {
    std::vector<double> epoch_mean_loss;  // one entry per local epoch
};

// Mini-batch SGD over shuffled batches; epoch e uses lr(first_global_epoch+e).
// epochs == 0 leaves the net untouched and still reports weight = |train|.
LocalUpdate local_train(model::Net& net, const data::MultiViewSet& train, int epochs, const nn::SgdSchedule& sched,
                        int first_global_epoch, int batch_size, std::uint64_t seed, TrainReport* report = nullptr);

struct EvalStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

EvalStats evaluate(const model::Net& net, const data::MultiViewSet& test, int batch_size);

// ---- schedule orchestration ----------------------------------------------------

struct ClientState {
    int id = 0;
    std::unique_ptr<model::Net> net;
    data::MultiViewSet train, test;  // sliced to the current scale
    bool active = false;
    int scale_k = 0;
};

struct RunConfig {
    std::string method_label = "proposed";
    enum class ModelKind { scaled, padded } model_kind = ModelKind::scaled;
    bool aggregate = true;
    bool force_k1 = false;  // baselines 1/2 run every client at K = 1
    topo::Schedule schedule;
    model::Architecture arch;
    int pad_k = 0;  // padded model width multiple; 0 = schedule max K
    nn::SgdSchedule sgd;
    int train_batch = 500;
    int test_batch = 128;
    int local_epochs_per_round = 1;
    int test_every = 2;
    std::uint64_t master_seed = 1;
    std::string out_dir;  // empty disables checkpoint files
    const std::vector<data::MultiViewSet>* train_sets = nullptr;  // per client, prepared at >= needed K
    const std::vector<data::MultiViewSet>* test_sets = nullptr;
};

struct Transition {
    int client = 0;
    std::string from_slot, to_slot;
    int old_k = 0, new_k = 0;  // 0 encodes inactive
    bool params_bit_identical = false;
};

struct RunResult {
    metrics::MetricsLog log;
    std::vector<Transition> transitions;
    model::ModelParams final_global;
    std::vector<std::string> checkpoint_paths;
};

// The round loop of the whole simulation: per slot, rescale active clients to
// their queried K (parameters carried over bit-exactly); per round, local
// training on every active client, aggregation, broadcast; evaluation every
// `test_every` global epochs and at each slot's last round. Inactive clients
// are skipped entirely.
RunResult run_schedule(const RunConfig& cfg);

}  // namespace pepifed::fed
