#include "pepifed/federation.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace pepifed::fed {

// ---- checkpoint persistence -------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'E', 'P', 'I'};

void w_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff), static_cast<char>((v >> 16) & 0xff),
                 static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

void w_f32(std::ostream& out, float f) { w_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t r_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError(CheckpointCode::truncated, "truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float r_f32(std::istream& in) { return std::bit_cast<float>(r_u32(in)); }

int dims_for(model::LayerKind kind) {
    switch (kind) {
        case model::LayerKind::conv:
            return 4;  // out_c, kh, kw, in_c
        case model::LayerKind::pepi:
        case model::LayerKind::dense:
            return 2;  // out, in
    }
    return 0;
}

size_t arrays_for(model::LayerKind kind) { return kind == model::LayerKind::pepi ? 3 : 2; }

}  // namespace

void save_checkpoint(const model::ModelParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError(CheckpointCode::io, "cannot open for writing: " + path);
    out.write(kMagic, 4);
    w_u32(out, kCheckpointVersion);
    w_u32(out, static_cast<std::uint32_t>(params.layers.size()));
    for (const auto& layer : params.layers) {
        if (layer.arrays.size() != arrays_for(layer.kind))
            throw CheckpointError(CheckpointCode::bad_layer, "layer has an unexpected array count");
        out.put(static_cast<char>(layer.kind));
        const auto& lead = layer.arrays[0];  // kernels / S / weights carry the dims
        if (static_cast<int>(lead.shape.size()) != dims_for(layer.kind))
            throw CheckpointError(CheckpointCode::bad_layer, "layer dims do not match its kind");
        for (int d : lead.shape) w_u32(out, static_cast<std::uint32_t>(d));
        for (const auto& t : layer.arrays)
            for (float f : t.data) w_f32(out, f);
    }
    if (!out.flush()) throw CheckpointError(CheckpointCode::io, "write failed: " + path);
}

model::ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointCode::io, "cannot open for reading: " + path);
    char magic[4];
    if (!in.read(magic, 4)) throw CheckpointError(CheckpointCode::truncated, "truncated header");
    if (std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(CheckpointCode::bad_magic, "bad magic bytes");
    const std::uint32_t version = r_u32(in);
    if (version != kCheckpointVersion)
        throw CheckpointError(CheckpointCode::bad_version,
                              "unsupported format version " + std::to_string(version));
    const std::uint32_t n_layers = r_u32(in);

    model::ModelParams params;
    for (std::uint32_t li = 0; li < n_layers; ++li) {
        int kind_byte = in.get();
        if (kind_byte == EOF) throw CheckpointError(CheckpointCode::truncated, "truncated at layer tag");
        auto kind = static_cast<model::LayerKind>(kind_byte);
        if (kind != model::LayerKind::conv && kind != model::LayerKind::pepi && kind != model::LayerKind::dense)
            throw CheckpointError(CheckpointCode::bad_layer, "unknown layer kind tag " + std::to_string(kind_byte));

        std::vector<int> dims(static_cast<size_t>(dims_for(kind)));
        for (auto& d : dims) {
            d = static_cast<int>(r_u32(in));
            if (d <= 0) throw CheckpointError(CheckpointCode::bad_layer, "non-positive layer dimension");
        }

        model::LayerParams layer;
        layer.kind = kind;
        const int out_dim = dims[0];
        std::vector<std::vector<int>> shapes;
        if (kind == model::LayerKind::pepi)
            shapes = {dims, dims, {out_dim}};
        else
            shapes = {dims, {out_dim}};
        for (const auto& shape : shapes) {
            Tensor t(shape);
            for (auto& f : t.data) f = r_f32(in);
            layer.arrays.push_back(std::move(t));
        }
        params.layers.push_back(std::move(layer));
    }
    return params;
}

// ---- aggregation ---------------------------------------------------------------

model::ModelParams aggregate(const std::vector<LocalUpdate>& updates) {
    if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
    std::vector<const LocalUpdate*> ordered;
    ordered.reserve(updates.size());
    for (const auto& u : updates) {
        if (u.weight <= 0) throw std::invalid_argument("aggregate: non-positive update weight");
        ordered.push_back(&u);
    }
    std::sort(ordered.begin(), ordered.end(),
              [](const LocalUpdate* a, const LocalUpdate* b) { return a->client_id < b->client_id; });

    const model::ModelParams& first = ordered.front()->params;
    for (const auto* u : ordered) {
        if (u->params.layers.size() != first.layers.size()) throw ShapeError("aggregate: layer count mismatch");
        for (size_t li = 0; li < first.layers.size(); ++li) {
            if (u->params.layers[li].kind != first.layers[li].kind)
                throw ShapeError("aggregate: layer kind mismatch");
            if (u->params.layers[li].arrays.size() != first.layers[li].arrays.size())
                throw ShapeError("aggregate: array count mismatch");
            for (size_t ai = 0; ai < first.layers[li].arrays.size(); ++ai)
                if (!u->params.layers[li].arrays[ai].same_shape(first.layers[li].arrays[ai]))
                    throw ShapeError("aggregate: parameter shape mismatch");
        }
    }

    double weight_sum = 0.0;
    for (const auto* u : ordered) weight_sum += static_cast<double>(u->weight);

    model::ModelParams result = first;  // structure template; values overwritten
    for (size_t li = 0; li < result.layers.size(); ++li) {
        for (size_t ai = 0; ai < result.layers[li].arrays.size(); ++ai) {
            Tensor& out = result.layers[li].arrays[ai];
            std::vector<double> acc(out.data.size(), 0.0);
            for (const auto* u : ordered) {
                const double w = static_cast<double>(u->weight);
                const auto& src = u->params.layers[li].arrays[ai].data;
                for (size_t i = 0; i < acc.size(); ++i) acc[i] += w * static_cast<double>(src[i]);
            }
            for (size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i] / weight_sum);
        }
    }
    return result;
}

// ---- local training --------------------------------------------------------------

LocalUpdate local_train(model::Net& net, const data::MultiViewSet& train, int epochs, const nn::SgdSchedule& sched,
                        int first_global_epoch, int batch_size, std::uint64_t seed, TrainReport* report) {
    if (epochs < 0) throw std::invalid_argument("local_train: negative epoch count");
    if (batch_size < 1) throw std::invalid_argument("local_train: batch size must be >= 1");
    const int n = train.size();
    if (n == 0) throw std::invalid_argument("local_train: empty training set");

    std::vector<int> order(static_cast<size_t>(n));
    for (int e = 0; e < epochs; ++e) {
        const double lr = sched.lr(first_global_epoch + e);
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e)));
        shuffle(order, rng);

        double loss_sum = 0.0;
        for (int start = 0; start < n; start += batch_size) {
            const int stop = std::min(start + batch_size, n);
            net.zero_grads();
            for (int i = start; i < stop; ++i)
                loss_sum += net.forward_backward(train.samples[static_cast<size_t>(order[static_cast<size_t>(i)])]).loss;
            net.apply_sgd(lr, stop - start);
        }
        if (report) report->epoch_mean_loss.push_back(loss_sum / n);
    }

    LocalUpdate update;
    update.weight = n;
    update.params = net.snapshot();
    return update;
}

EvalStats evaluate(const model::Net& net, const data::MultiViewSet& test, int batch_size) {
    if (batch_size < 1) throw std::invalid_argument("evaluate: batch size must be >= 1");
    const int n = test.size();
    if (n == 0) throw std::invalid_argument("evaluate: empty test set");
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    for (int start = 0; start < n; start += batch_size) {
        const int stop = std::min(start + batch_size, n);
        for (int i = start; i < stop; ++i) {
            auto r = net.evaluate_sample(test.samples[static_cast<size_t>(i)]);
            loss_sum += r.loss;
            correct += r.correct ? 1 : 0;
        }
    }
    return {loss_sum / n, static_cast<double>(correct) / n};
}

// ---- schedule orchestration ---------------------------------------------------------

namespace {

std::string safe_label(const std::string& label) {
    std::string out;
    for (char c : label) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out.empty() ? "slot" : out;
}

}  // namespace

RunResult run_schedule(const RunConfig& cfg) {
    auto violations = topo::validate_schedule(cfg.schedule);
    if (!violations.empty()) throw std::invalid_argument("run_schedule: invalid schedule: " + violations.front());
    if (!cfg.train_sets || !cfg.test_sets) throw std::invalid_argument("run_schedule: datasets not provided");
    if (static_cast<int>(cfg.train_sets->size()) != cfg.schedule.clients ||
        static_cast<int>(cfg.test_sets->size()) != cfg.schedule.clients)
        throw std::invalid_argument("run_schedule: need one train/test set per client");

    const int n_clients = cfg.schedule.clients;
    const std::uint64_t init_seed = derive_seed(cfg.master_seed, 0x696e6974ULL);  // "init"

    std::unique_ptr<model::Net> prototype;
    if (cfg.model_kind == RunConfig::ModelKind::padded) {
        const int pad = cfg.pad_k > 0 ? cfg.pad_k : cfg.schedule.max_scale();
        prototype = std::make_unique<model::PaddedDenseNet>(cfg.arch, pad, init_seed);
    } else {
        // Construct at the widest scale the schedule will use so the entry
        // layer is initialized for that width; clients rescale from there.
        const int init_k = cfg.force_k1 ? 1 : cfg.schedule.max_scale();
        prototype = std::make_unique<model::ScaledNet>(cfg.arch, init_seed, init_k, 0);
    }

    std::vector<ClientState> clients(static_cast<size_t>(n_clients));
    for (int c = 0; c < n_clients; ++c) {
        clients[static_cast<size_t>(c)].id = c;
        clients[static_cast<size_t>(c)].net = prototype->clone();
    }

    RunResult result;
    result.final_global = prototype->snapshot();

    int global_epoch = 0;  // completed epochs so far
    int global_round = 0;
    for (size_t s = 0; s < cfg.schedule.slots.size(); ++s) {
        const topo::Slot& slot = cfg.schedule.slots[s];

        // slot entry: activity, rescaling (parameters must carry over
        // untouched), data slices at the slot's per-client scale
        for (auto& cs : clients) {
            const auto view = topo::query(cfg.schedule, cs.id, static_cast<int>(s));
            const bool was_active = cs.active;
            const int old_k = cs.scale_k;
            cs.active = view.active;
            const int new_k = view.active ? (cfg.force_k1 ? 1 : view.scale_k) : 0;

            bool identical = true;
            if (view.active && cfg.model_kind == RunConfig::ModelKind::scaled) {
                auto* scaled = static_cast<model::ScaledNet*>(cs.net.get());
                if (scaled->scale() != new_k) {
                    const auto before = scaled->snapshot();
                    scaled->set_scale(new_k);
                    identical = model::bit_equal(before, scaled->snapshot());
                }
            }
            if (s > 0 && (was_active != cs.active || old_k != new_k))
                result.transitions.push_back({cs.id, cfg.schedule.slots[s - 1].label, slot.label, old_k, new_k,
                                              identical});
            cs.scale_k = new_k;

            if (view.active) {
                cs.train = data::slice_views((*cfg.train_sets)[static_cast<size_t>(cs.id)], new_k);
                cs.test = data::slice_views((*cfg.test_sets)[static_cast<size_t>(cs.id)], new_k);
            } else {
                cs.train = {};
                cs.test = {};
            }
        }

        for (int r = 1; r <= slot.rounds; ++r) {
            ++global_round;
            std::vector<LocalUpdate> updates;
            for (auto& cs : clients) {
                if (!cs.active) continue;
                TrainReport report;
                const std::uint64_t seed =
                    derive_seed(cfg.master_seed, 0x747261696eULL, static_cast<std::uint64_t>(cs.id),
                                static_cast<std::uint64_t>(global_round));
                LocalUpdate u = local_train(*cs.net, cs.train, cfg.local_epochs_per_round, cfg.sgd, global_epoch,
                                            cfg.train_batch, seed, &report);
                u.client_id = cs.id;
                updates.push_back(std::move(u));
                for (size_t e = 0; e < report.epoch_mean_loss.size(); ++e)
                    result.log.add({cfg.method_label, static_cast<int>(s), slot.label, r,
                                    global_epoch + static_cast<int>(e) + 1, cs.id, "train_loss",
                                    report.epoch_mean_loss[e]});
            }
            global_epoch += cfg.local_epochs_per_round;
            if (updates.empty()) continue;  // a slot with no active client trains nobody

            if (cfg.aggregate) {
                result.final_global = aggregate(updates);
                for (auto& cs : clients)
                    if (cs.active) cs.net->restore(result.final_global);
            } else {
                result.final_global = updates.back().params;
            }

            if (global_epoch % cfg.test_every == 0 || r == slot.rounds) {
                for (auto& cs : clients) {
                    if (!cs.active) continue;
                    const EvalStats stats = evaluate(*cs.net, cs.test, cfg.test_batch);
                    result.log.add({cfg.method_label, static_cast<int>(s), slot.label, r, global_epoch, cs.id,
                                    "test_loss", stats.loss});
                    result.log.add({cfg.method_label, static_cast<int>(s), slot.label, r, global_epoch, cs.id,
                                    "test_accuracy", stats.accuracy});
                }
            }
        }

        if (!cfg.out_dir.empty()) {
            std::filesystem::create_directories(cfg.out_dir);
            const std::string path =
                cfg.out_dir + "/checkpoint_" + cfg.method_label + "_" + safe_label(slot.label) + ".bin";
            save_checkpoint(result.final_global, path);
            result.checkpoint_paths.push_back(path);
        }
    }
    return result;
}

}  // namespace pepifed::fed
