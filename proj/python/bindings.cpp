#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pepifed/data.hpp"
#include "pepifed/federation.hpp"
#include "pepifed/model.hpp"
#include "pepifed/nn.hpp"
#include "pepifed/pepi.hpp"
#include "pepifed/rng.hpp"
#include "pepifed/topology.hpp"

namespace py = pybind11;
using namespace pepifed;

namespace {

using Matrix = std::vector<std::vector<double>>;

Tensor tensor_2d(const Matrix& m, const char* what) {
    if (m.empty() || m.front().empty()) throw std::invalid_argument(std::string(what) + " must be non-empty");
    const int rows = static_cast<int>(m.size());
    const int cols = static_cast<int>(m.front().size());
    Tensor t({rows, cols});
    for (int r = 0; r < rows; ++r) {
        if (static_cast<int>(m[static_cast<size_t>(r)].size()) != cols)
            throw std::invalid_argument(std::string(what) + " rows have unequal lengths");
        for (int c = 0; c < cols; ++c)
            t.data[static_cast<size_t>(r) * cols + c] = static_cast<float>(m[static_cast<size_t>(r)][static_cast<size_t>(c)]);
    }
    return t;
}

Tensor tensor_1d(const std::vector<double>& v) {
    Tensor t({static_cast<int>(v.size())});
    for (size_t i = 0; i < v.size(); ++i) t.data[i] = static_cast<float>(v[i]);
    return t;
}

Matrix matrix_of(const Tensor& t) {
    Matrix m(static_cast<size_t>(t.dim(0)), std::vector<double>(static_cast<size_t>(t.dim(1))));
    for (int r = 0; r < t.dim(0); ++r)
        for (int c = 0; c < t.dim(1); ++c)
            m[static_cast<size_t>(r)][static_cast<size_t>(c)] = t.data[static_cast<size_t>(r) * t.dim(1) + c];
    return m;
}

std::vector<double> vector_of(const Tensor& t) { return {t.data.begin(), t.data.end()}; }

pepi::SubMatrixPair pair_of(const Matrix& s, const Matrix& o, const std::vector<double>& bias) {
    pepi::SubMatrixPair p;
    p.s = tensor_2d(s, "s");
    p.o = tensor_2d(o, "o");
    if (p.s.shape != p.o.shape) throw std::invalid_argument("s and o must share one shape");
    if (static_cast<int>(bias.size()) != p.s.dim(0)) throw std::invalid_argument("bias length must match out_dim");
    p.bias = tensor_1d(bias);
    return p;
}

nn::Activation act_of(const std::string& name) {
    if (name == "identity") return nn::Activation::identity;
    if (name == "relu") return nn::Activation::relu;
    throw std::invalid_argument("activation must be identity or relu");
}

model::Architecture arch_of(int image_side, const std::vector<int>& conv_channels,
                            const std::vector<int>& block_widths) {
    if (image_side < 1) throw std::invalid_argument("image_side must be >= 1");
    if (conv_channels.empty() || block_widths.empty())
        throw std::invalid_argument("conv_channels and block_widths must be non-empty");
    model::Architecture arch;
    arch.image_h = arch.image_w = image_side;
    arch.conv_channels = conv_channels;
    arch.block_widths = block_widths;
    if (arch.feature_shape().count() < 1) throw std::invalid_argument("image too small for the conv encoder");
    return arch;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "C++ core: weight-shared block layers, topology schedules, synthetic multi-view data";

    // ---- shared-layer algebra ----------------------------------------------

    m.def(
        "new_sub_matrix_pair",
        [](int in_dim, int out_dim, std::uint64_t seed) {
            Rng rng(seed);
            auto p = pepi::new_sub_matrix_pair(in_dim, out_dim, pepi::InitSpec::FanIn(), rng);
            py::dict d;
            d["s"] = matrix_of(p.s);
            d["o"] = matrix_of(p.o);
            d["bias"] = vector_of(p.bias);
            return d;
        },
        py::arg("in_dim"), py::arg("out_dim"), py::arg("seed"),
        "Fan-in initialized (S, O, bias) triple as plain nested lists");

    m.def(
        "layer_forward",
        [](const Matrix& s, const Matrix& o, const std::vector<double>& bias, const pepi::Blocks& blocks,
           const std::string& activation) { return pepi::layer_forward(pair_of(s, o, bias), blocks, act_of(activation)); },
        py::arg("s"), py::arg("o"), py::arg("bias"), py::arg("blocks"), py::arg("activation") = "identity",
        "Apply one shared layer to K input blocks");

    m.def(
        "effective_matrix",
        [](const Matrix& s, const Matrix& o, const std::vector<double>& bias, int k) {
            const auto eff = pepi::build_effective_matrix(pair_of(s, o, bias), k);
            Matrix w(static_cast<size_t>(eff.rows()), std::vector<double>(static_cast<size_t>(eff.cols())));
            for (int r = 0; r < eff.rows(); ++r)
                for (int c = 0; c < eff.cols(); ++c)
                    w[static_cast<size_t>(r)][static_cast<size_t>(c)] =
                        eff.weights[static_cast<size_t>(r) * eff.cols() + c];
            py::dict d;
            d["weights"] = std::move(w);
            d["bias"] = eff.bias;
            return d;
        },
        py::arg("s"), py::arg("o"), py::arg("bias"), py::arg("k"),
        "Expanded (out*k) x (in*k) matrix: S on the block diagonal, O elsewhere");

    m.def("pi_readout", &pepi::pi_readout, py::arg("blocks"), py::arg("target_index"),
          "The target view's output block");

    // ---- topology schedules --------------------------------------------------

    py::class_<topo::Schedule>(m, "Schedule")
        .def_property_readonly("clients", [](const topo::Schedule& s) { return s.clients; })
        .def_property_readonly("slot_labels",
                               [](const topo::Schedule& s) {
                                   std::vector<std::string> labels;
                                   for (const auto& slot : s.slots) labels.push_back(slot.label);
                                   return labels;
                               })
        .def_property_readonly("slot_rounds",
                               [](const topo::Schedule& s) {
                                   std::vector<int> rounds;
                                   for (const auto& slot : s.slots) rounds.push_back(slot.rounds);
                                   return rounds;
                               })
        .def("total_rounds", &topo::Schedule::total_rounds)
        .def("max_scale", &topo::Schedule::max_scale)
        .def(
            "query",
            [](const topo::Schedule& s, int client, int slot) {
                const auto v = topo::query(s, client, slot);
                py::dict d;
                d["active"] = v.active;
                d["neighbors"] = v.neighbors;
                d["scale_k"] = v.scale_k;
                return d;
            },
            py::arg("client"), py::arg("slot"));

    m.def("load_schedule", &topo::load_schedule, py::arg("path"));
    m.def("parse_schedule", &topo::parse_schedule, py::arg("json_text"));
    m.def("validate_schedule", &topo::validate_schedule, py::arg("schedule"),
          "Every violation found; an empty list means the schedule is valid");

    // ---- data ---------------------------------------------------------------

    m.def(
        "synth_blobs",
        [](int classes, int dim, double separation, double noise_sigma, int n, std::uint64_t seed) {
            const auto ds = data::synth_blobs(classes, dim, separation, noise_sigma, n, seed);
            py::dict d;
            d["images"] = ds.images;
            d["labels"] = ds.labels;
            d["h"] = ds.h;
            d["w"] = ds.w;
            d["classes"] = ds.classes;
            return d;
        },
        py::arg("classes"), py::arg("dim"), py::arg("separation"), py::arg("noise_sigma"), py::arg("n"),
        py::arg("seed"), "Gaussian class blobs reshaped to square pseudo-images");

    m.def(
        "add_awgn",
        [](std::vector<float> image, double snr_db, std::uint64_t seed) {
            Rng rng(seed);
            data::add_awgn(image, {snr_db}, rng);
            return image;
        },
        py::arg("image"), py::arg("snr_db"), py::arg("seed"),
        "The image plus white Gaussian noise scaled to the requested SNR");

    // ---- model --------------------------------------------------------------

    m.def(
        "param_counts",
        [](int image_side, const std::vector<int>& conv_channels, const std::vector<int>& block_widths, int k) {
            model::ScaledNet net(arch_of(image_side, conv_channels, block_widths), 1, 1, 0);
            const auto r = model::count_parameters(net, k);
            py::dict d;
            d["trainable"] = r.trainable;
            d["trainable_weights"] = r.trainable_weights;
            d["effective_weights"] = r.effective;
            d["shared_trainable_weights"] = r.pepi_trainable_weights;
            d["shared_effective_weights"] = r.pepi_effective_weights;
            d["shared_stack_ratio"] = r.ratio;
            return d;
        },
        py::arg("image_side"), py::arg("conv_channels"), py::arg("block_widths"), py::arg("k"));

    py::class_<model::ScaledNet>(m, "ScaledNet")
        .def(py::init([](int image_side, const std::vector<int>& conv_channels, const std::vector<int>& block_widths,
                         std::uint64_t seed, int scale_k) {
                 return model::ScaledNet(arch_of(image_side, conv_channels, block_widths), seed, scale_k, 0);
             }),
             py::arg("image_side"), py::arg("conv_channels"), py::arg("block_widths"), py::arg("seed"),
             py::arg("scale_k") = 1)
        .def_property_readonly("scale", &model::ScaledNet::scale)
        .def("set_scale", &model::ScaledNet::set_scale, py::arg("new_k"))
        .def(
            "logits",
            [](const model::ScaledNet& net, const std::vector<float>& views) {
                const auto& arch = net.arch();
                const size_t need = static_cast<size_t>(net.scale()) * arch.image_h * arch.image_w;
                if (views.size() != need)
                    throw std::invalid_argument("views must hold scale_k * side * side values (" +
                                                std::to_string(need) + ")");
                data::MultiViewSample sample;
                sample.k = net.scale();
                sample.label = 0;
                sample.views = views;
                return net.forward_logits(sample);
            },
            py::arg("views"), "Class logits of the target view; views are the K images flattened back to back");

    m.def(
        "checkpoint_layer_kinds",
        [](const std::string& path) {
            const auto params = fed::load_checkpoint(path);
            std::vector<std::string> kinds;
            for (const auto& l : params.layers)
                kinds.push_back(l.kind == model::LayerKind::conv ? "conv"
                                : l.kind == model::LayerKind::pepi ? "pepi"
                                                                   : "dense");
            return kinds;
        },
        py::arg("path"), "Layer kinds stored in a checkpoint, in file order");
}
