#include "pepifed/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace pepifed::model {

nn::ConvShape Architecture::feature_shape() const {
    nn::ConvShape s{image_h, image_w, 1};
    for (int out_c : conv_channels) s = nn::pool_output_shape(nn::conv_output_shape(s.h, s.w, out_c));
    return s;
}

std::int64_t ModelParams::scalar_count() const {
    std::int64_t n = 0;
    for (const auto& layer : layers)
        for (const auto& t : layer.arrays) n += t.size();
    return n;
}

bool bit_equal(const ModelParams& a, const ModelParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (size_t i = 0; i < a.layers.size(); ++i) {
        if (a.layers[i].kind != b.layers[i].kind) return false;
        if (a.layers[i].arrays.size() != b.layers[i].arrays.size()) return false;
        for (size_t j = 0; j < a.layers[i].arrays.size(); ++j)
            if (!bit_equal(a.layers[i].arrays[j], b.layers[i].arrays[j])) return false;
    }
    return true;
}

std::int64_t total_trainable(const ModelParams& params) { return params.scalar_count(); }

namespace {

std::vector<nn::ConvBlock> make_encoder(const Architecture& arch, std::uint64_t seed) {
    std::vector<nn::ConvBlock> enc;
    int in_c = 1;
    for (size_t i = 0; i < arch.conv_channels.size(); ++i) {
        enc.push_back(nn::make_conv_block(in_c, arch.conv_channels[i], derive_seed(seed, 100 + i)));
        in_c = arch.conv_channels[i];
    }
    return enc;
}

// one view through the conv stack; `caches` (when present) already holds one
// slot per block
std::vector<double> encode_view(const std::vector<nn::ConvBlock>& enc, const Architecture& arch,
                                std::span<const float> image, std::vector<nn::ConvBlockCache>* caches) {
    std::vector<double> x(image.begin(), image.end());
    int h = arch.image_h, w = arch.image_w, c = 1;
    for (size_t b = 0; b < enc.size(); ++b) {
        x = nn::conv_block_forward(enc[b], x, h, w, c, caches ? &(*caches)[b] : nullptr);
        auto out = nn::pool_output_shape(nn::conv_output_shape(h, w, enc[b].out_channels()));
        h = out.h, w = out.w, c = out.c;
    }
    return x;
}

// backprop one view's feature gradient; the image gradient itself is never
// needed, so block 0 skips d_input
void encode_backward(const std::vector<nn::ConvBlock>& enc, const std::vector<nn::ConvBlockCache>& caches,
                     std::vector<double> grad, std::vector<std::vector<double>>& conv_grads) {
    for (int b = static_cast<int>(enc.size()) - 1; b >= 0; --b) {
        std::vector<double> d_input;
        nn::conv_block_backward(enc[b], caches[b], grad, conv_grads[2 * b], conv_grads[2 * b + 1],
                                b > 0 ? &d_input : nullptr);
        if (b > 0) grad = std::move(d_input);
    }
}

int argmax(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

void check_tensor(const Tensor& got, const Tensor& want, const char* what) {
    if (!got.same_shape(want)) throw ShapeError(std::string("restore: shape mismatch for ") + what);
}

}  // namespace

// ---- ScaledNet -------------------------------------------------------------

struct ScaledNet::Trace {
    std::vector<std::vector<nn::ConvBlockCache>> conv;  // [view][block]
    std::vector<pepi::ForwardCache> shared;             // [layer]
};

ScaledNet::ScaledNet(Architecture arch, std::uint64_t init_seed, int scale_k, int target_index)
    : arch_(std::move(arch)), scale_k_(scale_k), target_(target_index) {
    if (scale_k_ < 1) throw std::invalid_argument("scale must be >= 1");
    if (target_ < 0 || target_ >= scale_k_) throw std::invalid_argument("target view out of range");
    encoder_ = make_encoder(arch_, init_seed);
    int in_dim = arch_.flat_dim();
    for (size_t i = 0; i < arch_.block_widths.size(); ++i) {
        Rng rng(derive_seed(init_seed, 200 + i));
        // The entry layer starts with O equal to S and both scaled by 1/K of
        // the construction scale, so every block begins as a plain map of the
        // view mean: cross-view averaging is active from the first step and
        // the initial activations match the single-view magnitude (at K=1
        // this collapses to an ordinary dense map of S).  Later layers start
        // per-view (O = 0); mixing once keeps the activation scale bounded
        // instead of compounding per layer.
        const float agg_init = (i == 0) ? 1.0f : 0.0f;
        const float entry_shrink = (i == 0) ? 1.0f / static_cast<float>(scale_k) : 1.0f;
        auto pair = pepi::new_sub_matrix_pair(in_dim, arch_.block_widths[i], pepi::InitSpec::FanIn(), rng);
        for (auto& v : pair.s.data) v *= entry_shrink;
        for (size_t j = 0; j < pair.o.data.size(); ++j) pair.o.data[j] = agg_init * pair.s.data[j];
        layers_.push_back(std::move(pair));
        in_dim = arch_.block_widths[i];
    }
    for (const auto& b : encoder_) {
        conv_grads_.emplace_back(b.kernels.data.size(), 0.0);
        conv_grads_.emplace_back(b.bias.data.size(), 0.0);
    }
    for (const auto& l : layers_) layer_grads_.emplace_back(l);
}

void ScaledNet::set_scale(int new_k) {
    if (new_k < 1) throw std::invalid_argument("scale must be >= 1");
    if (target_ >= new_k) throw std::invalid_argument("target view out of range at new scale");
    scale_k_ = new_k;
}

ScaledNet ScaledNet::rescaled(int new_k) const {
    ScaledNet copy = *this;
    copy.set_scale(new_k);
    return copy;
}

ModelParams ScaledNet::snapshot() const {
    ModelParams p;
    for (const auto& b : encoder_) p.layers.push_back({LayerKind::conv, {b.kernels, b.bias}});
    for (const auto& l : layers_) p.layers.push_back({LayerKind::pepi, {l.s, l.o, l.bias}});
    return p;
}

void ScaledNet::restore(const ModelParams& params) {
    if (params.layers.size() != encoder_.size() + layers_.size())
        throw ShapeError("restore: layer count mismatch");
    size_t i = 0;
    for (auto& b : encoder_) {
        const auto& lp = params.layers[i++];
        if (lp.kind != LayerKind::conv || lp.arrays.size() != 2) throw ShapeError("restore: expected a conv layer");
        check_tensor(lp.arrays[0], b.kernels, "conv kernels");
        check_tensor(lp.arrays[1], b.bias, "conv bias");
        b.kernels = lp.arrays[0];
        b.bias = lp.arrays[1];
    }
    for (auto& l : layers_) {
        const auto& lp = params.layers[i++];
        if (lp.kind != LayerKind::pepi || lp.arrays.size() != 3)
            throw ShapeError("restore: expected a weight-shared layer");
        check_tensor(lp.arrays[0], l.s, "S");
        check_tensor(lp.arrays[1], l.o, "O");
        check_tensor(lp.arrays[2], l.bias, "shared bias");
        l.s = lp.arrays[0];
        l.o = lp.arrays[1];
        l.bias = lp.arrays[2];
    }
}

void ScaledNet::zero_grads() {
    for (auto& g : conv_grads_) std::fill(g.begin(), g.end(), 0.0);
    for (auto& g : layer_grads_) g.zero();
}

std::vector<std::vector<double>> ScaledNet::grad_vectors() const {
    std::vector<std::vector<double>> out = conv_grads_;
    for (const auto& g : layer_grads_) {
        out.push_back(g.s);
        out.push_back(g.o);
        out.push_back(g.bias);
    }
    return out;
}

std::vector<double> ScaledNet::run_forward(const data::MultiViewSample& sample, Trace* trace) const {
    if (sample.k != scale_k_) throw ShapeError("sample view count does not match the model scale");
    const int pixels = arch_.image_h * arch_.image_w;
    if (static_cast<int>(sample.views.size()) != scale_k_ * pixels) throw ShapeError("sample pixel count mismatch");

    pepi::Blocks blocks(scale_k_);
    if (trace) trace->conv.resize(scale_k_);
    for (int v = 0; v < scale_k_; ++v) {
        std::vector<nn::ConvBlockCache>* caches = nullptr;
        if (trace) {
            trace->conv[v].resize(encoder_.size());
            caches = &trace->conv[v];
        }
        blocks[v] = encode_view(encoder_, arch_, sample.view(v, pixels), caches);
    }
    if (trace) trace->shared.resize(layers_.size());
    for (size_t l = 0; l < layers_.size(); ++l) {
        auto act = l + 1 < layers_.size() ? nn::Activation::relu : nn::Activation::identity;
        blocks = pepi::layer_forward(layers_[l], blocks, act, trace ? &trace->shared[l] : nullptr);
    }
    return pepi::pi_readout(blocks, target_);
}

std::vector<double> ScaledNet::forward_logits(const data::MultiViewSample& sample) const {
    return run_forward(sample, nullptr);
}

SampleResult ScaledNet::forward_backward(const data::MultiViewSample& sample) {
    Trace trace;
    auto logits = run_forward(sample, &trace);
    auto sx = nn::softmax_cross_entropy(logits, sample.label);

    // only the target block carries loss gradient into the stack
    pepi::Blocks out_grads(scale_k_, pepi::Block(arch_.classes(), 0.0));
    out_grads[target_] = sx.logit_grad;

    pepi::Blocks in_grads;
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
        pepi::layer_backward(layers_[l], trace.shared[l], out_grads, layer_grads_[l], &in_grads);
        out_grads = std::move(in_grads);
    }
    for (int v = 0; v < scale_k_; ++v) encode_backward(encoder_, trace.conv[v], std::move(out_grads[v]), conv_grads_);

    return {sx.loss, argmax(logits) == sample.label};
}

SampleResult ScaledNet::evaluate_sample(const data::MultiViewSample& sample) const {
    auto logits = run_forward(sample, nullptr);
    auto sx = nn::softmax_cross_entropy(logits, sample.label);
    return {sx.loss, argmax(logits) == sample.label};
}

void ScaledNet::apply_sgd(double lr, int batch_size) {
    for (size_t b = 0; b < encoder_.size(); ++b) {
        nn::sgd_step(encoder_[b].kernels, conv_grads_[2 * b], lr, batch_size);
        nn::sgd_step(encoder_[b].bias, conv_grads_[2 * b + 1], lr, batch_size);
    }
    for (size_t l = 0; l < layers_.size(); ++l) {
        nn::sgd_step(layers_[l].s, layer_grads_[l].s, lr, batch_size);
        nn::sgd_step(layers_[l].o, layer_grads_[l].o, lr, batch_size);
        nn::sgd_step(layers_[l].bias, layer_grads_[l].bias, lr, batch_size);
    }
}

std::unique_ptr<Net> ScaledNet::clone() const { return std::make_unique<ScaledNet>(*this); }

// ---- PaddedDenseNet ---------------------------------------------------------

struct PaddedDenseNet::Trace {
    std::vector<std::vector<nn::ConvBlockCache>> conv;  // [view][block], padded views included
    std::vector<nn::DenseCache> dense;
};

PaddedDenseNet::PaddedDenseNet(Architecture arch, int pad_k, std::uint64_t init_seed)
    : arch_(std::move(arch)), pad_k_(pad_k) {
    if (pad_k_ < 1) throw std::invalid_argument("pad width must be >= 1");
    encoder_ = make_encoder(arch_, init_seed);
    int in_dim = arch_.flat_dim() * pad_k_;
    for (size_t i = 0; i < arch_.block_widths.size(); ++i) {
        const int out_dim = arch_.block_widths[i] * pad_k_;
        Rng rng(derive_seed(init_seed, 300 + i));
        DenseLayer layer{Tensor({out_dim, in_dim}), Tensor({out_dim})};
        const double r = std::sqrt(6.0 / in_dim);
        for (auto& x : layer.weights.data) x = static_cast<float>(rng.uniform(-r, r));
        layers_.push_back(std::move(layer));
        in_dim = out_dim;
    }
    for (const auto& b : encoder_) {
        conv_grads_.emplace_back(b.kernels.data.size(), 0.0);
        conv_grads_.emplace_back(b.bias.data.size(), 0.0);
    }
    for (const auto& l : layers_) {
        dense_grads_.emplace_back(l.weights.data.size(), 0.0);
        dense_grads_.emplace_back(l.bias.data.size(), 0.0);
    }
}

ModelParams PaddedDenseNet::snapshot() const {
    ModelParams p;
    for (const auto& b : encoder_) p.layers.push_back({LayerKind::conv, {b.kernels, b.bias}});
    for (const auto& l : layers_) p.layers.push_back({LayerKind::dense, {l.weights, l.bias}});
    return p;
}

void PaddedDenseNet::restore(const ModelParams& params) {
    if (params.layers.size() != encoder_.size() + layers_.size())
        throw ShapeError("restore: layer count mismatch");
    size_t i = 0;
    for (auto& b : encoder_) {
        const auto& lp = params.layers[i++];
        if (lp.kind != LayerKind::conv || lp.arrays.size() != 2) throw ShapeError("restore: expected a conv layer");
        check_tensor(lp.arrays[0], b.kernels, "conv kernels");
        check_tensor(lp.arrays[1], b.bias, "conv bias");
        b.kernels = lp.arrays[0];
        b.bias = lp.arrays[1];
    }
    for (auto& l : layers_) {
        const auto& lp = params.layers[i++];
        if (lp.kind != LayerKind::dense || lp.arrays.size() != 2) throw ShapeError("restore: expected a dense layer");
        check_tensor(lp.arrays[0], l.weights, "dense weights");
        check_tensor(lp.arrays[1], l.bias, "dense bias");
        l.weights = lp.arrays[0];
        l.bias = lp.arrays[1];
    }
}

void PaddedDenseNet::zero_grads() {
    for (auto& g : conv_grads_) std::fill(g.begin(), g.end(), 0.0);
    for (auto& g : dense_grads_) std::fill(g.begin(), g.end(), 0.0);
}

std::vector<double> PaddedDenseNet::run_forward(const data::MultiViewSample& sample, Trace* trace) const {
    if (sample.k > pad_k_) throw ShapeError("sample has more views than the padded width");
    const int pixels = arch_.image_h * arch_.image_w;
    if (static_cast<int>(sample.views.size()) != sample.k * pixels) throw ShapeError("sample pixel count mismatch");
    const int flat = arch_.flat_dim();

    // missing views enter as all-zero images; they still pass through the
    // encoder because trained biases make that path non-trivial
    const std::vector<float> zero_image(pixels, 0.0f);
    std::vector<double> x(static_cast<size_t>(flat) * pad_k_);
    if (trace) trace->conv.resize(pad_k_);
    for (int v = 0; v < pad_k_; ++v) {
        std::vector<nn::ConvBlockCache>* caches = nullptr;
        if (trace) {
            trace->conv[v].resize(encoder_.size());
            caches = &trace->conv[v];
        }
        std::span<const float> img =
            v < sample.k ? sample.view(v, pixels) : std::span<const float>(zero_image);
        auto feat = encode_view(encoder_, arch_, img, caches);
        std::copy(feat.begin(), feat.end(), x.begin() + static_cast<size_t>(v) * flat);
    }

    if (trace) trace->dense.resize(layers_.size());
    for (size_t l = 0; l < layers_.size(); ++l) {
        auto act = l + 1 < layers_.size() ? nn::Activation::relu : nn::Activation::identity;
        x = nn::dense_forward(layers_[l].weights, layers_[l].bias, x, act, trace ? &trace->dense[l] : nullptr);
    }
    // logits live in the first block (view 0's slot) of the final layer
    return {x.begin(), x.begin() + arch_.classes()};
}

SampleResult PaddedDenseNet::forward_backward(const data::MultiViewSample& sample) {
    Trace trace;
    auto logits = run_forward(sample, &trace);
    auto sx = nn::softmax_cross_entropy(logits, sample.label);

    std::vector<double> out_grad(layers_.back().bias.size(), 0.0);
    std::copy(sx.logit_grad.begin(), sx.logit_grad.end(), out_grad.begin());

    std::vector<double> d_input;
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
        auto act = l + 1 < static_cast<int>(layers_.size()) ? nn::Activation::relu : nn::Activation::identity;
        nn::dense_backward(layers_[l].weights, trace.dense[l], act, out_grad, dense_grads_[2 * l],
                           dense_grads_[2 * l + 1], &d_input);
        out_grad = std::move(d_input);
    }

    const int flat = arch_.flat_dim();
    for (int v = 0; v < pad_k_; ++v) {
        std::vector<double> g(out_grad.begin() + static_cast<size_t>(v) * flat,
                              out_grad.begin() + static_cast<size_t>(v + 1) * flat);
        encode_backward(encoder_, trace.conv[v], std::move(g), conv_grads_);
    }

    return {sx.loss, argmax(logits) == sample.label};
}

SampleResult PaddedDenseNet::evaluate_sample(const data::MultiViewSample& sample) const {
    auto logits = run_forward(sample, nullptr);
    auto sx = nn::softmax_cross_entropy(logits, sample.label);
    return {sx.loss, argmax(logits) == sample.label};
}

void PaddedDenseNet::apply_sgd(double lr, int batch_size) {
    for (size_t b = 0; b < encoder_.size(); ++b) {
        nn::sgd_step(encoder_[b].kernels, conv_grads_[2 * b], lr, batch_size);
        nn::sgd_step(encoder_[b].bias, conv_grads_[2 * b + 1], lr, batch_size);
    }
    for (size_t l = 0; l < layers_.size(); ++l) {
        nn::sgd_step(layers_[l].weights, dense_grads_[2 * l], lr, batch_size);
        nn::sgd_step(layers_[l].bias, dense_grads_[2 * l + 1], lr, batch_size);
    }
}

std::unique_ptr<Net> PaddedDenseNet::clone() const { return std::make_unique<PaddedDenseNet>(*this); }

// ---- parameter accounting ---------------------------------------------------

ParamCountReport count_parameters(const std::vector<pepi::SubMatrixPair>& layers, int k) {
    if (k < 1) throw std::invalid_argument("scale must be >= 1");
    ParamCountReport r;
    for (const auto& l : layers) {
        const std::int64_t ab = static_cast<std::int64_t>(l.in_dim()) * l.out_dim();
        r.trainable += 2 * ab + l.bias.size();
        r.trainable_weights += 2 * ab;
        r.pepi_trainable_weights += 2 * ab;
        r.pepi_effective_weights += ab * k * k;
    }
    r.effective = r.pepi_effective_weights;
    r.ratio = r.pepi_trainable_weights == 0
                  ? 0.0
                  : static_cast<double>(r.pepi_effective_weights) / static_cast<double>(r.pepi_trainable_weights);
    return r;
}

ParamCountReport count_parameters(const ScaledNet& net, int k) {
    ParamCountReport r = count_parameters(net.shared_layers(), k);
    for (const auto& b : net.encoder()) {
        r.trainable += b.kernels.size() + b.bias.size();
        r.trainable_weights += b.kernels.size();
        r.effective += b.kernels.size();
    }
    return r;
}

}  // namespace pepifed::model
