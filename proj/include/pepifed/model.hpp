#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pepifed/data.hpp"
#include "pepifed/nn.hpp"
#include "pepifed/pepi.hpp"

namespace pepifed::model {

// Fixed experiment architecture: a weight-shared conv encoder applied per
// view, then a stack of fully connected layers (block widths; the last entry
// is the class count) with relu on all but the final layer.
struct Architecture {
    int image_h = 28, image_w = 28;
    std::vector<int> conv_channels = {8, 16};   // each block: valid 5x5 conv -> 2x2 max-pool -> relu
    std::vector<int> block_widths = {64, 32, 10};

    int classes() const { return block_widths.back(); }
    nn::ConvShape feature_shape() const;  // encoder output shape per view
    int flat_dim() const { return feature_shape().count(); }
};

enum class LayerKind : std::uint8_t { conv = 1, pepi = 2, dense = 3 };

struct LayerParams {
    LayerKind kind;
    std::vector<Tensor> arrays;  // conv/dense: {weights, bias}; pepi: {s, o, bias}
};

// Structured snapshot of every trainable tensor; the unit of aggregation and
// checkpointing. Its shape is independent of any client's scale.
struct ModelParams {
    std::vector<LayerParams> layers;

    std::int64_t scalar_count() const;
};

bool bit_equal(const ModelParams& a, const ModelParams& b);

struct ParamCountReport {
    std::int64_t trainable = 0;           // every trainable scalar, biases included, encoder once
    std::int64_t trainable_weights = 0;   // biases excluded
    std::int64_t effective = 0;           // weight entries after expansion at scale k, encoder once
    std::int64_t pepi_trainable_weights = 0;  // sum of 2ab over shared layers
    std::int64_t pepi_effective_weights = 0;  // sum of ab k^2 over shared layers
    double ratio = 0.0;                   // pepi_effective_weights / pepi_trainable_weights
};

struct SampleResult {
    double loss = 0.0;
    bool correct = false;
};

// Common surface federation needs from a trainable client network.
class Net {
public:
    virtual ~Net() = default;

    virtual int input_views() const = 0;
    virtual ModelParams snapshot() const = 0;
    virtual void restore(const ModelParams& params) = 0;

    virtual void zero_grads() = 0;
    virtual SampleResult forward_backward(const data::MultiViewSample& sample) = 0;
    virtual SampleResult evaluate_sample(const data::MultiViewSample& sample) const = 0;
    virtual void apply_sgd(double lr, int batch_size) = 0;

    virtual std::unique_ptr<Net> clone() const = 0;
};

// The scalable network: per-view encoder + weight-shared block layers; the
// target view (index 0) is read out through softmax cross-entropy.
class ScaledNet : public Net {
public:
    ScaledNet(Architecture arch, std::uint64_t init_seed, int scale_k = 1, int target_index = 0);

    int scale() const { return scale_k_; }
    int target_index() const { return target_; }
    const Architecture& arch() const { return arch_; }

    // Changing scale touches no parameter storage; the same sub-matrices
    // simply tile a larger or smaller effective matrix.
    void set_scale(int new_k);
    ScaledNet rescaled(int new_k) const;

    const std::vector<nn::ConvBlock>& encoder() const { return encoder_; }
    std::vector<nn::ConvBlock>& encoder() { return encoder_; }
    const std::vector<pepi::SubMatrixPair>& shared_layers() const { return layers_; }
    std::vector<pepi::SubMatrixPair>& shared_layers() { return layers_; }

    // accumulated gradients, one buffer per tensor in snapshot order
    // (conv kernels/bias per block, then s/o/bias per shared layer)
    std::vector<std::vector<double>> grad_vectors() const;

    int input_views() const override { return scale_k_; }
    ModelParams snapshot() const override;
    void restore(const ModelParams& params) override;
    void zero_grads() override;
    SampleResult forward_backward(const data::MultiViewSample& sample) override;
    SampleResult evaluate_sample(const data::MultiViewSample& sample) const override;
    void apply_sgd(double lr, int batch_size) override;
    std::unique_ptr<Net> clone() const override;

    // forward to the logits of the target view; exposed for tests
    std::vector<double> forward_logits(const data::MultiViewSample& sample) const;

private:
    struct Trace;  // per-sample caches
    std::vector<double> run_forward(const data::MultiViewSample& sample, Trace* trace) const;

    Architecture arch_;
    std::vector<nn::ConvBlock> encoder_;
    std::vector<pepi::SubMatrixPair> layers_;
    int scale_k_ = 1;
    int target_ = 0;
    std::vector<std::vector<double>> conv_grads_;  // kernels, bias per encoder block
    std::vector<pepi::PairGrads> layer_grads_;
};

// Baseline: one large dense network sized for `pad_k` views; missing views
// are fed as all-zero images. Shares the conv encoder design.
class PaddedDenseNet : public Net {
public:
    PaddedDenseNet(Architecture arch, int pad_k, std::uint64_t init_seed);

    int pad_k() const { return pad_k_; }

    struct DenseLayer {
        Tensor weights;  // [out, in]
        Tensor bias;
    };

    const std::vector<DenseLayer>& dense_layers() const { return layers_; }

    int input_views() const override { return pad_k_; }
    ModelParams snapshot() const override;
    void restore(const ModelParams& params) override;
    void zero_grads() override;
    SampleResult forward_backward(const data::MultiViewSample& sample) override;
    SampleResult evaluate_sample(const data::MultiViewSample& sample) const override;
    void apply_sgd(double lr, int batch_size) override;
    std::unique_ptr<Net> clone() const override;

private:
    struct Trace;
    std::vector<double> run_forward(const data::MultiViewSample& sample, Trace* trace) const;

    Architecture arch_;
    int pad_k_ = 1;
    std::vector<nn::ConvBlock> encoder_;
    std::vector<DenseLayer> layers_;
    std::vector<std::vector<double>> conv_grads_;   // kernels, bias per encoder block
    std::vector<std::vector<double>> dense_grads_;  // weights, bias per dense layer
};

// Parameter accounting at scale k; encoder parameters are counted once in
// both totals.
ParamCountReport count_parameters(const ScaledNet& net, int k);

// Same accounting over a bare shared-layer stack (no encoder).
ParamCountReport count_parameters(const std::vector<pepi::SubMatrixPair>& layers, int k);

std::int64_t total_trainable(const ModelParams& params);

}  // namespace pepifed::model
