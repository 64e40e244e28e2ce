#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pepifed/rng.hpp"
#include "pepifed/tensor.hpp"

namespace pepifed::nn {

enum class Activation { identity, relu };

inline double activate(Activation act, double x) {
    return act == Activation::relu ? (x > 0.0 ? x : 0.0) : x;
}

// derivative w.r.t. the pre-activation
inline double activate_grad(Activation act, double pre) {
    return act == Activation::relu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0;
}

struct SgdSchedule {
    double base_lr = 0.05;
    double decay = 0.99;

    double lr(int epoch) const { return base_lr * std::pow(decay, epoch); }
};

// y = p - lr * g / scale_div, rounded back to f32 storage
void sgd_step(Tensor& params, const std::vector<double>& grads, double lr, double scale_div = 1.0);

// ---- dense layer ----------------------------------------------------------

struct DenseCache {
    std::vector<double> input;
    std::vector<double> preact;
};

// weights [out, in], bias [out]
std::vector<double> dense_forward(const Tensor& weights, const Tensor& bias, const std::vector<double>& input,
                                  Activation act, DenseCache* cache = nullptr);

// accumulates into d_weights/d_bias (sized like the params); writes d_input if non-null
void dense_backward(const Tensor& weights, const DenseCache& cache, Activation act,
                    const std::vector<double>& out_grad, std::vector<double>& d_weights, std::vector<double>& d_bias,
                    std::vector<double>* d_input = nullptr);

// ---- conv block: valid 5x5 conv -> 2x2 max-pool (stride 2) -> relu --------

constexpr int kKernelSize = 5;

// feature maps are HWC row-major; kernels are [out_c, kh, kw, in_c]
struct ConvBlock {
    Tensor kernels;
    Tensor bias;

    int out_channels() const { return kernels.dim(0); }
    int in_channels() const { return kernels.dim(3); }
};

ConvBlock make_conv_block(int in_channels, int out_channels, std::uint64_t seed);

struct ConvShape {
    int h = 0, w = 0, c = 0;
    int plane() const { return h * w; }
    int count() const { return h * w * c; }
};

inline ConvShape conv_output_shape(int h, int w, int out_c) {
    if (h < kKernelSize || w < kKernelSize) throw ShapeError("conv input smaller than kernel");
    return {h - kKernelSize + 1, w - kKernelSize + 1, out_c};
}

inline ConvShape pool_output_shape(const ConvShape& s) { return {s.h / 2, s.w / 2, s.c}; }

// plain valid cross-correlation, exposed separately so tests can pin it
// against a brute-force oracle
std::vector<double> conv2d_valid(const ConvBlock& block, const std::vector<double>& input, int h, int w);

struct ConvBlockCache {
    int in_h = 0, in_w = 0, in_c = 0;
    ConvShape conv, out;
    std::vector<double> input;     // HWC copy of the block input
    std::vector<double> pool_pre;  // post-pool, pre-relu
    std::vector<int> argmax;       // per pooled cell: flat (h * conv.w + w) position in the conv plane
};

std::vector<double> conv_block_forward(const ConvBlock& block, const std::vector<double>& input, int h, int w, int c,
                                       ConvBlockCache* cache = nullptr);

void conv_block_backward(const ConvBlock& block, const ConvBlockCache& cache, const std::vector<double>& out_grad,
                         std::vector<double>& d_kernels, std::vector<double>& d_bias,
                         std::vector<double>* d_input = nullptr);

// ---- fused softmax + cross-entropy ----------------------------------------

struct SoftmaxXent {
    double loss = 0.0;
    std::vector<double> probs;
    std::vector<double> logit_grad;  // softmax(logits) - onehot(label)
};

SoftmaxXent softmax_cross_entropy(const std::vector<double>& logits, int label);

// ---- finite-difference gradient checker ------------------------------------

// Central differences over every entry of `params`, compared against
// `analytic`. Returns the max relative error, where relative error uses
// max(|analytic|, |numeric|, denom_floor) as denominator. Throws NumericError
// on a non-finite loss.
double finite_diff_check(const std::function<double()>& loss_fn, Tensor& params, const std::vector<double>& analytic,
                         double step, double denom_floor = 1e-4);

}  // namespace pepifed::nn
