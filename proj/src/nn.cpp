#include "pepifed/nn.hpp"

#include <algorithm>
#include <cmath>

namespace pepifed::nn {

void sgd_step(Tensor& params, const std::vector<double>& grads, double lr, double scale_div) {
    if (grads.size() != params.data.size()) throw ShapeError("sgd_step: gradient size mismatch");
    const double s = lr / scale_div;
    for (size_t i = 0; i < grads.size(); ++i)
        params.data[i] = static_cast<float>(static_cast<double>(params.data[i]) - s * grads[i]);
}

std::vector<double> dense_forward(const Tensor& weights, const Tensor& bias, const std::vector<double>& input,
                                  Activation act, DenseCache* cache) {
    if (weights.shape.size() != 2) throw ShapeError("dense_forward: weights must be 2-d");
    const int out = weights.dim(0), in = weights.dim(1);
    if (static_cast<int>(input.size()) != in) throw ShapeError("dense_forward: input length mismatch");
    if (bias.size() != out) throw ShapeError("dense_forward: bias length mismatch");

    std::vector<double> pre(out);
    for (int i = 0; i < out; ++i) {
        const float* row = weights.data.data() + static_cast<size_t>(i) * in;
        double acc = bias.data[i];
        for (int j = 0; j < in; ++j) acc += static_cast<double>(row[j]) * input[j];
        pre[i] = acc;
    }
    std::vector<double> y(out);
    for (int i = 0; i < out; ++i) y[i] = activate(act, pre[i]);
    if (cache) {
        cache->input = input;
        cache->preact = std::move(pre);
    }
    return y;
}

void dense_backward(const Tensor& weights, const DenseCache& cache, Activation act,
                    const std::vector<double>& out_grad, std::vector<double>& d_weights, std::vector<double>& d_bias,
                    std::vector<double>* d_input) {
    const int out = weights.dim(0), in = weights.dim(1);
    if (static_cast<int>(out_grad.size()) != out) throw ShapeError("dense_backward: out_grad length mismatch");
    if (d_weights.size() != weights.data.size() || static_cast<int>(d_bias.size()) != out)
        throw ShapeError("dense_backward: gradient buffer size mismatch");

    std::vector<double> g(out);
    for (int i = 0; i < out; ++i) g[i] = out_grad[i] * activate_grad(act, cache.preact[i]);

    for (int i = 0; i < out; ++i) {
        double* drow = d_weights.data() + static_cast<size_t>(i) * in;
        const double gi = g[i];
        for (int j = 0; j < in; ++j) drow[j] += gi * cache.input[j];
        d_bias[i] += gi;
    }
    if (d_input) {
        d_input->assign(in, 0.0);
        for (int i = 0; i < out; ++i) {
            const float* row = weights.data.data() + static_cast<size_t>(i) * in;
            const double gi = g[i];
            for (int j = 0; j < in; ++j) (*d_input)[j] += static_cast<double>(row[j]) * gi;
        }
    }
}

ConvBlock make_conv_block(int in_channels, int out_channels, std::uint64_t seed) {
    if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("conv block needs positive channel counts");
    ConvBlock b;
    b.kernels = Tensor({out_channels, kKernelSize, kKernelSize, in_channels});
    b.bias = Tensor({out_channels});
    Rng rng(seed);
    // Reduced fan-in gain: the dense stack above is trained with a fixed
    // learning rate whose stable region depends on feature magnitude, and
    // full-gain features sit outside it for the weight-shared layers.
    const double r = 0.35 * std::sqrt(6.0 / (kKernelSize * kKernelSize * in_channels));
    for (float& v : b.kernels.data) v = static_cast<float>(rng.uniform(-r, r));
    return b;
}

std::vector<double> conv2d_valid(const ConvBlock& block, const std::vector<double>& input, int h, int w) {
    const int in_c = block.in_channels();
    const int out_c = block.out_channels();
    if (static_cast<int>(input.size()) != h * w * in_c) throw ShapeError("conv2d_valid: input size mismatch");
    const ConvShape os = conv_output_shape(h, w, out_c);

    std::vector<double> out(static_cast<size_t>(os.count()));
    const int row_stride = w * in_c;
    const int patch_row = kKernelSize * in_c;  // contiguous span covered by one kernel row
    for (int oh = 0; oh < os.h; ++oh) {
        for (int ow = 0; ow < os.w; ++ow) {
            const double* base = input.data() + static_cast<size_t>(oh) * row_stride + static_cast<size_t>(ow) * in_c;
            double* dst = out.data() + (static_cast<size_t>(oh) * os.w + ow) * out_c;
            for (int oc = 0; oc < out_c; ++oc) {
                const float* ker = block.kernels.data.data() + static_cast<size_t>(oc) * kKernelSize * patch_row;
                double acc = block.bias.data[oc];
                for (int kh = 0; kh < kKernelSize; ++kh) {
                    const double* in_row = base + static_cast<size_t>(kh) * row_stride;
                    const float* ker_row = ker + static_cast<size_t>(kh) * patch_row;
                    for (int t = 0; t < patch_row; ++t) acc += in_row[t] * static_cast<double>(ker_row[t]);
                }
                dst[oc] = acc;
            }
        }
    }
    return out;
}

std::vector<double> conv_block_forward(const ConvBlock& block, const std::vector<double>& input, int h, int w, int c,
                                       ConvBlockCache* cache) {
    if (c != block.in_channels()) throw ShapeError("conv_block_forward: channel mismatch");
    const ConvShape cs = conv_output_shape(h, w, block.out_channels());
    const ConvShape ps = pool_output_shape(cs);
    if (ps.h < 1 || ps.w < 1) throw ShapeError("conv_block_forward: input too small to pool");

    std::vector<double> conv = conv2d_valid(block, input, h, w);

    std::vector<double> pooled(static_cast<size_t>(ps.count()));
    std::vector<int> argmax(static_cast<size_t>(ps.count()));
    for (int ph = 0; ph < ps.h; ++ph) {
        for (int pw = 0; pw < ps.w; ++pw) {
            for (int ch = 0; ch < ps.c; ++ch) {
                double best = 0.0;
                int best_pos = -1;
                // row-major scan; strict > keeps the first position on ties
                for (int dr = 0; dr < 2; ++dr) {
                    for (int dc = 0; dc < 2; ++dc) {
                        const int r = 2 * ph + dr, col = 2 * pw + dc;
                        const double v = conv[(static_cast<size_t>(r) * cs.w + col) * cs.c + ch];
                        if (best_pos < 0 || v > best) {
                            best = v;
                            best_pos = r * cs.w + col;
                        }
                    }
                }
                const size_t idx = (static_cast<size_t>(ph) * ps.w + pw) * ps.c + ch;
                pooled[idx] = best;
                argmax[idx] = best_pos;
            }
        }
    }

    std::vector<double> out(pooled.size());
    for (size_t i = 0; i < pooled.size(); ++i) out[i] = activate(Activation::relu, pooled[i]);

    if (cache) {
        cache->in_h = h;
        cache->in_w = w;
        cache->in_c = c;
        cache->conv = cs;
        cache->out = ps;
        cache->input = input;
        cache->pool_pre = std::move(pooled);
        cache->argmax = std::move(argmax);
    }
    return out;
}

void conv_block_backward(const ConvBlock& block, const ConvBlockCache& cache, const std::vector<double>& out_grad,
                         std::vector<double>& d_kernels, std::vector<double>& d_bias,
                         std::vector<double>* d_input) {
    const ConvShape& ps = cache.out;
    const ConvShape& cs = cache.conv;
    if (static_cast<int>(out_grad.size()) != ps.count()) throw ShapeError("conv_block_backward: out_grad size mismatch");
    if (d_kernels.size() != block.kernels.data.size() || static_cast<int>(d_bias.size()) != ps.c)
        throw ShapeError("conv_block_backward: gradient buffer size mismatch");

    const int in_c = cache.in_c;
    const int row_stride = cache.in_w * in_c;
    const int patch_row = kKernelSize * in_c;
    if (d_input) d_input->assign(cache.input.size(), 0.0);

    // every pooled cell routes its gradient to exactly one conv position
    for (int ph = 0; ph < ps.h; ++ph) {
        for (int pw = 0; pw < ps.w; ++pw) {
            for (int ch = 0; ch < ps.c; ++ch) {
                const size_t idx = (static_cast<size_t>(ph) * ps.w + pw) * ps.c + ch;
                const double g = out_grad[idx] * activate_grad(Activation::relu, cache.pool_pre[idx]);
                if (g == 0.0) continue;
                const int pos = cache.argmax[idx];
                const int oh = pos / cs.w, ow = pos % cs.w;
                d_bias[ch] += g;

                const double* base =
                    cache.input.data() + static_cast<size_t>(oh) * row_stride + static_cast<size_t>(ow) * in_c;
                double* dker = d_kernels.data() + static_cast<size_t>(ch) * kKernelSize * patch_row;
                const float* ker = block.kernels.data.data() + static_cast<size_t>(ch) * kKernelSize * patch_row;
                for (int kh = 0; kh < kKernelSize; ++kh) {
                    const double* in_row = base + static_cast<size_t>(kh) * row_stride;
                    double* dker_row = dker + static_cast<size_t>(kh) * patch_row;
                    for (int t = 0; t < patch_row; ++t) dker_row[t] += g * in_row[t];
                    if (d_input) {
                        double* din_row = d_input->data() + (base - cache.input.data()) + static_cast<size_t>(kh) * row_stride;
                        const float* ker_row = ker + static_cast<size_t>(kh) * patch_row;
                        for (int t = 0; t < patch_row; ++t) din_row[t] += g * static_cast<double>(ker_row[t]);
                    }
                }
            }
        }
    }
}

SoftmaxXent softmax_cross_entropy(const std::vector<double>& logits, int label) {
    if (logits.empty()) throw std::invalid_argument("softmax_cross_entropy: empty logits");
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("softmax_cross_entropy: label out of range");

    SoftmaxXent r;
    const double m = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    r.probs.resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        r.probs[i] = std::exp(logits[i] - m);
        denom += r.probs[i];
    }
    for (double& p : r.probs) p /= denom;
    r.loss = -std::log(r.probs[static_cast<size_t>(label)] + 1e-12);
    r.logit_grad = r.probs;
    r.logit_grad[static_cast<size_t>(label)] -= 1.0;
    return r;
}

double finite_diff_check(const std::function<double()>& loss_fn, Tensor& params, const std::vector<double>& analytic,
                         double step, double denom_floor) {
    if (analytic.size() != params.data.size()) throw ShapeError("finite_diff_check: gradient size mismatch");
    double max_rel = 0.0;
    for (size_t i = 0; i < params.data.size(); ++i) {
        const float saved = params.data[i];
        params.data[i] = static_cast<float>(static_cast<double>(saved) + step);
        const double hi = static_cast<double>(params.data[i]);
        const double loss_hi = loss_fn();
        params.data[i] = static_cast<float>(static_cast<double>(saved) - step);
        const double lo = static_cast<double>(params.data[i]);
        const double loss_lo = loss_fn();
        params.data[i] = saved;
        if (!std::isfinite(loss_hi) || !std::isfinite(loss_lo)) throw NumericError("finite_diff_check: non-finite loss");

        // use the f32-realised step width, not the requested one
        const double numeric = (loss_hi - loss_lo) / (hi - lo);
        const double a = analytic[i];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), denom_floor});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace pepifed::nn
