#pragma once

#include <cstdint>
#include <vector>

#include "pepifed/nn.hpp"
#include "pepifed/rng.hpp"
#include "pepifed/tensor.hpp"

namespace pepifed::pepi {

// One block of per-view activations; a layer input/output is K of them.
using Block = std::vector<double>;
using Blocks = std::vector<Block>;

struct InitSpec {
    enum Kind { zeros, uniform, fan_in } kind = fan_in;
    double radius = 0.0;  // only for `uniform`

    static InitSpec Zeros() { return {zeros, 0.0}; }
    static InitSpec Uniform(double r) { return {uniform, r}; }
    static InitSpec FanIn() { return {fan_in, 0.0}; }
};

// The trainable unit of a weight-shared layer: the diagonal block S (a view's
// own contribution), the off-diagonal block O (every other view's
// contribution) and one shared bias applied once per output block.
struct SubMatrixPair {
    Tensor s;     // [out, in]
    Tensor o;     // [out, in]
    Tensor bias;  // [out]

    int in_dim() const { return s.dim(1); }
    int out_dim() const { return s.dim(0); }
};

SubMatrixPair new_sub_matrix_pair(int in_dim, int out_dim, InitSpec init, Rng& rng);

// The fully expanded (out*k) x (in*k) weight matrix: S on the block diagonal,
// O everywhere else. Never used on the fast path; it is the oracle the fast
// path is tested against.
struct EffectiveMatrix {
    int k = 0;
    int out_dim = 0, in_dim = 0;
    std::vector<double> weights;  // row-major (out_dim*k) x (in_dim*k)
    std::vector<double> bias;     // out_dim*k, the shared bias replicated

    int rows() const { return out_dim * k; }
    int cols() const { return in_dim * k; }
};

EffectiveMatrix build_effective_matrix(const SubMatrixPair& pair, int k);

struct ForwardCache {
    Blocks inputs;
    std::vector<double> total;  // sum of input blocks, fixed ascending order
    Blocks preact;
    nn::Activation act = nn::Activation::identity;
};

// out_k = act(S h_k + O sum_{j!=k} h_j + bias), computed as
// (S - O) h_k + O total + bias with total = sum_j h_j.
Blocks layer_forward(const SubMatrixPair& pair, const Blocks& inputs, nn::Activation act,
                     ForwardCache* cache = nullptr);

// f64 accumulation buffers shaped like the pair's parameters
struct PairGrads {
    std::vector<double> s;
    std::vector<double> o;
    std::vector<double> bias;

    explicit PairGrads(const SubMatrixPair& p)
        : s(p.s.data.size(), 0.0), o(p.o.data.size(), 0.0), bias(p.bias.data.size(), 0.0) {}
    void zero();
};

// Accumulates shared-parameter gradients across all K blocks into `grads`;
// writes per-block input gradients into `in_grads` if non-null.
void layer_backward(const SubMatrixPair& pair, const ForwardCache& cache, const Blocks& out_grads, PairGrads& grads,
                    Blocks* in_grads = nullptr);

// Returns the target view's output block (the permutation-invariant readout).
Block pi_readout(const Blocks& blocks, int target_index);

}  // namespace pepifed::pepi
