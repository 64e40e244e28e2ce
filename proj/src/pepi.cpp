#include "pepifed/pepi.hpp"

#include <algorithm>
#include <cmath>

namespace pepifed::pepi {

SubMatrixPair new_sub_matrix_pair(int in_dim, int out_dim, InitSpec init, Rng& rng) {
    if (in_dim < 1 || out_dim < 1) throw std::invalid_argument("sub-matrix dims must be positive");
    SubMatrixPair p;
    p.s = Tensor({out_dim, in_dim});
    p.o = Tensor({out_dim, in_dim});
    p.bias = Tensor({out_dim});
    double r = 0.0;
    switch (init.kind) {
        case InitSpec::zeros: return p;
        case InitSpec::uniform: r = init.radius; break;
        case InitSpec::fan_in: r = std::sqrt(6.0 / in_dim); break;
    }
    for (float& v : p.s.data) v = static_cast<float>(rng.uniform(-r, r));
    for (float& v : p.o.data) v = static_cast<float>(rng.uniform(-r, r));
    return p;
}

EffectiveMatrix build_effective_matrix(const SubMatrixPair& pair, int k) {
    if (k < 1) throw std::invalid_argument("build_effective_matrix: k must be >= 1");
    const int a = pair.out_dim(), b = pair.in_dim();
    EffectiveMatrix m;
    m.k = k;
    m.out_dim = a;
    m.in_dim = b;
    m.weights.assign(static_cast<size_t>(a) * k * b * k, 0.0);
    m.bias.resize(static_cast<size_t>(a) * k);
    const size_t cols = static_cast<size_t>(b) * k;
    for (int bi = 0; bi < k; ++bi) {
        for (int bj = 0; bj < k; ++bj) {
            const Tensor& src = (bi == bj) ? pair.s : pair.o;
            for (int i = 0; i < a; ++i) {
                double* dst = m.weights.data() + (static_cast<size_t>(bi) * a + i) * cols + static_cast<size_t>(bj) * b;
                const float* row = src.data.data() + static_cast<size_t>(i) * b;
                for (int j = 0; j < b; ++j) dst[j] = static_cast<double>(row[j]);
            }
        }
        for (int i = 0; i < a; ++i) m.bias[static_cast<size_t>(bi) * a + i] = static_cast<double>(pair.bias.data[i]);
    }
    return m;
}

namespace {

void check_blocks(const Blocks& blocks, int expect_dim, const char* who) {
    if (blocks.empty()) throw ShapeError(std::string(who) + ": needs at least one block");
    for (const Block& blk : blocks)
        if (static_cast<int>(blk.size()) != expect_dim) throw ShapeError(std::string(who) + ": block length mismatch");
}

}  // namespace

Blocks layer_forward(const SubMatrixPair& pair, const Blocks& inputs, nn::Activation act, ForwardCache* cache) {
    const int a = pair.out_dim(), b = pair.in_dim();
    check_blocks(inputs, b, "pepi layer_forward");
    const int k = static_cast<int>(inputs.size());

    std::vector<double> total(b, 0.0);
    for (int v = 0; v < k; ++v)
        for (int j = 0; j < b; ++j) total[j] += inputs[v][j];

    // S - O precomputed once per call
    std::vector<double> diff(static_cast<size_t>(a) * b);
    for (size_t i = 0; i < diff.size(); ++i)
        diff[i] = static_cast<double>(pair.s.data[i]) - static_cast<double>(pair.o.data[i]);

    // the O * total + bias part is shared by every block
    std::vector<double> shared(a);
    for (int i = 0; i < a; ++i) {
        const float* orow = pair.o.data.data() + static_cast<size_t>(i) * b;
        double acc = static_cast<double>(pair.bias.data[i]);
        for (int j = 0; j < b; ++j) acc += static_cast<double>(orow[j]) * total[j];
        shared[i] = acc;
    }

    Blocks out(k);
    Blocks preact(k);
    for (int v = 0; v < k; ++v) {
        preact[v].resize(a);
        out[v].resize(a);
        for (int i = 0; i < a; ++i) {
            const double* drow = diff.data() + static_cast<size_t>(i) * b;
            double acc = shared[i];
            for (int j = 0; j < b; ++j) acc += drow[j] * inputs[v][j];
            preact[v][i] = acc;
            out[v][i] = nn::activate(act, acc);
        }
    }

    if (cache) {
        cache->inputs = inputs;
        cache->total = std::move(total);
        cache->preact = std::move(preact);
        cache->act = act;
    }
    return out;
}

void PairGrads::zero() {
    std::fill(s.begin(), s.end(), 0.0);
    std::fill(o.begin(), o.end(), 0.0);
    std::fill(bias.begin(), bias.end(), 0.0);
}

void layer_backward(const SubMatrixPair& pair, const ForwardCache& cache, const Blocks& out_grads, PairGrads& grads,
                    Blocks* in_grads) {
    const int a = pair.out_dim(), b = pair.in_dim();
    const int k = static_cast<int>(cache.inputs.size());
    if (static_cast<int>(out_grads.size()) != k) throw ShapeError("pepi layer_backward: block count mismatch");
    check_blocks(out_grads, a, "pepi layer_backward");
    if (grads.s.size() != pair.s.data.size()) throw ShapeError("pepi layer_backward: grad buffer mismatch");

    // push out_grads through the activation
    Blocks g(k);
    for (int v = 0; v < k; ++v) {
        g[v].resize(a);
        for (int i = 0; i < a; ++i) g[v][i] = out_grads[v][i] * nn::activate_grad(cache.act, cache.preact[v][i]);
    }

    std::vector<double> gsum(a, 0.0);
    for (int v = 0; v < k; ++v)
        for (int i = 0; i < a; ++i) gsum[i] += g[v][i];

    // dS = sum_k g_k h_k^T ; dO = sum_k g_k (total - h_k)^T, accumulated one
    // view at a time: with a single view, total - h is identically zero, so O
    // receives exactly nothing no matter how the products round (the
    // rearranged form gsum total^T - dS only cancels bitwise until the
    // compiler fuses one of the two products).
    for (int v = 0; v < k; ++v) {
        const double* h = cache.inputs[v].data();
        for (int i = 0; i < a; ++i) {
            const double gi = g[v][i];
            if (gi == 0.0) continue;
            double* srow = grads.s.data() + static_cast<size_t>(i) * b;
            double* orow = grads.o.data() + static_cast<size_t>(i) * b;
            for (int j = 0; j < b; ++j) {
                srow[j] += gi * h[j];
                orow[j] += gi * (cache.total[j] - h[j]);
            }
        }
    }
    for (int i = 0; i < a; ++i) grads.bias[i] += gsum[i];

    if (in_grads) {
        // dh_k = (S - O)^T g_k + O^T gsum
        std::vector<double> diff(static_cast<size_t>(a) * b);
        for (size_t i = 0; i < diff.size(); ++i)
            diff[i] = static_cast<double>(pair.s.data[i]) - static_cast<double>(pair.o.data[i]);
        std::vector<double> shared(b, 0.0);
        for (int i = 0; i < a; ++i) {
            const float* orow = pair.o.data.data() + static_cast<size_t>(i) * b;
            const double gi = gsum[i];
            if (gi == 0.0) continue;
            for (int j = 0; j < b; ++j) shared[j] += static_cast<double>(orow[j]) * gi;
        }
        in_grads->assign(k, Block(b, 0.0));
        for (int v = 0; v < k; ++v) {
            Block& dh = (*in_grads)[v];
            dh = shared;
            for (int i = 0; i < a; ++i) {
                const double* drow = diff.data() + static_cast<size_t>(i) * b;
                const double gi = g[v][i];
                if (gi == 0.0) continue;
                for (int j = 0; j < b; ++j) dh[j] += drow[j] * gi;
            }
        }
    }
}

Block pi_readout(const Blocks& blocks, int target_index) {
    if (target_index < 0 || target_index >= static_cast<int>(blocks.size()))
        throw std::invalid_argument("pi_readout: target index out of range");
    return blocks[static_cast<size_t>(target_index)];
}

}  // namespace pepifed::pepi
