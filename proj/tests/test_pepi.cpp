#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "pepifed/model.hpp"
#include "pepifed/pepi.hpp"

using namespace pepifed;

namespace {

pepi::Blocks random_blocks(int k, int dim, Rng& rng, double r = 1.0) {
    pepi::Blocks b(static_cast<size_t>(k), pepi::Block(static_cast<size_t>(dim)));
    for (auto& blk : b)
        for (auto& v : blk) v = rng.uniform(-r, r);
    return b;
}

// Reference path: multiply by the fully expanded matrix, no shortcuts.
pepi::Blocks oracle_forward(const pepi::SubMatrixPair& pair, const pepi::Blocks& inputs, nn::Activation act) {
    const int k = static_cast<int>(inputs.size());
    const auto m = pepi::build_effective_matrix(pair, k);
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(m.cols()));
    for (const auto& blk : inputs) flat.insert(flat.end(), blk.begin(), blk.end());

    pepi::Blocks out(static_cast<size_t>(k), pepi::Block(static_cast<size_t>(m.out_dim)));
    for (int i = 0; i < m.rows(); ++i) {
        double acc = m.bias[static_cast<size_t>(i)];
        for (int j = 0; j < m.cols(); ++j) acc += m.weights[static_cast<size_t>(i) * m.cols() + j] * flat[static_cast<size_t>(j)];
        out[static_cast<size_t>(i / m.out_dim)][static_cast<size_t>(i % m.out_dim)] = nn::activate(act, acc);
    }
    return out;
}

double blocks_max_diff(const pepi::Blocks& a, const pepi::Blocks& b) {
    REQUIRE(a.size() == b.size());
    double m = 0;
    for (size_t v = 0; v < a.size(); ++v) {
        REQUIRE(a[v].size() == b[v].size());
        for (size_t i = 0; i < a[v].size(); ++i) m = std::max(m, std::abs(a[v][i] - b[v][i]));
    }
    return m;
}

}  // namespace

TEST_CASE("sub-matrix pair construction") {
    Rng rng(5);
    auto z = pepi::new_sub_matrix_pair(4, 3, pepi::InitSpec::Zeros(), rng);
    CHECK(z.in_dim() == 4);
    CHECK(z.out_dim() == 3);
    for (float v : z.s.data) CHECK(v == 0.0f);
    for (float v : z.o.data) CHECK(v == 0.0f);
    for (float v : z.bias.data) CHECK(v == 0.0f);

    Rng r1(9), r2(9);
    auto a = pepi::new_sub_matrix_pair(784, 64, pepi::InitSpec::FanIn(), r1);
    auto b = pepi::new_sub_matrix_pair(784, 64, pepi::InitSpec::FanIn(), r2);
    CHECK(bit_equal(a.s, b.s));
    CHECK(bit_equal(a.o, b.o));
    CHECK(bit_equal(a.bias, b.bias));
    CHECK_FALSE(bit_equal(a.s, a.o));  // distinct draws from one stream

    const double bound = std::sqrt(6.0 / 784.0);
    float mx = 0.0f;
    for (float v : a.s.data) {
        CHECK(std::abs(v) <= bound);
        mx = std::max(mx, std::abs(v));
    }
    CHECK(mx > 0.8 * bound);  // the draw actually fills the interval

    CHECK_THROWS_AS(pepi::new_sub_matrix_pair(0, 3, pepi::InitSpec::Zeros(), rng), std::invalid_argument);
}

TEST_CASE("effective matrix layout") {
    Rng rng(21);
    auto pair = pepi::new_sub_matrix_pair(3, 2, pepi::InitSpec::FanIn(), rng);
    pair.bias.data = {0.5f, -1.5f};

    SUBCASE("k=1 is just S") {
        auto m = pepi::build_effective_matrix(pair, 1);
        CHECK(m.rows() == 2);
        CHECK(m.cols() == 3);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(m.weights[static_cast<size_t>(i) * 3 + j] == doctest::Approx(pair.s.data[static_cast<size_t>(i) * 3 + j]));
    }

    SUBCASE("every block lands where it should") {
        for (int k : {2, 4}) {
            auto m = pepi::build_effective_matrix(pair, k);
            CHECK(m.rows() == 2 * k);
            CHECK(m.cols() == 3 * k);
            for (int bi = 0; bi < k; ++bi) {
                for (int bj = 0; bj < k; ++bj) {
                    const Tensor& src = bi == bj ? pair.s : pair.o;
                    for (int i = 0; i < 2; ++i)
                        for (int j = 0; j < 3; ++j) {
                            const double got =
                                m.weights[(static_cast<size_t>(bi) * 2 + i) * m.cols() + static_cast<size_t>(bj) * 3 + j];
                            CHECK(got == static_cast<double>(src.data[static_cast<size_t>(i) * 3 + j]));
                        }
                }
                for (int i = 0; i < 2; ++i)
                    CHECK(m.bias[static_cast<size_t>(bi) * 2 + i] == static_cast<double>(pair.bias.data[static_cast<size_t>(i)]));
            }
        }
    }

    SUBCASE("k must be positive") { CHECK_THROWS_AS(pepi::build_effective_matrix(pair, 0), std::invalid_argument); }
}

TEST_CASE("hand-worked 1x1 layer") {
    pepi::SubMatrixPair pair;
    pair.s = Tensor({1, 1});
    pair.o = Tensor({1, 1});
    pair.bias = Tensor({1});
    pair.s.data[0] = 1.0f;
    pair.o.data[0] = 2.0f;

    auto out = pepi::layer_forward(pair, {{3.0}, {5.0}}, nn::Activation::identity);
    REQUIRE(out.size() == 2);
    CHECK(out[0][0] == doctest::Approx(13.0));  // 1*3 + 2*5
    CHECK(out[1][0] == doctest::Approx(11.0));  // 1*5 + 2*3
}

TEST_CASE("fast path equals the expanded matrix") {
    Rng rng(33);
    for (auto [a, b] : {std::pair{3, 5}, {7, 2}, {16, 16}, {1, 9}}) {
        auto pair = pepi::new_sub_matrix_pair(b, a, pepi::InitSpec::FanIn(), rng);
        for (float& v : pair.bias.data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
        for (int k : {1, 2, 3, 5, 8}) {
            auto inputs = random_blocks(k, b, rng);
            for (auto act : {nn::Activation::identity, nn::Activation::relu}) {
                auto fast = pepi::layer_forward(pair, inputs, act);
                auto slow = oracle_forward(pair, inputs, act);
                CHECK(blocks_max_diff(fast, slow) < 1e-10);
            }
        }
    }
}

TEST_CASE("k=1 layer collapses to a dense layer on S") {
    Rng rng(41);
    auto pair = pepi::new_sub_matrix_pair(6, 4, pepi::InitSpec::FanIn(), rng);
    for (float& v : pair.bias.data) v = static_cast<float>(rng.uniform(-1, 1));
    pepi::Block x(6);
    for (auto& v : x) v = rng.uniform(-2, 2);

    auto blocks = pepi::layer_forward(pair, {x}, nn::Activation::relu);
    auto dense = nn::dense_forward(pair.s, pair.bias, x, nn::Activation::relu);
    REQUIRE(blocks.size() == 1);
    for (size_t i = 0; i < dense.size(); ++i) CHECK(blocks[0][i] == doctest::Approx(dense[i]).epsilon(1e-12));
}

TEST_CASE("layer rejects malformed blocks") {
    Rng rng(1);
    auto pair = pepi::new_sub_matrix_pair(3, 2, pepi::InitSpec::FanIn(), rng);
    CHECK_THROWS_AS(pepi::layer_forward(pair, {}, nn::Activation::identity), ShapeError);
    CHECK_THROWS_AS(pepi::layer_forward(pair, {{1.0, 2.0}}, nn::Activation::identity), ShapeError);
    CHECK_THROWS_AS(pepi::layer_forward(pair, {{1.0, 2.0, 3.0}, {1.0}}, nn::Activation::identity), ShapeError);
}

TEST_CASE("permutation equivariance of a two-layer stack") {
    Rng rng(55);
    auto l1 = pepi::new_sub_matrix_pair(5, 7, pepi::InitSpec::FanIn(), rng);
    auto l2 = pepi::new_sub_matrix_pair(7, 4, pepi::InitSpec::FanIn(), rng);
    for (float& v : l1.bias.data) v = static_cast<float>(rng.uniform(-0.3, 0.3));
    for (float& v : l2.bias.data) v = static_cast<float>(rng.uniform(-0.3, 0.3));

    auto run = [&](const pepi::Blocks& in) {
        return pepi::layer_forward(l2, pepi::layer_forward(l1, in, nn::Activation::relu), nn::Activation::identity);
    };

    auto inputs = random_blocks(4, 5, rng);
    auto base = run(inputs);

    // permutation fixing the target block 0
    const std::vector<size_t> perm = {0, 3, 1, 2};
    pepi::Blocks shuffled(4);
    for (size_t v = 0; v < 4; ++v) shuffled[v] = inputs[perm[v]];
    auto permuted = run(shuffled);

    for (size_t v = 0; v < 4; ++v)
        for (size_t i = 0; i < base[0].size(); ++i)
            CHECK(permuted[v][i] == doctest::Approx(base[perm[v]][i]).epsilon(1e-12));

    // the readout never moves
    auto r0 = pepi::pi_readout(base, 0);
    auto r1 = pepi::pi_readout(permuted, 0);
    for (size_t i = 0; i < r0.size(); ++i) CHECK(r1[i] == doctest::Approx(r0[i]).epsilon(1e-12));
}

TEST_CASE("pi readout selects the target block") {
    pepi::Blocks blocks = {{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}};
    auto r = pepi::pi_readout(blocks, 0);
    CHECK(r == pepi::Block{1.0, 2.0});
    CHECK(pepi::pi_readout(blocks, 2) == pepi::Block{5.0, 6.0});
    CHECK_THROWS_AS(pepi::pi_readout(blocks, 3), std::invalid_argument);
    CHECK_THROWS_AS(pepi::pi_readout(blocks, -1), std::invalid_argument);
}

TEST_CASE("backward: zero upstream gradient leaves everything zero") {
    Rng rng(66);
    auto pair = pepi::new_sub_matrix_pair(4, 3, pepi::InitSpec::FanIn(), rng);
    auto inputs = random_blocks(3, 4, rng);
    pepi::ForwardCache cache;
    pepi::layer_forward(pair, inputs, nn::Activation::relu, &cache);

    pepi::PairGrads grads(pair);
    pepi::Blocks in_grads;
    pepi::Blocks zeros(3, pepi::Block(3, 0.0));
    pepi::layer_backward(pair, cache, zeros, grads, &in_grads);
    for (double v : grads.s) CHECK(v == 0.0);
    for (double v : grads.o) CHECK(v == 0.0);
    for (double v : grads.bias) CHECK(v == 0.0);
    for (const auto& blk : in_grads)
        for (double v : blk) CHECK(v == 0.0);
}

TEST_CASE("backward at k=1: dS is the plain outer product and dO vanishes") {
    Rng rng(67);
    auto pair = pepi::new_sub_matrix_pair(3, 2, pepi::InitSpec::FanIn(), rng);
    pepi::Blocks inputs = {{0.5, -1.0, 2.0}};
    pepi::ForwardCache cache;
    pepi::layer_forward(pair, inputs, nn::Activation::identity, &cache);

    pepi::PairGrads grads(pair);
    pepi::Blocks g = {{1.5, -0.25}};
    pepi::layer_backward(pair, cache, g, grads);

    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK(grads.s[static_cast<size_t>(i) * 3 + j] == doctest::Approx(g[0][static_cast<size_t>(i)] * inputs[0][static_cast<size_t>(j)]));
            CHECK(grads.o[static_cast<size_t>(i) * 3 + j] == doctest::Approx(0.0));
        }
        CHECK(grads.bias[static_cast<size_t>(i)] == doctest::Approx(g[0][static_cast<size_t>(i)]));
    }
}

TEST_CASE("backward matches finite differences") {
    Rng rng(77);
    auto pair = pepi::new_sub_matrix_pair(5, 4, pepi::InitSpec::FanIn(), rng);
    for (float& v : pair.bias.data) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    auto inputs = random_blocks(3, 5, rng);
    auto probe = random_blocks(3, 4, rng);

    auto loss = [&]() {
        auto out = pepi::layer_forward(pair, inputs, nn::Activation::relu);
        double s = 0;
        for (size_t v = 0; v < out.size(); ++v)
            for (size_t i = 0; i < out[v].size(); ++i) s += probe[v][i] * out[v][i];
        return s;
    };

    pepi::ForwardCache cache;
    pepi::layer_forward(pair, inputs, nn::Activation::relu, &cache);
    pepi::PairGrads grads(pair);
    pepi::layer_backward(pair, cache, probe, grads);

    CHECK(nn::finite_diff_check(loss, pair.s, grads.s, 1e-3) < 1e-3);
    CHECK(nn::finite_diff_check(loss, pair.o, grads.o, 1e-3) < 1e-3);
    CHECK(nn::finite_diff_check(loss, pair.bias, grads.bias, 1e-3) < 1e-3);
}

TEST_CASE("backward input gradients match finite differences") {
    Rng rng(78);
    auto pair = pepi::new_sub_matrix_pair(4, 3, pepi::InitSpec::FanIn(), rng);
    auto inputs = random_blocks(2, 4, rng);
    auto probe = random_blocks(2, 3, rng);

    pepi::ForwardCache cache;
    pepi::layer_forward(pair, inputs, nn::Activation::identity, &cache);
    pepi::PairGrads grads(pair);
    pepi::Blocks in_grads;
    pepi::layer_backward(pair, cache, probe, grads, &in_grads);

    // pack the inputs into a tensor so the shared checker can drive them
    Tensor packed({2, 4});
    for (int v = 0; v < 2; ++v)
        for (int j = 0; j < 4; ++j) packed.data[static_cast<size_t>(v) * 4 + j] = static_cast<float>(inputs[v][static_cast<size_t>(j)]);
    std::vector<double> analytic;
    for (const auto& blk : in_grads) analytic.insert(analytic.end(), blk.begin(), blk.end());

    auto loss = [&]() {
        pepi::Blocks cur(2, pepi::Block(4));
        for (int v = 0; v < 2; ++v)
            for (int j = 0; j < 4; ++j) cur[v][static_cast<size_t>(j)] = packed.data[static_cast<size_t>(v) * 4 + j];
        auto out = pepi::layer_forward(pair, cur, nn::Activation::identity);
        double s = 0;
        for (size_t v = 0; v < out.size(); ++v)
            for (size_t i = 0; i < out[v].size(); ++i) s += probe[v][i] * out[v][i];
        return s;
    };
    CHECK(nn::finite_diff_check(loss, packed, analytic, 1e-3) < 1e-3);
}

TEST_CASE("grad accumulation adds across calls") {
    Rng rng(81);
    auto pair = pepi::new_sub_matrix_pair(3, 2, pepi::InitSpec::FanIn(), rng);
    auto inputs = random_blocks(2, 3, rng);
    auto probe = random_blocks(2, 2, rng);

    pepi::ForwardCache cache;
    pepi::layer_forward(pair, inputs, nn::Activation::identity, &cache);

    pepi::PairGrads once(pair), twice(pair);
    pepi::layer_backward(pair, cache, probe, once);
    pepi::layer_backward(pair, cache, probe, twice);
    pepi::layer_backward(pair, cache, probe, twice);
    for (size_t i = 0; i < once.s.size(); ++i) CHECK(twice.s[i] == doctest::Approx(2.0 * once.s[i]));

    twice.zero();
    for (double v : twice.s) CHECK(v == 0.0);
    for (double v : twice.bias) CHECK(v == 0.0);
}

TEST_CASE("scaled net rescales without touching parameters") {
    model::Architecture arch;
    arch.image_h = arch.image_w = 16;
    arch.conv_channels = {2, 3};
    arch.block_widths = {6, 4};

    model::ScaledNet net(arch, 123, 3);
    CHECK(net.scale() == 3);
    CHECK(net.input_views() == 3);
    auto before = net.snapshot();

    auto grown = net.rescaled(5);
    CHECK(grown.scale() == 5);
    CHECK(model::bit_equal(grown.snapshot(), before));

    net.set_scale(1);
    CHECK(model::bit_equal(net.snapshot(), before));
    CHECK_THROWS_AS(net.set_scale(0), std::invalid_argument);
}

TEST_CASE("parameter counting follows the block algebra") {
    Rng rng(90);
    std::vector<pepi::SubMatrixPair> layers;
    layers.push_back(pepi::new_sub_matrix_pair(10, 10, pepi::InitSpec::FanIn(), rng));

    auto r5 = model::count_parameters(layers, 5);
    CHECK(r5.pepi_trainable_weights == 200);    // 2ab
    CHECK(r5.pepi_effective_weights == 2500);   // ab k^2
    CHECK(r5.ratio == doctest::Approx(12.5));   // k^2 / 2
    CHECK(r5.trainable == 210);                 // + bias
    CHECK(r5.trainable_weights == 200);

    auto r1 = model::count_parameters(layers, 1);
    CHECK(r1.ratio == doctest::Approx(0.5));
    CHECK(r1.pepi_effective_weights == 100);

    // trainable counts never depend on k
    layers.push_back(pepi::new_sub_matrix_pair(10, 4, pepi::InitSpec::FanIn(), rng));
    auto a = model::count_parameters(layers, 2);
    auto b = model::count_parameters(layers, 7);
    CHECK(a.trainable == b.trainable);
    CHECK(a.trainable_weights == b.trainable_weights);
    CHECK(b.ratio == doctest::Approx(49.0 / 2.0));
}

TEST_CASE("ratio law k^2/2 across scales") {
    Rng rng(91);
    std::vector<pepi::SubMatrixPair> layers;
    layers.push_back(pepi::new_sub_matrix_pair(256, 64, pepi::InitSpec::FanIn(), rng));
    layers.push_back(pepi::new_sub_matrix_pair(64, 32, pepi::InitSpec::FanIn(), rng));
    layers.push_back(pepi::new_sub_matrix_pair(32, 10, pepi::InitSpec::FanIn(), rng));
    for (int k = 1; k <= 8; ++k) {
        auto r = model::count_parameters(layers, k);
        CHECK(r.ratio == doctest::Approx(k * k / 2.0).epsilon(1e-15));
    }
}
