#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "survnet/conditioning.hpp"
#include "survnet/ops.hpp"
#include "survnet/tensor.hpp"

using namespace survnet;

namespace {

double mean_of(const double* v, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += v[i];
    return s / n;
}

double pop_std_of(const double* v, int n) {
    const double mu = mean_of(v, n);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += (v[i] - mu) * (v[i] - mu);
    return std::sqrt(s / n);
}

} // namespace

TEST_CASE("treatment codes round-trip through their names") {
    for (auto t : {Treatment::GTR, Treatment::STR, Treatment::NA}) {
        CHECK(treatment_from_string(to_string(t)) == t);
    }
    CHECK_THROWS_AS(treatment_from_string("partial"), ConfigError);
}

TEST_CASE("one_hot encodes rows in enum order") {
    auto oh = one_hot({Treatment::GTR, Treatment::STR, Treatment::NA});
    REQUIRE(oh->shape == Shape{3, 3});
    CHECK(oh->data == std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK_THROWS_AS(one_hot(std::vector<Treatment>{}), ShapeError);
}

TEST_CASE("map_treatment is deterministic and separates the three codes") {
    std::mt19937_64 rng(3);
    auto net = MappingNetwork::init(16, rng);
    auto z1 = map_treatment(one_hot({Treatment::GTR, Treatment::STR, Treatment::NA}), net);
    auto z2 = map_treatment(one_hot({Treatment::GTR, Treatment::STR, Treatment::NA}), net);
    REQUIRE(z1->shape == Shape{3, 16});
    CHECK(z1->data == z2->data);

    auto row_diff = [&](int a, int b) {
        double d = 0.0;
        for (int j = 0; j < 16; ++j) d += std::abs(z1->data[a * 16 + j] - z1->data[b * 16 + j]);
        return d;
    };
    CHECK(row_diff(0, 1) > 1e-6);
    CHECK(row_diff(0, 2) > 1e-6);
    CHECK(row_diff(1, 2) > 1e-6);
}

TEST_CASE("map_treatment rejects rows that are not exact one-hots") {
    auto net = [] {
        std::mt19937_64 rng(4);
        return MappingNetwork::init(8, rng);
    }();
    auto soft = Tensor::from({1, 3}, {0.5, 0.5, 0.0});
    CHECK_THROWS_AS(map_treatment(soft, net), ValidationError);
    auto twohot = Tensor::from({1, 3}, {1.0, 1.0, 0.0});
    CHECK_THROWS_AS(map_treatment(twohot, net), ValidationError);
    auto wrong_width = Tensor::from({1, 2}, {1.0, 0.0});
    CHECK_THROWS_AS(map_treatment(wrong_width, net), ShapeError);
}

TEST_CASE("affine heads start as plain instance normalization") {
    std::mt19937_64 rng(5);
    auto spec = AffineSpecializer::init({4, 8}, 16, rng);
    REQUIRE(spec.weights.size() == 2);
    REQUIRE(spec.weights[1]->shape == Shape{16, 16});
    REQUIRE(spec.biases[0]->shape == Shape{8});
    // bias init: scale half all ones, bias half all zeros
    for (int c = 0; c < 4; ++c) CHECK(spec.biases[0]->data[c] == 1.0);
    for (int c = 4; c < 8; ++c) CHECK(spec.biases[0]->data[c] == 0.0);

    // With the weights zeroed the heads emit exactly (1, 0) per channel, and
    // modulation reduces to instance normalization.
    for (auto& w : spec.weights) std::fill(w->data.begin(), w->data.end(), 0.0);
    std::mt19937_64 zr(6);
    auto z = Tensor::randn({2, 16}, zr);
    auto [scale, bias] = specialize(z, 0, spec);
    REQUIRE(scale->shape == Shape{2, 4});
    for (double v : scale->data) CHECK(v == 1.0);
    for (double v : bias->data) CHECK(v == 0.0);

    auto x = Tensor::randn({2, 4, 5, 5, 5}, zr);
    auto y = adain(x, scale, bias);
    const int vox = 125;
    for (int nc = 0; nc < 8; ++nc) {
        CHECK(std::abs(mean_of(y->data.data() + nc * vox, vox)) < 1e-12);
        CHECK(std::abs(pop_std_of(y->data.data() + nc * vox, vox) - 1.0) < 1e-4);
    }
}

TEST_CASE("specialize splits head output into scale then bias") {
    AffineSpecializer spec;
    spec.latent_width = 4;
    spec.weights = {Tensor::zeros({4, 4}, true)};
    spec.biases = {Tensor::from({4}, {2, 3, 5, 7}, true)};
    auto z = Tensor::from({1, 4}, {9, 9, 9, 9});
    auto [scale, bias] = specialize(z, 0, spec);
    CHECK(scale->data == std::vector<double>{2, 3});
    CHECK(bias->data == std::vector<double>{5, 7});
    CHECK_THROWS_AS(specialize(z, 1, spec), ConfigError);

    // a single nonzero weight row makes that coefficient track the latent
    spec.weights[0]->data[0] = 1.0; // scale[0] += z[0]
    auto [s2, b2] = specialize(z, 0, spec);
    CHECK(s2->data[0] == doctest::Approx(11.0));
    CHECK(s2->data[1] == doctest::Approx(3.0));
}

TEST_CASE("modulated outputs hit the requested moments across 100 seeds") {
    double worst_mean = 0.0, worst_std = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        auto x = Tensor::randn({2, 3, 6, 6, 6}, rng, 1.0 + 0.1 * (seed % 7));
        auto scale = Tensor::randn({2, 3}, rng, 1.5);
        auto bias = Tensor::randn({2, 3}, rng, 2.0);
        auto y = adain(x, scale, bias);
        const int vox = 216;
        for (int nc = 0; nc < 6; ++nc) {
            const double m = mean_of(y->data.data() + nc * vox, vox);
            const double s = pop_std_of(y->data.data() + nc * vox, vox);
            worst_mean = std::max(worst_mean, std::abs(m - bias->data[nc]));
            worst_std = std::max(worst_std, std::abs(s - std::abs(scale->data[nc])));
        }
    }
    CHECK(worst_mean < 1e-8);
    CHECK(worst_std < 1e-4);
}

TEST_CASE("modulation is invariant to rescaling of its input") {
    std::mt19937_64 rng(11);
    auto x = Tensor::randn({1, 2, 5, 5, 5}, rng);
    auto x10 = Tensor::from(x->shape, x->data);
    for (auto& v : x10->data) v *= 10.0;
    auto scale = Tensor::from({1, 2}, {1.3, -0.7});
    auto bias = Tensor::from({1, 2}, {4.0, -2.0});
    auto a = adain(x, scale, bias);
    auto b = adain(x10, scale, bias);
    for (std::size_t i = 0; i < a->data.size(); ++i) {
        CHECK(std::abs(a->data[i] - b->data[i]) < 1e-4);
    }
}

TEST_CASE("gradients reach the mapping network and affine heads") {
    std::mt19937_64 rng(13);
    auto net = MappingNetwork::init(16, rng);
    auto spec = AffineSpecializer::init({2}, 16, rng);
    for (auto& [name, p] : net.parameters("map")) p->requires_grad = true;
    for (auto& [name, p] : spec.parameters("heads")) p->requires_grad = true;

    auto x = Tensor::randn({2, 2, 4, 4, 4}, rng, 1.0, true);
    auto z = map_treatment(one_hot({Treatment::GTR, Treatment::NA}), net);
    auto [scale, bias] = specialize(z, 0, spec);
    auto y = adain(x, scale, bias);
    auto loss = mae(y, Tensor::zeros(y->shape));
    backward(loss);

    auto grad_norm = [](const TensorPtr& p) {
        double s = 0.0;
        for (double g : p->grad) s += std::abs(g);
        return s;
    };
    for (auto& [name, p] : net.parameters("map")) {
        INFO(name);
        REQUIRE(!p->grad.empty());
        CHECK(grad_norm(p) > 0.0);
    }
    for (auto& [name, p] : spec.parameters("heads")) {
        INFO(name);
        REQUIRE(!p->grad.empty());
        CHECK(grad_norm(p) > 0.0);
    }
    CHECK(grad_norm(x) > 0.0);
}

TEST_CASE("adain validates its operand shapes") {
    auto x = Tensor::zeros({1, 2, 3, 3, 3});
    CHECK_THROWS_AS(adain(x, Tensor::zeros({1, 3}), Tensor::zeros({1, 2})), ShapeError);
    CHECK_THROWS_AS(adain(x, Tensor::zeros({1, 2}), Tensor::zeros({2, 2})), ShapeError);
    CHECK_THROWS_AS(adain(Tensor::zeros({2, 3}), Tensor::zeros({1, 2}), Tensor::zeros({1, 2})),
                    ShapeError);
}
