#include "flowsel/error.hpp"
#include "flowsel/features.hpp"
#include "flowsel/ops.hpp"
#include "flowsel/rng.hpp"
#include "flowsel/sampler.hpp"
#include "flowsel/simd/kernels.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <vector>

using namespace flowsel;

namespace {

std::vector<simd::Level> levels() {
    std::vector<simd::Level> out;
    for (auto l : {simd::Level::scalar, simd::Level::avx2, simd::Level::neon})
        if (simd::supported(l)) out.push_back(l);
    return out;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -3, double hi = 3) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

class LevelGuard {
public:
    LevelGuard() : saved_(simd::active().level) {}
    ~LevelGuard() { simd::set_level(saved_); }

private:
    simd::Level saved_;
};

}  // namespace

TEST(Simd, ScalarAlwaysSupported) {
    EXPECT_TRUE(simd::supported(simd::Level::scalar));
    EXPECT_EQ(simd::parse_level("avx2"), simd::Level::avx2);
    EXPECT_THROW(simd::parse_level("sse9"), flowsel::Error);
}

TEST(Simd, KernelsBitIdenticalAcrossLevels) {
    const auto& ref = simd::scalar_kernels();
    Rng rng(42);
    for (std::size_t n : {1u, 3u, 4u, 7u, 64u, 1001u}) {
        const auto t = random_vec(n, rng), x = random_vec(n, rng), y = random_vec(n, rng), s = random_vec(n, rng);
        const double q[4] = {0.5, -0.25, 0.75, 0.1};
        const double w[4] = {2.0, 1.0, 1.0, 0.5};
        const auto a = random_vec(n, rng), b = random_vec(n, rng);
        for (auto level : levels()) {
            const auto& k = simd::kernels_for(level);
            std::vector<double> d_ref(n), d(n);
            ref.distance_row(q, {t.data(), x.data(), y.data(), s.data()}, w, d_ref.data(), n);
            k.distance_row(q, {t.data(), x.data(), y.data(), s.data()}, w, d.data(), n);
            EXPECT_TRUE(same_bits(d_ref, d)) << simd::to_string(level);

            auto r_ref = a, r = a;
            ref.min_update(r_ref.data(), b.data(), n);
            k.min_update(r.data(), b.data(), n);
            EXPECT_TRUE(same_bits(r_ref, r));
            EXPECT_EQ(ref.max_value(a.data(), n), k.max_value(a.data(), n));

            auto y_ref = b, yv = b;
            ref.axpy(0.37, a.data(), y_ref.data(), n);
            k.axpy(0.37, a.data(), yv.data(), n);
            EXPECT_TRUE(same_bits(y_ref, yv));

            std::vector<double> m_ref(n), m(n);
            ref.mul(a.data(), b.data(), m_ref.data(), n);
            k.mul(a.data(), b.data(), m.data(), n);
            EXPECT_TRUE(same_bits(m_ref, m));
        }
    }
}

TEST(Simd, DistanceMatrixIdenticalAcrossLevelsAndThreads) {
    LevelGuard guard;
    const auto f = fixture::random_features(301, 5);
    simd::set_level(simd::Level::scalar);
    const auto ref = distance_matrix(f, WeightVector{}, 1);
    const std::vector<double> ref_entries(ref.entries().begin(), ref.entries().end());
    for (auto level : levels()) {
        simd::set_level(level);
        for (unsigned threads : {1u, 2u, 4u, 7u}) {
            const auto d = distance_matrix(f, WeightVector{}, threads);
            EXPECT_TRUE(same_bits(ref_entries, std::vector<double>(d.entries().begin(), d.entries().end())))
                << simd::to_string(level) << " threads=" << threads;
        }
    }
}

TEST(Simd, SelectionIdenticalAcrossLevels) {
    LevelGuard guard;
    const auto d = distance_matrix(fixture::random_features(257, 9), WeightVector{});
    simd::set_level(simd::Level::scalar);
    const auto ref = wgs_select(d, 40);
    for (auto level : levels()) {
        simd::set_level(level);
        const auto r = wgs_select(d, 40);
        EXPECT_EQ(r.indices, ref.indices);
        EXPECT_TRUE(same_bits(r.radius_trace, ref.radius_trace));
    }
}

TEST(Simd, ConvolutionIdenticalAcrossLevels) {
    LevelGuard guard;
    Rng rng(3);
    nn::Tensor4 x(nn::Shape{2, 5, 7, 6});
    nn::Tensor4 k(nn::Shape{4, 5, 3, 3});
    for (auto& v : x.data()) v = rng.uniform(-1, 1);
    for (auto& v : k.data()) v = rng.uniform(-1, 1);
    nn::Param px{"x", x, nn::Tensor4(x.shape()), nn::Tensor4(x.shape())};
    nn::Param pk{"k", k, nn::Tensor4(k.shape()), nn::Tensor4(k.shape())};

    auto run = [&] {
        px.grad.fill(0);
        pk.grad.fill(0);
        nn::Graph g;
        const auto y = nn::conv2d(g, g.param(px), g.param(pk));
        nn::Tensor4 w(g.shape(y));
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.1 * static_cast<double>(i));
        const auto loss = nn::dot_const(g, y, w);
        g.backward(loss);
        std::vector<double> out(g.value(y).data().begin(), g.value(y).data().end());
        out.insert(out.end(), px.grad.data().begin(), px.grad.data().end());
        out.insert(out.end(), pk.grad.data().begin(), pk.grad.data().end());
        return out;
    };
    simd::set_level(simd::Level::scalar);
    const auto ref = run();
    for (auto level : levels()) {
        simd::set_level(level);
        EXPECT_TRUE(same_bits(ref, run())) << simd::to_string(level);
    }
}
