#include "flowsel/adapt.hpp"
#include "flowsel/error.hpp"
#include "flowsel/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace flowsel;
using namespace flowsel::adapt;
using nn::BatchNormOptions;
using nn::LossBuilder;
using nn::Shape;
using nn::Tensor4;

namespace {

const BatchNormOptions kCheck{.update_running = false};

Tensor4 random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor4 t(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Moves every trainable entry under prefix away from its initialization so
// no path is trivially zero.
void perturb(ParamStore& store, const std::string& prefix, Rng& rng) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        Param& p = store[i];
        if (p.buffer || p.name.rfind(prefix, 0) != 0) continue;
        for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] += rng.uniform(-0.5, 0.5);
    }
}

Var readout(Graph& g, Var y, std::uint64_t seed) {
    Rng rng(seed);
    return nn::dot_const(g, y, random_tensor(g.shape(y), rng));
}

void expect_grads(ParamStore& store, const LossBuilder& build, const std::string& prefix = "") {
    for (std::size_t i = 0; i < store.size(); ++i) {
        Param& p = store[i];
        if (p.buffer || p.name.rfind(prefix, 0) != 0) continue;
        const auto r = nn::grad_check(build, p, {.seed = i});
        EXPECT_LT(r.max_rel_error, 1e-4) << p.name;
    }
}

}  // namespace

TEST(Gating, Range) {
    ParamStore s;
    GatingCoefficient gate(s, "g");
    EXPECT_DOUBLE_EQ(gate.value(), 0.3);
    for (int i = 0; i <= 400; ++i) {
        gate.raw().value[0] = -20.0 + 0.1 * i;
        const double a = gate.value();
        EXPECT_GT(a, 0.1);
        EXPECT_LT(a, 0.5);
    }
    gate.force_zero(true);
    EXPECT_EQ(gate.value(), 0.0);
}

TEST(Compressor, ShapeAndZeroInput) {
    Rng rng(1);
    ParamStore s;
    CompressorBlock block(s, "c", 8, 2.0, rng);
    Graph g;
    const Var x = g.constant(random_tensor({2, 8, 8, 8}, rng));
    const Var k = block.forward(g, x, {});
    EXPECT_EQ(g.shape(k), (Shape{2, 4, 4, 4}));
    for (std::size_t i = 0; i < g.value(k).size(); ++i) EXPECT_GE(g.value(k)[i], 0.0);
    EXPECT_EQ(g.value(block.forward(g, g.constant(Tensor4({2, 8, 8, 8})), {})), Tensor4({2, 4, 4, 4}));
    EXPECT_THROW(block.forward(g, g.constant(Tensor4({1, 8, 1, 8})), {}), ShapeError);
    EXPECT_EQ(CompressorBlock(s, "c3", 5, 2.0, rng).out_channels(), 3u);
}

TEST(Compressor, GradCheck) {
    Rng rng(2);
    ParamStore s;
    CompressorBlock block(s, "c", 6, 2.0, rng);
    auto& x = s.add("x", {2, 6, 7, 6});
    for (std::size_t i = 0; i < x.value.size(); ++i) x.value[i] = rng.uniform(-1, 1);
    perturb(s, "c", rng);
    expect_grads(s, [&](Graph& g) { return readout(g, block.forward(g, g.param(x), kCheck), 3); });
}

TEST(Inject, ZeroHookIsIdentity) {
    Rng rng(3);
    ParamStore s;
    InjectorBlock inj(s, "inj", 4, 8, rng);
    GatingCoefficient gate(s, "inj");
    gate.force_zero(true);
    Graph g;
    const Var f = g.constant(random_tensor({1, 8, 8, 8}, rng));
    const Var kc = g.constant(random_tensor({1, 4, 4, 4}, rng, 0, 1));
    const Var out = inject(g, f, kc, inj, gate, {});
    const Tensor4 copy = g.value(out);
    EXPECT_EQ(copy, g.value(f));
}

TEST(Inject, GainBounds) {
    Rng rng(4);
    ParamStore s;
    InjectorBlock inj(s, "inj", 4, 8, rng);
    GatingCoefficient gate(s, "inj");
    for (double raw : {-5.0, 0.0, 3.0}) {
        gate.raw().value[0] = raw;
        const double alpha = gate.value();
        Graph g;
        const Var f = g.constant(random_tensor({2, 8, 8, 8}, rng));
        const Var kc = g.constant(random_tensor({2, 4, 4, 4}, rng, 0, 2));
        const Tensor4& fv = g.value(f);
        const Tensor4 out = g.value(inject(g, f, kc, inj, gate, {}));
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (fv[i] <= 0.0) continue;
            const double ratio = out[i] / fv[i];
            EXPECT_GT(ratio, 1.0);
            EXPECT_LT(ratio, 1.0 + alpha);
        }
    }
}

TEST(Inject, AttentionStrictlyInside) {
    Rng rng(5);
    ParamStore s;
    InjectorBlock inj(s, "inj", 2, 3, rng);
    Graph g;
    const Tensor4& a = g.value(inj.attention(g, g.constant(random_tensor({1, 2, 3, 3}, rng, -50, 50)), 6, 6, {}));
    EXPECT_EQ(a.shape(), (Shape{1, 3, 6, 6}));
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_GT(a[i], 0.0);
        EXPECT_LT(a[i], 1.0);
    }
}

TEST(Inject, ChannelMismatch) {
    Rng rng(6);
    ParamStore s;
    InjectorBlock inj(s, "inj", 4, 8, rng);
    GatingCoefficient gate(s, "inj");
    Graph g;
    EXPECT_THROW(inject(g, g.constant(Tensor4({1, 6, 8, 8})), g.constant(Tensor4({1, 4, 4, 4})), inj, gate, {}),
                 ShapeError);
}

TEST(Inject, GradCheckIncludingAlpha) {
    Rng rng(7);
    ParamStore s;
    InjectorBlock inj(s, "inj", 3, 5, rng);
    GatingCoefficient gate(s, "inj");
    auto& f = s.add("f", {2, 5, 6, 6});
    auto& kc = s.add("kc", {2, 3, 3, 3});
    for (Param* p : {&f, &kc})
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = rng.uniform(-1, 1);
    perturb(s, "inj", rng);
    expect_grads(s, [&](Graph& g) { return readout(g, inject(g, g.param(f), g.param(kc), inj, gate, kCheck), 8); });
}

TEST(DualPath, InitialIdentityAndWeights) {
    Rng rng(8);
    ParamStore s;
    DualPathAdapter ad(s, "dp", 8, 2.0, rng);
    const auto [ws, wc] = ad.fusion_weights();
    EXPECT_EQ(ws, 0.5);
    EXPECT_EQ(wc, 0.5);
    Graph g;
    const Var x = g.constant(random_tensor({2, 8, 5, 5}, rng));
    const Tensor4 y = g.value(ad.forward(g, x, {}));
    EXPECT_EQ(y, g.value(x));
    EXPECT_THROW(ad.forward(g, g.constant(Tensor4({1, 4, 5, 5})), {}), ShapeError);
}

TEST(DualPath, LogitsSelectPath) {
    Rng rng(9);
    ParamStore s;
    DualPathAdapter ad(s, "dp", 4, 2.0, rng);
    perturb(s, "dp", rng);
    const Tensor4 x = random_tensor({1, 4, 6, 6}, rng);
    const auto run = [&](double a, double b) {
        ad.logits().value[0] = a;
        ad.logits().value[1] = b;
        Graph g;
        return g.value(ad.forward(g, g.constant(x), {}));
    };
    const Tensor4 spatial_heavy = run(10, -10);
    EXPECT_GT(ad.fusion_weights().first, 0.9999);
    const Tensor4 channel_heavy = run(-10, 10);
    EXPECT_NE(spatial_heavy, channel_heavy);

    // Direct evaluation of the spatial path with w_s = 1 is close.
    ad.logits().value[0] = 10;
    ad.logits().value[1] = -10;
    Graph g;
    const Var xv = g.constant(x);
    const Tensor4 sp = g.value(nn::add(g, xv, ad.spatial(g, xv, {})));
    for (std::size_t i = 0; i < sp.size(); ++i) EXPECT_NEAR(spatial_heavy[i], sp[i], 1e-6 * (1 + std::abs(sp[i])));
}

TEST(DualPath, WeightsSumToOne) {
    Rng rng(10);
    ParamStore s;
    DualPathAdapter ad(s, "dp", 2, 2.0, rng);
    for (int i = 0; i < 1000; ++i) {
        ad.logits().value[0] = rng.uniform(-15, 15);
        ad.logits().value[1] = rng.uniform(-15, 15);
        const auto [ws, wc] = ad.fusion_weights();
        EXPECT_GT(ws, 0.0);
        EXPECT_GT(wc, 0.0);
        EXPECT_EQ(ws + wc, 1.0);
    }
}

TEST(DualPath, GradCheck) {
    Rng rng(11);
    ParamStore s;
    DualPathAdapter ad(s, "dp", 6, 4.0, rng);
    auto& x = s.add("x", {2, 6, 5, 5});
    for (std::size_t i = 0; i < x.value.size(); ++i) x.value[i] = rng.uniform(-1, 1);
    perturb(s, "dp", rng);
    expect_grads(s, [&](Graph& g) { return readout(g, ad.forward(g, g.param(x), kCheck), 12); });
}

TEST(Prompts, MeanThenProject) {
    Rng rng(12);
    ParamStore s;
    AgentPromptGenerator gen(s, "p", 4, 3, rng);
    const Tensor4 a = random_tensor({1, 4, 5, 5}, rng), b = random_tensor({1, 4, 5, 5}, rng),
                 c = random_tensor({1, 4, 5, 5}, rng);
    Graph g;
    const Var va = g.constant(a), vb = g.constant(b), vc = g.constant(c);
    const Tensor4 single = g.value(gen.make_prompts(g, {va}, {{0}})[0]);
    const Tensor4 direct = g.value(nn::conv2d(g, va, g.param(gen.projection())));
    EXPECT_EQ(single, direct);
    EXPECT_EQ(g.value(gen.make_prompts(g, {va, va}, {{0, 1}})[0]), single);

    const Tensor4 p012 = g.value(gen.make_prompts(g, {va, vb, vc}, {{0, 1, 2}})[0]);
    const Tensor4 p201 = g.value(gen.make_prompts(g, {va, vb, vc}, {{2, 0, 1}})[0]);
    const Tensor4 swapped = g.value(gen.make_prompts(g, {vc, vb, va}, {{1, 2, 0}})[0]);
    EXPECT_EQ(p012, p201);
    EXPECT_EQ(p012.shape(), (Shape{1, 3, 5, 5}));
    for (std::size_t i = 0; i < p012.size(); ++i) EXPECT_NEAR(p012[i], swapped[i], 1e-15);

    const auto two = gen.make_prompts(g, {va, vb, vc}, {{0, 2}, {1}});
    EXPECT_EQ(two.size(), 2u);
    EXPECT_THROW(gen.make_prompts(g, {va, vb}, {{0}, {}}), InvalidGrouping);
    EXPECT_THROW(gen.make_prompts(g, {va, vb}, {{0}}), InvalidGrouping);
    EXPECT_THROW(gen.make_prompts(g, {va, vb}, {{0, 1}, {1}}), InvalidGrouping);
    EXPECT_THROW(gen.make_prompts(g, {va}, {{0, 3}}), InvalidGrouping);
}

TEST(Stages, ConfigValidation) {
    EXPECT_NO_THROW(StageConfig{}.validate());
    EXPECT_THROW((StageConfig{.r_middle = 2.0}).validate(), ConfigError);
    EXPECT_THROW((StageConfig{.r_early = 8.0, .r_late = 4.0}).validate(), ConfigError);
    EXPECT_THROW((StageConfig{.n_early = 2}).validate(), ConfigError);
    EXPECT_THROW((StageConfig{.n_late = 0}).validate(), ConfigError);
    Rng rng(0);
    ParamStore s;
    EXPECT_THROW(EarlyStage(s, "e", 8, StageConfig{.r_early = 0.5}, rng), ConfigError);
}

TEST(Stages, CapacityDecreasesWithDepth) {
    Rng rng(13);
    ParamStore s;
    const StageConfig cfg;
    EarlyStage early(s, "early", 8, cfg, rng);
    AgentPromptGenerator prompts(s, "early.prompt", 8, 8, rng);
    const std::size_t k = early.compressor().out_channels();
    InjectStage middle(s, "middle", 8, k, cfg.n_middle, cfg.r_middle, rng);
    InjectStage late(s, "late", 8, k, cfg.n_late, cfg.r_late, rng);
    const std::size_t ce = count_prefix(s, "early"), cm = count_prefix(s, "middle"), cl = count_prefix(s, "late");
    EXPECT_EQ(ce + cm + cl, s.count_weights());
    EXPECT_GT(ce, cm);
    EXPECT_GE(cm, cl);
}

TEST(Stages, MemoryOrdering) {
    Rng rng(14);
    ParamStore s;
    const StageConfig cfg;
    EarlyStage early(s, "early", 4, cfg, rng);
    InjectStage late(s, "late", 4, early.compressor().out_channels(), 1, cfg.r_late, rng);
    FeatureMemory memory(2);
    Graph g;
    const Var f = g.constant(random_tensor({1, 4, 8, 8}, rng));
    EXPECT_THROW(memory.read(0), StageOrderError);
    EXPECT_THROW(late.forward(g, f, 0, memory, {}), StageOrderError);
    early.forward(g, f, 0, memory, {});
    EXPECT_NO_THROW(late.forward(g, f, 0, memory, {}));
    EXPECT_THROW(late.forward(g, f, 1, memory, {}), StageOrderError);
    memory.clear();
    EXPECT_FALSE(memory.has(0));
}

TEST(Stages, ZeroHookMatchesAdaptersOnly) {
    Rng rng(15);
    ParamStore s;
    const StageConfig cfg;
    EarlyStage early(s, "early", 4, cfg, rng);
    InjectStage late(s, "late", 4, early.compressor().out_channels(), 1, cfg.r_late, rng);
    DualPathAdapter reference(s, "ref", 4, cfg.r_late, rng);
    perturb(s, "", rng);
    // Copy the late block weights into the reference adapter.
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i].name.rfind("late.block0.", 0) == 0)
            s.find("ref." + s[i].name.substr(12))->value = s[i].value;
    late.gate().force_zero(true);
    FeatureMemory memory(1);
    Graph g;
    const Var f = g.constant(random_tensor({1, 4, 8, 8}, rng));
    early.forward(g, f, 0, memory, kCheck);
    const Tensor4 with_hook = g.value(late.forward(g, f, 0, memory, kCheck));
    const Tensor4 adapters_only = g.value(reference.forward(g, f, kCheck));
    EXPECT_EQ(with_hook, adapters_only);
}

TEST(Stages, MemoryIsGradientIsolated) {
    Rng rng(16);
    ParamStore s;
    const StageConfig cfg;
    EarlyStage early(s, "early", 4, cfg, rng);
    InjectStage late(s, "late", 4, early.compressor().out_channels(), 1, cfg.r_late, rng);
    perturb(s, "", rng);
    const Tensor4 early_in = random_tensor({1, 4, 8, 8}, rng);
    const Tensor4 late_in = random_tensor({1, 4, 8, 8}, rng);
    // Early adapters reach the loss only through the memory.
    const auto loss = [&](Graph& g) {
        FeatureMemory memory(1);
        early.forward(g, g.constant(early_in), 0, memory, kCheck);
        return readout(g, late.forward(g, g.constant(late_in), 0, memory, kCheck), 17);
    };
    s.zero_grad();
    {
        Graph g(true);
        g.backward(loss(g));
    }
    Param* probe = s.find("early.block0.spatial.dw1");
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i].name.rfind("early.block", 0) == 0) EXPECT_EQ(s[i].grad, Tensor4(s[i].value.shape())) << s[i].name;
    // The compressor sits after the cut and still learns.
    EXPECT_NE(s.find("early.compressor.conv")->grad, Tensor4(s.find("early.compressor.conv")->value.shape()));

    double sensitivity = 0.0;
    for (std::size_t i = 0; i < probe->value.size(); ++i) {
        const double saved = probe->value[i];
        probe->value[i] = saved + 1e-3;
        const double up = [&] { Graph g; return g.value(loss(g))[0]; }();
        probe->value[i] = saved - 1e-3;
        const double down = [&] { Graph g; return g.value(loss(g))[0]; }();
        probe->value[i] = saved;
        sensitivity = std::max(sensitivity, std::abs(up - down) / 2e-3);
    }
    EXPECT_GT(sensitivity, 1e-6);
}
