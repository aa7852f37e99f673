#include "flowsel/gradsuite.hpp"

#include "flowsel/adapt.hpp"
#include "flowsel/error.hpp"
#include "flowsel/gradcheck.hpp"
#include "flowsel/ops.hpp"
#include "flowsel/rng.hpp"
#include "flowsel/scenegen.hpp"

#include <algorithm>
#include <functional>
#include <map>

namespace flowsel::nn {
namespace {

void randomize(Param& p, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(lo, hi);
}

Tensor4 random_tensor(Shape s, Rng& rng) {
    Tensor4 t(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

Var readout(Graph& g, Var y, std::uint64_t seed) {
    Rng rng(seed);
    return dot_const(g, y, random_tensor(g.shape(y), rng));
}

// Accumulates per-parameter checks into one case result.
struct Probe {
    GradCaseResult& out;
    std::uint64_t seed;

    void check(const LossBuilder& build, Param& p, std::size_t max_coords = 64, double eps = 1e-3) {
        const auto r = grad_check(build, p, {.eps = eps, .max_coords = max_coords, .seed = seed + out.params});
        out.max_rel_error = std::max(out.max_rel_error, r.max_rel_error);
        out.checked += r.checked;
        ++out.params;
    }
    void all(ParamStore& s, const LossBuilder& build, std::size_t max_coords = 64, double eps = 1e-3) {
        for (std::size_t i = 0; i < s.size(); ++i)
            if (!s[i].buffer) check(build, s[i], max_coords, eps);
    }
};

using CaseFn = std::function<void(Probe&, Rng&)>;

// Fixed small shapes keep every op case well under a second.
constexpr Shape kShape{2, 3, 5, 6};

void op_case(Probe& pr, Rng& rng, const std::function<Var(Graph&, ParamStore&)>& f,
             std::vector<std::pair<std::string, Shape>> inputs) {
    ParamStore s;
    for (auto& [name, shape] : inputs) randomize(s.add(name, shape), rng);
    pr.all(s, [&](Graph& g) { return readout(g, f(g, s), pr.seed); });
}

Var in(Graph& g, ParamStore& s, const char* name) { return g.param(*s.find(name)); }

void batchnorm_case(Probe& pr, Rng& rng, BatchNormMode mode) {
    ParamStore s;
    auto& x = s.add("x", kShape);
    auto& gamma = s.add("gamma", {1, kShape.c, 1, 1});
    auto& beta = s.add("beta", {1, kShape.c, 1, 1});
    auto& rm = s.add_buffer("rm", {1, kShape.c, 1, 1}, 0.1);
    auto& rv = s.add_buffer("rv", {1, kShape.c, 1, 1}, 0.7);
    randomize(x, rng, -2.0, 3.0);
    randomize(gamma, rng, 0.5, 1.5);
    randomize(beta, rng);
    pr.all(s, [&](Graph& g) {
        const BatchNormOptions opt{.mode = mode, .update_running = false};
        return readout(g, batchnorm(g, g.param(x), g.param(gamma), g.param(beta), rm, rv, opt), pr.seed);
    });
}

// Moves every weight off its initial value so zero-initialized paths and
// unit norm scales do not hide wrong gradients.
void jitter(ParamStore& s, Rng& rng, double amount = 0.3) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i].buffer) continue;
        for (std::size_t k = 0; k < s[i].value.size(); ++k) s[i].value[k] += rng.uniform(-amount, amount);
    }
}

// Batch statistics curve the loss enough that the default step's truncation
// error approaches the tolerance.
constexpr double kBlockEps = 1e-5;

const BatchNormOptions kBatchNoUpdate{.mode = BatchNormMode::batch, .update_running = false};

void compressor_case(Probe& pr, Rng& rng) {
    ParamStore s;
    auto& x = s.add("x", {2, 8, 6, 6});
    randomize(x, rng);
    adapt::CompressorBlock block(s, "c", 8, 2.0, rng);
    jitter(s, rng);
    pr.all(
        s, [&](Graph& g) { return readout(g, block.forward(g, g.param(x), kBatchNoUpdate), pr.seed); }, 64,
        kBlockEps);
}

void injector_case(Probe& pr, Rng& rng) {
    ParamStore s;
    auto& f = s.add("f", {2, 8, 6, 6});
    auto& kc = s.add("kc", {2, 4, 3, 3});
    randomize(f, rng);
    randomize(kc, rng);
    adapt::InjectorBlock inj(s, "inj", 4, 8, rng);
    adapt::GatingCoefficient gate(s, "gate");
    jitter(s, rng);
    pr.all(s, [&](Graph& g) {
        return readout(g, adapt::inject(g, g.param(f), g.param(kc), inj, gate, kBatchNoUpdate), pr.seed);
    }, 64, kBlockEps);
}

void dual_path_case(Probe& pr, Rng& rng) {
    ParamStore s;
    auto& x = s.add("x", {2, 8, 5, 5});
    randomize(x, rng);
    adapt::DualPathAdapter block(s, "dp", 8, 4.0, rng);
    jitter(s, rng);
    pr.all(
        s, [&](Graph& g) { return readout(g, block.forward(g, g.param(x), kBatchNoUpdate), pr.seed); }, 64,
        kBlockEps);
}

void prompts_case(Probe& pr, Rng& rng) {
    ParamStore s;
    auto& a = s.add("a", {1, 8, 4, 4});
    auto& b = s.add("b", {1, 8, 4, 4});
    auto& c = s.add("c", {1, 8, 4, 4});
    for (Param* p : {&a, &b, &c}) randomize(*p, rng);
    adapt::AgentPromptGenerator gen(s, "prompt", 8, 8, rng);
    pr.all(s, [&](Graph& g) {
        const auto prompts = gen.make_prompts(g, {g.param(a), g.param(b), g.param(c)}, {{2, 0}, {1}});
        return add(g, readout(g, prompts[0], pr.seed), readout(g, prompts[1], pr.seed + 1));
    });
}

void fusion_case(Probe& pr, Rng& rng) {
    ParamStore s;
    auto& a = s.add("a", {2, 4, 6, 6});
    auto& b = s.add("b", {2, 4, 6, 6});
    auto& p = s.add("p", {2, 4, 6, 6});
    auto& beta = s.add("beta", {1, 1, 1, 1});
    for (Param* q : {&a, &b, &p, &beta}) randomize(*q, rng);
    const std::vector<toy::RelPose> rel{{1.3, -0.7, 0.4}, {-2.0, 0.2, -1.1}};
    pr.all(s, [&](Graph& g) {
        const Var wb = toy::warp_to_ego(g, g.param(b), rel);
        const Var wp = toy::warp_to_ego(g, g.param(p), rel);
        return readout(g, toy::fuse(g, {g.param(a), wb}, {g.param(p), wp}, g.param(beta)), pr.seed);
    });
}

void pipeline_case(Probe& pr, Rng& rng) {
    toy::SceneConfig scene;
    scene.grid_h = scene.grid_w = 8;
    scene.n_agents = 2;
    scene.n_frames = 2;
    scene.seed = rng.next();
    const auto stream = toy::generate_stream(scene);
    const toy::Batch batch = toy::make_batch(stream.frames, {0, 1});

    toy::ToyPipeline pipe(8, 8, 2, rng.next());
    pipe.freeze_backbone();
    pipe.insert_adapters(rng.next());
    jitter(pipe.params(), rng);
    const LossBuilder build = [&](Graph& g) {
        return mse_loss(g, pipe.forward(g, batch, true, false), g.constant(batch.gt));
    };
    // The memory write cuts the encoder and the early blocks out of the
    // injection paths, so a finite difference through them agrees with the
    // gradient only once injection is off. The smaller step keeps truncation
    // error through the sigmoid head well below the tolerance.
    auto& store = pipe.params();
    const auto upstream = [](const std::string& n) { return n.rfind("enc.", 0) == 0 || n.rfind("early.block", 0) == 0; };
    for (bool gates_off : {false, true}) {
        pipe.middle()->gate().force_zero(gates_off);
        pipe.late()->gate().force_zero(gates_off);
        for (std::size_t i = 0; i < store.size(); ++i)
            if (!store[i].buffer && upstream(store[i].name) == gates_off) pr.check(build, store[i], 4, kBlockEps);
    }
}

// Squares its input but back-propagates x instead of 2x.
void broken_case(Probe& pr, Rng& rng) {
    ParamStore s;
    auto& p = s.add("p", {1, 2, 3, 3});
    randomize(p, rng);
    pr.check(
        [&](Graph& g) {
            const Var x = g.param(p);
            Tensor4 y = g.value(x);
            for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] * y[i];
            const Var out = g.record(std::move(y), {x}, [](Graph& gr, std::uint32_t self) {
                const Var v = gr.inputs(self)[0];
                if (Tensor4* gx = gr.grad_slot(v))
                    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += gr.out_grad(self)[i] * gr.value(v)[i];
            });
            return readout(g, out, pr.seed);
        },
        p);
}

const std::vector<std::pair<std::string, CaseFn>>& registry() {
    static const Shape sh = kShape;
    static const Shape ch{1, sh.c, 1, 1};
    static const Shape one{1, 1, 1, 1};
    static const std::vector<std::pair<std::string, CaseFn>> cases = {
        {"conv", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return conv2d(g, in(g, s, "x"), in(g, s, "k")); },
                     {{"x", sh}, {"k", {4, sh.c, 3, 3}}});
         }},
        {"conv1x1", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return conv2d(g, in(g, s, "x"), in(g, s, "k")); },
                     {{"x", sh}, {"k", {2, sh.c, 1, 1}}});
         }},
        {"depthwise", [](Probe& p, Rng& r) {
             op_case(p, r,
                     [](Graph& g, ParamStore& s) { return conv2d(g, in(g, s, "x"), in(g, s, "k"), kShape.c); },
                     {{"x", sh}, {"k", {sh.c, 1, 3, 3}}});
         }},
        {"add_bias", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return add_bias(g, in(g, s, "x"), in(g, s, "b")); },
                     {{"x", sh}, {"b", ch}});
         }},
        {"batchnorm", [](Probe& p, Rng& r) { batchnorm_case(p, r, BatchNormMode::batch); }},
        {"batchnorm_frozen", [](Probe& p, Rng& r) { batchnorm_case(p, r, BatchNormMode::frozen); }},
        {"avgpool2", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return avgpool2(g, in(g, s, "x")); }, {{"x", sh}});
         }},
        {"upsample", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return upsample_nearest(g, in(g, s, "x"), 8, 12); },
                     {{"x", sh}});
         }},
        {"remap", [](Probe& p, Rng& r) {
             std::vector<std::vector<std::int32_t>> maps(sh.n);
             for (auto& m : maps)
                 for (std::size_t i = 0; i < sh.plane(); ++i)
                     m.push_back(static_cast<std::int32_t>(r.below(sh.plane() + 1)) - 1);
             op_case(p, r, [&](Graph& g, ParamStore& s) { return remap(g, in(g, s, "x"), maps, sh.h, sh.w); },
                     {{"x", sh}});
         }},
        {"relu", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return relu(g, in(g, s, "x")); }, {{"x", sh}});
         }},
        {"sigmoid", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return sigmoid(g, affine(g, in(g, s, "x"), 0, 3)); },
                     {{"x", sh}});
         }},
        {"add", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return add(g, in(g, s, "x"), in(g, s, "y")); },
                     {{"x", sh}, {"y", sh}});
         }},
        {"mul", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return mul(g, in(g, s, "x"), in(g, s, "y")); },
                     {{"x", sh}, {"y", sh}});
         }},
        {"affine", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return affine(g, in(g, s, "x"), 0.5, -2.0); },
                     {{"x", sh}});
         }},
        {"scale", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return scale(g, in(g, s, "x"), in(g, s, "a")); },
                     {{"x", sh}, {"a", one}});
         }},
        {"scale_add", [](Probe& p, Rng& r) {
             op_case(p, r,
                     [](Graph& g, ParamStore& s) {
                         return scale_add(g, in(g, s, "x"), in(g, s, "a"), in(g, s, "y"));
                     },
                     {{"x", sh}, {"a", one}, {"y", sh}});
         }},
        {"softmax", [](Probe& p, Rng& r) {
             op_case(p, r, [](Graph& g, ParamStore& s) { return softmax_channels(g, in(g, s, "x")); }, {{"x", sh}});
         }},
        {"pick", [](Probe& p, Rng& r) {
             op_case(p, r,
                     [](Graph& g, ParamStore& s) { return mul(g, pick(g, in(g, s, "b"), 1), in(g, s, "a")); },
                     {{"b", ch}, {"a", one}});
         }},
        {"mean_of", [](Probe& p, Rng& r) {
             op_case(p, r,
                     [](Graph& g, ParamStore& s) {
                         return mean_of(g, {in(g, s, "x"), in(g, s, "y"), in(g, s, "x")});
                     },
                     {{"x", sh}, {"y", sh}});
         }},
        {"mse", [](Probe& p, Rng& r) {
             ParamStore s;
             auto& x = s.add("x", sh);
             auto& y = s.add("y", sh);
             randomize(x, r);
             randomize(y, r);
             const Tensor4 target = random_tensor(sh, r);
             p.all(s, [&](Graph& g) { return mse_loss(g, mul(g, g.param(x), g.param(y)), g.constant(target)); });
         }},
        {"compressor", compressor_case},
        {"injector", injector_case},
        {"dual_path", dual_path_case},
        {"prompts", prompts_case},
        {"fusion", fusion_case},
        {"pipeline", pipeline_case},
    };
    return cases;
}

}  // namespace

std::vector<std::string> grad_case_names() {
    std::vector<std::string> names;
    for (const auto& [name, fn] : registry()) names.push_back(name);
    return names;
}

std::vector<GradCaseResult> run_grad_cases(const std::vector<std::string>& names, std::uint64_t seed,
                                           double tolerance) {
    std::vector<GradCaseResult> out;
    for (std::size_t k = 0; k < names.size(); ++k) {
        const std::string& name = names[k];
        CaseFn fn;
        if (name == "broken") {
            fn = broken_case;
        } else {
            const auto& reg = registry();
            const auto it = std::find_if(reg.begin(), reg.end(), [&](const auto& c) { return c.first == name; });
            if (it == reg.end()) throw ConfigError("unknown gradient check '" + name + "'");
            fn = it->second;
        }
        GradCaseResult r;
        r.name = name;
        Rng rng(derive_seed(seed, k));
        Probe probe{r, seed};
        fn(probe, rng);
        r.pass = r.checked > 0 && r.max_rel_error < tolerance;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace flowsel::nn
