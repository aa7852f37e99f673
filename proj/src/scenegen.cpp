#include "flowsel/scenegen.hpp"

#include "flowsel/checkpoint.hpp"
#include "flowsel/error.hpp"
#include "flowsel/ops.hpp"
#include "flowsel/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace flowsel::toy {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t tag_seed(std::uint64_t base, const char* tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char* p = tag; *p != '\0'; ++p) h = (h ^ static_cast<unsigned char>(*p)) * 0x100000001b3ULL;
    return derive_seed(base, h);
}

// Sum of plane waves squashed to (0, 1).
class Field {
public:
    Field(std::uint64_t seed, double frequency) {
        Rng rng(seed);
        for (auto& w : waves_) {
            const double dir = rng.uniform(0.0, kTwoPi);
            const double k = frequency * kTwoPi / rng.uniform(5.0, 12.0);  // wavelength in cells
            w = {k * std::cos(dir), k * std::sin(dir), rng.uniform(0.0, kTwoPi), rng.uniform(0.5, 1.0)};
        }
    }

    double operator()(double x, double y) const {
        double s = 0.0;
        for (const auto& w : waves_) s += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
        return 1.0 / (1.0 + std::exp(-1.5 * s));
    }

private:
    struct Wave {
        double kx, ky, phase, amp;
    };
    std::array<Wave, 6> waves_{};
};

void rotate(double yaw, double x, double y, double& ox, double& oy) {
    const double c = std::cos(yaw), s = std::sin(yaw);
    ox = c * x - s * y;
    oy = s * x + c * y;
}

}  // namespace

DomainParams DomainParams::source() { return {}; }

DomainParams DomainParams::target() {
    return {.frequency = 1.5, .noise_std = 0.15, .contrast = 0.6, .bias = 0.15, .drift = 0.6};
}

void SceneConfig::validate() const {
    const auto pow2 = [](std::size_t v) { return v >= 8 && (v & (v - 1)) == 0; };
    if (!pow2(grid_h) || !pow2(grid_w)) throw ConfigError("grid dims must be powers of two >= 8");
    if (n_agents == 0) throw ConfigError("need at least one agent");
    if (n_frames == 0) throw ConfigError("need at least one frame");
    if (duplication_factor == 0) throw ConfigError("duplication_factor must be >= 1");
    if (!(cell_m > 0.0) || !(step_s > 0.0) || !(duplicate_s >= 0.0))
        throw ConfigError("cell size and time steps must be positive");
    if (duplicate_s * static_cast<double>(duplication_factor - 1) >= step_s)
        throw ConfigError("duplicates must fit inside one trajectory step");
}

SceneConfig preset(const std::string& name) {
    SceneConfig cfg;
    if (name == "redundancy") {
        cfg.duplication_factor = 5;
    } else if (name != "plain") {
        throw ConfigError("unknown preset '" + name + "' (expected redundancy or plain)");
    }
    return cfg;
}

RelPose relative_pose(const Pose2& ego, const Pose2& other) {
    RelPose r;
    r.dyaw = ego.yaw - other.yaw;
    rotate(-other.yaw, ego.x - other.x, ego.y - other.y, r.dx, r.dy);
    return r;
}

Stream generate_stream(const SceneConfig& cfg) {
    cfg.validate();
    const Field field(cfg.world_seed, cfg.domain.frequency);
    Rng rng(cfg.seed);
    const std::size_t steps = (cfg.n_frames + cfg.duplication_factor - 1) / cfg.duplication_factor;
    const double ch = 0.5 * static_cast<double>(cfg.grid_h - 1), cw = 0.5 * static_cast<double>(cfg.grid_w - 1);

    // Companions hold a rough formation around the ego.
    std::vector<Pose2> offsets(cfg.n_agents);
    for (std::size_t a = 1; a < cfg.n_agents; ++a) {
        const double side = (a % 2 == 1) ? 1.0 : -1.0;
        offsets[a] = {rng.uniform(-6.0, 6.0), side * rng.uniform(4.0, 7.0), rng.normal(0.0, 0.3)};
    }

    Stream out;
    Pose2 ego{rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0), rng.uniform(0.0, kTwoPi)};
    double turn = 0.0;
    const double total_s = cfg.step_s * static_cast<double>(std::max<std::size_t>(steps, 2) - 1);
    for (std::size_t step = 0; step < steps && out.frames.size() < cfg.n_frames; ++step) {
        std::vector<Pose2> base(cfg.n_agents);
        base[0] = ego;
        for (std::size_t a = 1; a < cfg.n_agents; ++a) {
            double ox, oy;
            rotate(ego.yaw, offsets[a].x + rng.normal(0.0, 0.5), offsets[a].y + rng.normal(0.0, 0.5), ox, oy);
            base[a] = {ego.x + ox, ego.y + oy, ego.yaw + offsets[a].yaw};
        }
        for (std::size_t d = 0; d < cfg.duplication_factor && out.frames.size() < cfg.n_frames; ++d) {
            const double t = static_cast<double>(step) * cfg.step_s + static_cast<double>(d) * cfg.duplicate_s;
            const double phase = t / total_s;
            const double contrast = cfg.domain.contrast * (1.0 + cfg.domain.drift * std::sin(kTwoPi * 1.5 * phase));
            const double bias = cfg.domain.bias + 0.5 * cfg.domain.drift * std::cos(kTwoPi * phase);

            ToyFrame f;
            f.poses = base;
            if (d > 0)
                for (auto& p : f.poses) {
                    p.x += rng.normal(0.0, 0.05);
                    p.y += rng.normal(0.0, 0.05);
                    p.yaw += rng.normal(0.0, 0.005);
                }
            f.gt = Tensor4({1, 1, cfg.grid_h, cfg.grid_w});
            for (std::size_t a = 0; a < cfg.n_agents; ++a) {
                Tensor4 obs({1, 1, cfg.grid_h, cfg.grid_w});
                const Pose2& p = f.poses[a];
                for (std::size_t r = 0; r < cfg.grid_h; ++r)
                    for (std::size_t c = 0; c < cfg.grid_w; ++c) {
                        const double qx = static_cast<double>(c) - cw, qy = static_cast<double>(r) - ch;
                        double wx, wy;
                        rotate(p.yaw, qx, qy, wx, wy);
                        const double occ = field(p.x + wx, p.y + wy);
                        if (a == 0) f.gt.at(0, 0, r, c) = occ;
                        const double noise = rng.normal(0.0, cfg.domain.noise_std);
                        if (std::hypot(qx, qy) <= cfg.visibility)
                            obs.at(0, 0, r, c) = contrast * (occ - 0.5) + bias + noise;
                    }
                f.obs.push_back(std::move(obs));
            }
            char id[32];
            std::snprintf(id, sizeof id, "f%05zu", out.frames.size());
            f.record.id = id;
            f.record.t_us = static_cast<std::int64_t>(std::llround(t * 1e6));
            f.record.pose = {f.poses[0].x * cfg.cell_m, f.poses[0].y * cfg.cell_m, 0.0};
            out.manifest.push_back(f.record);
            out.frames.push_back(std::move(f));
        }
        turn = std::clamp(turn + rng.normal(0.0, 0.15), -0.4, 0.4);
        ego.yaw += turn;
        const double speed = rng.uniform(5.0, 7.0);
        ego.x += speed * std::cos(ego.yaw);
        ego.y += speed * std::sin(ego.yaw);
    }
    return out;
}

std::vector<std::int32_t> warp_map(std::size_t h, std::size_t w, const RelPose& rel) {
    std::vector<std::int32_t> map(h * w, -1);
    const double ch = 0.5 * static_cast<double>(h - 1), cw = 0.5 * static_cast<double>(w - 1);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double sx, sy;
            rotate(rel.dyaw, static_cast<double>(c) - cw, static_cast<double>(r) - ch, sx, sy);
            const double fc = std::round(sx + rel.dx + cw), fr = std::round(sy + rel.dy + ch);
            if (!(fc >= 0.0 && fr >= 0.0 && fc < static_cast<double>(w) && fr < static_cast<double>(h))) continue;
            map[r * w + c] = static_cast<std::int32_t>(static_cast<std::size_t>(fr) * w + static_cast<std::size_t>(fc));
        }
    return map;
}

Var warp_to_ego(Graph& g, Var feat, const std::vector<RelPose>& rel) {
    const auto s = g.shape(feat);
    if (rel.size() != s.n) throw ShapeError("warp_to_ego: need one pose per sample");
    std::vector<std::vector<std::int32_t>> maps;
    maps.reserve(rel.size());
    for (const auto& r : rel) maps.push_back(warp_map(s.h, s.w, r));
    return nn::remap(g, feat, maps, s.h, s.w);
}

Var fuse(Graph& g, const std::vector<Var>& feats, const std::vector<Var>& prompts, Var beta) {
    if (feats.empty()) throw Error("fuse: no agent features");
    const Var mean = nn::mean_of(g, feats);
    if (prompts.empty()) return mean;
    return nn::scale_add(g, mean, beta, nn::mean_of(g, prompts));
}

Batch make_batch(const std::vector<ToyFrame>& frames, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw Error("empty batch");
    const ToyFrame& first = frames.at(indices[0]);
    const std::size_t agents = first.obs.size();
    const auto& fs = first.gt.shape();
    const std::size_t b = indices.size(), plane = fs.h * fs.w;
    Batch out;
    out.gt = Tensor4({b, 1, fs.h, fs.w});
    out.obs.assign(agents, Tensor4({b, 1, fs.h, fs.w}));
    out.rel.assign(agents, std::vector<RelPose>(b));
    for (std::size_t k = 0; k < b; ++k) {
        const ToyFrame& f = frames.at(indices[k]);
        std::copy_n(f.gt.raw(), plane, out.gt.plane(k, 0));
        for (std::size_t a = 0; a < agents; ++a) {
            std::copy_n(f.obs[a].raw(), plane, out.obs[a].plane(k, 0));
            out.rel[a][k] = relative_pose(f.poses[0], f.poses[a]);
        }
    }
    return out;
}

struct ToyPipeline::ConvBlock {
    nn::Param* kernel;
    adapt::Norm norm;
};

struct ToyPipeline::Adapters {
    std::unique_ptr<adapt::EarlyStage> early;
    std::unique_ptr<adapt::AgentPromptGenerator> prompts;
    std::unique_ptr<adapt::InjectStage> middle;
    std::unique_ptr<adapt::InjectStage> late;
    nn::Param* beta = nullptr;
};

ToyPipeline::ToyPipeline(std::size_t grid_h, std::size_t grid_w, std::size_t n_agents, std::uint64_t init_seed)
    : h_(grid_h), w_(grid_w), agents_(n_agents) {
    if (h_ < 8 || w_ < 8 || h_ % 4 != 0 || w_ % 4 != 0) throw ConfigError("pipeline grid must be >= 8 and divisible by 4");
    Rng rng(init_seed);
    const auto block = [&](const std::string& name, std::size_t cin, std::size_t cout) {
        ConvBlock b{&store_.add(name + ".conv", {cout, cin, 3, 3}), {}};
        adapt::init_conv(*b.kernel, rng);
        b.norm = adapt::Norm::create(store_, name + ".norm", cout);
        return b;
    };
    encoder_.push_back(block("enc.0", 1, kEncChannels));
    encoder_.push_back(block("enc.1", kEncChannels, kEncChannels));
    wide_.push_back(block("ms.0", kEncChannels, kWideChannels));
    wide_.push_back(block("ms.1", kWideChannels, kWideChannels));
    wide_.push_back(block("ms.2", kWideChannels, kWideChannels));
    wide_.push_back(block("ms.3", kWideChannels, kEncChannels));
    head_kernel_ = &store_.add("head.conv", {1, kEncChannels, 1, 1});
    adapt::init_conv(*head_kernel_, rng);
    head_bias_ = &store_.add("head.bias", {1, 1, 1, 1});
}

ToyPipeline::~ToyPipeline() = default;

void ToyPipeline::insert_adapters(std::uint64_t seed, const adapt::StageConfig& cfg) {
    if (adapters_) throw Error("adapters already inserted");
    cfg.validate();
    Rng rng(seed);
    auto a = std::make_unique<Adapters>();
    a->early = std::make_unique<adapt::EarlyStage>(store_, "early", kEncChannels, cfg, rng);
    a->prompts = std::make_unique<adapt::AgentPromptGenerator>(store_, "early.prompt", kEncChannels, kEncChannels, rng);
    const std::size_t k = a->early->compressor().out_channels();
    a->middle = std::make_unique<adapt::InjectStage>(store_, "middle", kEncChannels, k, cfg.n_middle, cfg.r_middle, rng);
    a->late = std::make_unique<adapt::InjectStage>(store_, "late", kEncChannels, k, cfg.n_late, cfg.r_late, rng);
    a->beta = &store_.add("fusion.beta", {1, 1, 1, 1});
    adapters_ = std::move(a);
}

bool ToyPipeline::has_adapters() const { return adapters_ != nullptr; }

void ToyPipeline::freeze_backbone() {
    for (const char* prefix : {"enc.", "ms.", "head."}) store_.set_trainable(prefix, false);
    frozen_ = true;
}

adapt::InjectStage* ToyPipeline::middle() { return adapters_ ? adapters_->middle.get() : nullptr; }
adapt::InjectStage* ToyPipeline::late() { return adapters_ ? adapters_->late.get() : nullptr; }

Var ToyPipeline::conv_block(Graph& g, const ConvBlock& b, Var x, const nn::BatchNormOptions& bn) const {
    return nn::relu(g, b.norm.apply(g, nn::conv2d(g, x, g.param(*b.kernel)), bn));
}

Var ToyPipeline::forward(Graph& g, const Batch& batch, bool training, bool update_stats) {
    if (batch.obs.size() != agents_) throw ShapeError("batch has the wrong number of agents");
    nn::BatchNormOptions abn{.update_running = update_stats};
    if (!training) abn.mode = nn::BatchNormMode::frozen;
    nn::BatchNormOptions bbn = abn;
    if (frozen_) bbn.mode = nn::BatchNormMode::frozen;
    adapt::FeatureMemory memory(agents_);
    const std::size_t mh = h_ / 2, mw = w_ / 2;
    const double scale = static_cast<double>(mw) / static_cast<double>(w_);

    std::vector<Var> early(agents_);
    for (std::size_t a = 0; a < agents_; ++a) {
        Var x = g.constant(batch.obs[a]);
        for (const auto& b : encoder_) x = conv_block(g, b, x, bbn);
        if (adapters_) x = adapters_->early->forward(g, x, a, memory, abn);
        early[a] = x;
    }

    std::vector<Var> warped(agents_), warped_prompts;
    // All agents form one group, so there is a single prompt.
    Var prompt;
    if (adapters_) {
        std::vector<std::size_t> all(agents_);
        for (std::size_t a = 0; a < agents_; ++a) all[a] = a;
        prompt = nn::avgpool2(g, adapters_->prompts->make_prompts(g, early, {all})[0]);
    }
    for (std::size_t a = 0; a < agents_; ++a) {
        Var m = conv_block(g, wide_[0], nn::avgpool2(g, early[a]), bbn);
        Var low = nn::avgpool2(g, m);
        low = conv_block(g, wide_[1], low, bbn);
        low = conv_block(g, wide_[2], low, bbn);
        m = conv_block(g, wide_[3], nn::upsample_nearest(g, low, mh, mw), bbn);
        if (adapters_) m = adapters_->middle->forward(g, m, a, memory, abn);

        std::vector<RelPose> rel = batch.rel[a];
        for (auto& r : rel) {
            r.dx *= scale;
            r.dy *= scale;
        }
        warped[a] = a == 0 ? m : warp_to_ego(g, m, rel);
        if (adapters_) warped_prompts.push_back(a == 0 ? prompt : warp_to_ego(g, prompt, rel));
    }

    Var fused = adapters_ ? fuse(g, warped, warped_prompts, g.param(*adapters_->beta)) : fuse(g, warped, {}, Var{});
    if (adapters_) fused = adapters_->late->forward(g, fused, 0, memory, abn);
    Var y = nn::upsample_nearest(g, fused, h_, w_);
    y = nn::add_bias(g, nn::conv2d(g, y, g.param(*head_kernel_)), g.param(*head_bias_));
    return nn::sigmoid(g, y);
}

double ToyPipeline::trainable_fraction() const {
    return static_cast<double>(store_.count_trainable()) / static_cast<double>(store_.count_weights());
}

std::string ToyPipeline::backbone_checkpoint() const {
    nn::ParamStore copy;
    for (std::size_t i = 0; i < store_.size(); ++i) {
        const auto& p = store_[i];
        if (p.name.rfind("enc.", 0) != 0 && p.name.rfind("ms.", 0) != 0 && p.name.rfind("head.", 0) != 0) continue;
        auto& q = p.buffer ? copy.add_buffer(p.name, p.value.shape(), 0.0) : copy.add(p.name, p.value.shape());
        q.value = p.value;
        q.trainable = p.trainable;
    }
    return nn::save_checkpoint(copy);
}

void ToyPipeline::load_backbone(const std::string& json) {
    nn::load_checkpoint(store_, json);
    frozen_ = true;
    for (const char* prefix : {"enc.", "ms.", "head."})
        for (std::size_t i = 0; i < store_.size(); ++i)
            if (store_[i].name.rfind(prefix, 0) == 0 && store_[i].trainable) frozen_ = false;
}

namespace {

double batch_loss(ToyPipeline& pipe, const Batch& batch, bool train, double lr, double momentum) {
    Graph g;
    const Var loss = nn::mse_loss(g, pipe.forward(g, batch, train), g.constant(batch.gt));
    const double value = g.value(loss)[0];
    if (train) {
        pipe.params().zero_grad();
        g.backward(loss);
        nn::sgd_step(pipe.params(), lr, momentum);
    }
    return value;
}

}  // namespace

double evaluate(ToyPipeline& pipe, const std::vector<ToyFrame>& frames, std::size_t batch) {
    double total = 0.0;
    for (std::size_t start = 0; start < frames.size(); start += batch) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(frames.size(), start + batch); ++i) idx.push_back(i);
        total += batch_loss(pipe, make_batch(frames, idx), false, 0.0, 0.0) * static_cast<double>(idx.size());
    }
    return total / static_cast<double>(frames.size());
}

PretrainResult pretrain_frozen(const SceneConfig& scene, const PretrainConfig& cfg) {
    SceneConfig src = scene;
    src.domain = DomainParams::source();
    src.duplication_factor = 1;
    src.n_frames = cfg.n_frames;
    src.world_seed = tag_seed(cfg.seed, "world");
    src.seed = tag_seed(cfg.seed, "stream");
    const Stream stream = generate_stream(src);

    PretrainResult res;
    res.pipeline = std::make_unique<ToyPipeline>(src.grid_h, src.grid_w, src.n_agents, tag_seed(cfg.seed, "init"));
    ToyPipeline& pipe = *res.pipeline;
    res.initial_loss = evaluate(pipe, stream.frames);
    Rng order(tag_seed(cfg.seed, "batches"));
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<std::size_t> idx(cfg.batch);
        for (auto& i : idx) i = order.below(stream.frames.size());
        batch_loss(pipe, make_batch(stream.frames, idx), true, cfg.lr, cfg.momentum);
    }
    pipe.freeze_backbone();
    res.final_loss = evaluate(pipe, stream.frames);
    return res;
}

AdaptResult toy_adapt(ToyPipeline& pipe, const std::vector<ToyFrame>& train, const std::vector<ToyFrame>& eval,
                      const AdaptConfig& cfg) {
    std::vector<FrameRecord> records;
    records.reserve(train.size());
    for (const auto& f : train) records.push_back(f.record);
    const std::size_t m = budget_for_ratio(train.size(), cfg.alpha);
    const auto d = distance_matrix(extract_features(records), cfg.weights);

    AdaptResult res;
    res.selection = select_with(cfg.strategy, d, m, tag_seed(cfg.seed, "select"));
    const auto& sel = res.selection.indices;

    const auto row = [&](std::size_t step, double train_mse) {
        MetricsRow r;
        r.strategy = std::string(to_string(cfg.strategy));
        r.alpha = cfg.alpha;
        r.seed = cfg.seed;
        r.step = step;
        r.train_mse = train_mse;
        r.eval_mse = evaluate(pipe, eval);
        r.coverage_radius = res.selection.coverage_radius;
        r.trainable_fraction = pipe.trainable_fraction();
        res.rows.push_back(r);
    };
    row(0, std::numeric_limits<double>::quiet_NaN());

    Rng order(tag_seed(cfg.seed, "batches"));
    double acc = 0.0;
    std::size_t since = 0;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        std::vector<std::size_t> idx(cfg.batch);
        for (auto& i : idx) i = sel[order.below(sel.size())];
        acc += batch_loss(pipe, make_batch(train, idx), true, cfg.lr, cfg.momentum);
        ++since;
        if (step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0)) {
            row(step, acc / static_cast<double>(since));
            acc = 0.0;
            since = 0;
        }
    }
    res.final_eval_mse = res.rows.back().eval_mse;
    return res;
}

std::uint64_t experiment_seed(std::uint64_t base, std::size_t k) { return derive_seed(base, k); }

namespace {

struct SeedData {
    Stream train, eval;
};

SeedData streams_for(const ExperimentConfig& cfg, std::uint64_t seed) {
    SceneConfig scene = preset(cfg.preset);
    scene.n_frames = cfg.train_frames;
    scene.domain = cfg.target;
    scene.world_seed = tag_seed(seed, "world");
    scene.seed = tag_seed(seed, "train");
    SceneConfig held = scene;
    held.duplication_factor = 1;
    held.n_frames = cfg.eval_frames;
    held.seed = tag_seed(seed, "eval");
    return {generate_stream(scene), generate_stream(held)};
}

std::unique_ptr<ToyPipeline> fresh_pipeline(const ExperimentConfig& cfg, const std::string& backbone,
                                            std::uint64_t seed) {
    const SceneConfig scene = preset(cfg.preset);
    auto pipe = std::make_unique<ToyPipeline>(scene.grid_h, scene.grid_w, scene.n_agents, 0);
    pipe->load_backbone(backbone);
    pipe->freeze_backbone();
    pipe->insert_adapters(tag_seed(seed, "adapters"));
    return pipe;
}

}  // namespace

std::vector<MetricsRow> run_experiment(const ExperimentConfig& cfg) {
    budget_for_ratio(cfg.train_frames, cfg.alpha);
    const auto pre = pretrain_frozen(preset(cfg.preset), cfg.pretrain);
    const std::string backbone = pre.pipeline->backbone_checkpoint();
    std::vector<MetricsRow> rows;
    for (std::size_t k = 0; k < cfg.seeds; ++k) {
        const std::uint64_t seed = experiment_seed(cfg.base_seed, k);
        const SeedData data = streams_for(cfg, seed);
        for (Strategy s : cfg.strategies) {
            auto pipe = fresh_pipeline(cfg, backbone, seed);
            AdaptConfig ac = cfg.adapt;
            ac.strategy = s;
            ac.alpha = cfg.alpha;
            ac.seed = seed;
            auto res = toy_adapt(*pipe, data.train.frames, data.eval.frames, ac);
            rows.insert(rows.end(), res.rows.begin(), res.rows.end());
        }
    }
    return rows;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::vector<double>& ratios) {
    if (ratios.empty()) throw ConfigError("sweep needs at least one ratio");
    std::vector<double> sorted = ratios;
    std::sort(sorted.begin(), sorted.end());
    for (double r : sorted) budget_for_ratio(cfg.train_frames, r);
    const auto pre = pretrain_frozen(preset(cfg.preset), cfg.pretrain);
    const std::string backbone = pre.pipeline->backbone_checkpoint();
    std::vector<SweepRow> rows;
    for (std::size_t k = 0; k < cfg.seeds; ++k) {
        const std::uint64_t seed = experiment_seed(cfg.base_seed, k);
        const SeedData data = streams_for(cfg, seed);
        for (Strategy s : cfg.strategies) {
            const auto run = [&](double ratio) {
                auto pipe = fresh_pipeline(cfg, backbone, seed);
                AdaptConfig ac = cfg.adapt;
                ac.strategy = s;
                ac.alpha = ratio;
                ac.seed = seed;
                ac.eval_every = 0;
                return toy_adapt(*pipe, data.train.frames, data.eval.frames, ac);
            };
            std::vector<SweepRow> block;
            std::optional<double> full;
            for (double r : sorted) {
                const auto res = run(r);
                block.push_back({std::string(to_string(s)), seed, r, res.selection.coverage_radius, res.final_eval_mse, 0.0});
                if (r == 1.0) full = res.final_eval_mse;
            }
            if (!full) full = run(1.0).final_eval_mse;
            double plateau = std::numeric_limits<double>::quiet_NaN();
            for (const auto& b : block)
                if (std::abs(b.eval_mse - *full) <= 0.05 * *full) {
                    plateau = b.ratio;
                    break;
                }
            for (auto& b : block) b.plateau_ratio = plateau;
            rows.insert(rows.end(), block.begin(), block.end());
        }
    }
    return rows;
}

}  // namespace flowsel::toy
