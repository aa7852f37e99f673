#include "flowsel/adapt.hpp"

#include "flowsel/error.hpp"

#include <algorithm>
#include <cmath>

namespace flowsel::adapt {

void init_normal(Param& p, Rng& rng, double std) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.normal(0.0, std);
}

void init_conv(Param& p, Rng& rng) {
    const auto& s = p.value.shape();
    const double fan_in = static_cast<double>(s.c * s.h * s.w);
    init_normal(p, rng, std::sqrt(2.0 / fan_in));
}

Norm Norm::create(ParamStore& store, const std::string& prefix, std::size_t channels) {
    const nn::Shape s{1, channels, 1, 1};
    Norm n;
    n.scale = &store.add(prefix + ".scale", s);
    n.scale->value.fill(1.0);
    n.shift = &store.add(prefix + ".shift", s);
    n.mean = &store.add_buffer(prefix + ".running_mean", s, 0.0);
    n.var = &store.add_buffer(prefix + ".running_var", s, 1.0);
    return n;
}

Var Norm::apply(Graph& g, Var x, const nn::BatchNormOptions& opt) const {
    return nn::batchnorm(g, x, g.param(*scale), g.param(*shift), *mean, *var, opt);
}

void StageConfig::validate() const {
    if (n_early != 3 || n_middle != 1 || n_late != 1)
        throw ConfigError("stage block counts must be (3, 1, 1)");
    if (!(r_early >= 1.0 && r_early < r_middle && r_middle < r_late) || !std::isfinite(r_late))
        throw ConfigError("compression ratios must satisfy 1 <= r_early < r_middle < r_late");
}

std::size_t reduced_channels(std::size_t c, double r) {
    if (!(r >= 1.0)) throw ConfigError("compression ratio must be >= 1");
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(static_cast<double>(c) / r)));
}

GatingCoefficient::GatingCoefficient(ParamStore& store, const std::string& prefix)
    : raw_(&store.add(prefix + ".alpha_raw", {1, 1, 1, 1})) {}

Var GatingCoefficient::alpha(Graph& g) const {
    return nn::affine(g, nn::sigmoid(g, g.param(*raw_)), 0.1, 0.4);
}

double GatingCoefficient::value() const {
    if (forced_zero_) return 0.0;
    Graph g;
    return g.value(alpha(g))[0];
}

CompressorBlock::CompressorBlock(ParamStore& store, const std::string& prefix, std::size_t channels, double r,
                                 Rng& rng)
    : in_(channels), out_(reduced_channels(channels, r)) {
    conv_ = &store.add(prefix + ".conv", {out_, in_, 3, 3});
    init_conv(*conv_, rng);
    norm_ = Norm::create(store, prefix + ".norm", out_);
}

Var CompressorBlock::forward(Graph& g, Var x, const nn::BatchNormOptions& bn) const {
    const auto& s = g.shape(x);
    if (s.h < 2 || s.w < 2) throw ShapeError("compressor needs spatial dims >= 2, got " + s.str());
    if (s.c != in_) throw ShapeError("compressor expects " + std::to_string(in_) + " channels, got " + s.str());
    Var h = nn::conv2d(g, nn::avgpool2(g, x), g.param(*conv_));
    return nn::relu(g, norm_.apply(g, h, bn));
}

InjectorBlock::InjectorBlock(ParamStore& store, const std::string& prefix, std::size_t k_channels,
                             std::size_t target_channels, Rng& rng)
    : k_(k_channels), target_(target_channels) {
    conv1_ = &store.add(prefix + ".conv1", {k_, k_, 3, 3});
    init_conv(*conv1_, rng);
    norm_ = Norm::create(store, prefix + ".norm", k_);
    conv2_ = &store.add(prefix + ".conv2", {target_, k_, 3, 3});
    init_conv(*conv2_, rng);
}

Var InjectorBlock::attention(Graph& g, Var kc, std::size_t h, std::size_t w, const nn::BatchNormOptions& bn) const {
    Var x = nn::upsample_nearest(g, kc, h, w);
    x = nn::relu(g, norm_.apply(g, nn::conv2d(g, x, g.param(*conv1_)), bn));
    return nn::sigmoid(g, nn::conv2d(g, x, g.param(*conv2_)));
}

Var inject(Graph& g, Var f, Var kc, const InjectorBlock& injector, const GatingCoefficient& gate,
           const nn::BatchNormOptions& bn) {
    const auto s = g.shape(f);
    if (s.c != injector.target_channels())
        throw ShapeError("injector produces " + std::to_string(injector.target_channels()) +
                         " channels for features " + s.str());
    if (gate.forced_zero()) return f;
    const Var a = injector.attention(g, kc, s.h, s.w, bn);
    const Var ones = g.constant(nn::Tensor4(g.shape(a), 1.0));
    return nn::mul(g, f, nn::scale_add(g, ones, gate.alpha(g), a));
}

DualPathAdapter::DualPathAdapter(ParamStore& store, const std::string& prefix, std::size_t channels, double r,
                                 Rng& rng)
    : channels_(channels) {
    const std::size_t mid = reduced_channels(channels, r);
    dw1_ = &store.add(prefix + ".spatial.dw1", {channels, 1, 3, 3});
    init_conv(*dw1_, rng);
    norm_ = Norm::create(store, prefix + ".spatial.norm", channels);
    dw2_ = &store.add(prefix + ".spatial.dw2", {channels, 1, 3, 3});
    down_ = &store.add(prefix + ".channel.down", {mid, channels, 1, 1});
    init_conv(*down_, rng);
    up_ = &store.add(prefix + ".channel.up", {channels, mid, 1, 1});
    logits_ = &store.add(prefix + ".logits", {1, 2, 1, 1});
}

Var DualPathAdapter::spatial(Graph& g, Var x, const nn::BatchNormOptions& bn) const {
    Var h = nn::conv2d(g, x, g.param(*dw1_), channels_);
    h = nn::relu(g, norm_.apply(g, h, bn));
    return nn::conv2d(g, h, g.param(*dw2_), channels_);
}

Var DualPathAdapter::channel(Graph& g, Var x) const {
    return nn::conv2d(g, nn::relu(g, nn::conv2d(g, x, g.param(*down_))), g.param(*up_));
}

Var DualPathAdapter::forward(Graph& g, Var x, const nn::BatchNormOptions& bn) const {
    if (g.shape(x).c != channels_)
        throw ShapeError("adapter expects " + std::to_string(channels_) + " channels, got " + g.shape(x).str());
    const auto [ws, wc] = weights(g);
    const Var sp = nn::scale(g, spatial(g, x, bn), ws);
    const Var ch = nn::scale(g, channel(g, x), wc);
    return nn::add(g, x, nn::add(g, sp, ch));
}

std::pair<Var, Var> DualPathAdapter::weights(Graph& g) const {
    // The larger weight is taken as 1 - smaller so the pair sums to exactly 1.
    const Var w = nn::softmax_channels(g, g.param(*logits_));
    if (g.value(w)[0] <= g.value(w)[1]) {
        const Var ws = nn::pick(g, w, 0);
        return {ws, nn::affine(g, ws, 1.0, -1.0)};
    }
    const Var wc = nn::pick(g, w, 1);
    return {nn::affine(g, wc, 1.0, -1.0), wc};
}

std::pair<double, double> DualPathAdapter::fusion_weights() const {
    Graph g;
    const auto [ws, wc] = weights(g);
    return {g.value(ws)[0], g.value(wc)[0]};
}

std::vector<Param*> DualPathAdapter::params() const {
    return {dw1_, norm_.scale, norm_.shift, dw2_, down_, up_, logits_};
}

AgentPromptGenerator::AgentPromptGenerator(ParamStore& store, const std::string& prefix, std::size_t channels,
                                           std::size_t prompt_channels, Rng& rng)
    : channels_(channels) {
    proj_ = &store.add(prefix + ".proj", {prompt_channels, channels, 1, 1});
    init_conv(*proj_, rng);
}

std::vector<Var> AgentPromptGenerator::make_prompts(Graph& g, const std::vector<Var>& feats,
                                                    const std::vector<std::vector<std::size_t>>& groups) const {
    std::vector<int> seen(feats.size(), 0);
    std::vector<Var> out;
    for (const auto& members : groups) {
        if (members.empty()) throw InvalidGrouping("empty agent group");
        std::vector<std::size_t> sorted = members;
        std::sort(sorted.begin(), sorted.end());
        std::vector<Var> xs;
        for (std::size_t a : sorted) {
            if (a >= feats.size()) throw InvalidGrouping("agent " + std::to_string(a) + " does not exist");
            if (seen[a]++) throw InvalidGrouping("agent " + std::to_string(a) + " is in more than one group");
            if (g.shape(feats[a]).c != channels_) throw ShapeError("prompt input has the wrong channel count");
            xs.push_back(feats[a]);
        }
        out.push_back(nn::conv2d(g, nn::mean_of(g, xs), g.param(*proj_)));
    }
    for (std::size_t a = 0; a < seen.size(); ++a)
        if (!seen[a]) throw InvalidGrouping("agent " + std::to_string(a) + " is not in any group");
    return out;
}

void FeatureMemory::write(Graph& g, std::size_t agent, Var early, const CompressorBlock& compressor,
                          const nn::BatchNormOptions& bn) {
    if (agent >= slots_.size()) throw Error("memory slot " + std::to_string(agent) + " out of range");
    slots_[agent] = compressor.forward(g, nn::detach(g, early), bn);
}

Var FeatureMemory::read(std::size_t agent) const {
    if (!has(agent)) throw StageOrderError("feature memory for agent " + std::to_string(agent) + " is empty");
    return *slots_[agent];
}

void FeatureMemory::clear() {
    for (auto& s : slots_) s.reset();
}

namespace {

std::vector<DualPathAdapter> make_blocks(ParamStore& store, const std::string& prefix, std::size_t channels,
                                         std::size_t n, double r, Rng& rng) {
    std::vector<DualPathAdapter> b;
    for (std::size_t i = 0; i < n; ++i) b.emplace_back(store, prefix + ".block" + std::to_string(i), channels, r, rng);
    return b;
}

const StageConfig& validated(const StageConfig& cfg) {
    cfg.validate();
    return cfg;
}

}  // namespace

EarlyStage::EarlyStage(ParamStore& store, const std::string& prefix, std::size_t channels, const StageConfig& cfg,
                       Rng& rng)
    : blocks_(make_blocks(store, prefix, channels, validated(cfg).n_early, cfg.r_early, rng)),
      compressor_(store, prefix + ".compressor", channels, cfg.r_early, rng) {}

Var EarlyStage::adapt(Graph& g, Var f, const nn::BatchNormOptions& bn) const {
    for (const auto& b : blocks_) f = b.forward(g, f, bn);
    return f;
}

Var EarlyStage::forward(Graph& g, Var f, std::size_t agent, FeatureMemory& memory,
                        const nn::BatchNormOptions& bn) const {
    const Var adapted = adapt(g, f, bn);
    memory.write(g, agent, adapted, compressor_, bn);
    return adapted;
}

InjectStage::InjectStage(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t k_channels,
                         std::size_t n_blocks, double r, Rng& rng)
    : blocks_(make_blocks(store, prefix, channels, n_blocks, r, rng)),
      injector_(store, prefix + ".injector", k_channels, channels, rng),
      gate_(store, prefix) {}

Var InjectStage::forward(Graph& g, Var f, std::size_t agent, const FeatureMemory& memory,
                         const nn::BatchNormOptions& bn) const {
    const Var kc = memory.read(agent);
    for (const auto& b : blocks_) f = b.forward(g, f, bn);
    return inject(g, f, kc, injector_, gate_, bn);
}

std::size_t count_prefix(const ParamStore& store, const std::string& prefix) {
    std::size_t total = 0;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const Param& p = store[i];
        if (!p.buffer && p.name.compare(0, prefix.size(), prefix) == 0) total += p.value.size();
    }
    return total;
}

}  // namespace flowsel::adapt
