#pragma once

// Adapter blocks for a frozen backbone: dual-path residual adapters,
// early-stage knowledge compression, gated injection into later stages and
// group prompts. Every block registers its parameters in a ParamStore under a
// name prefix and builds its forward pass on a Graph.

#include "flowsel/ops.hpp"
#include "flowsel/rng.hpp"
#include "flowsel/tensor.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace flowsel::adapt {

using nn::Graph;
using nn::Param;
using nn::ParamStore;
using nn::Var;

/// Fills p with N(0, std^2) draws.
void init_normal(Param& p, Rng& rng, double std);

/// He-style initialization for a conv kernel (fan-in = C_in/groups * k * k).
void init_conv(Param& p, Rng& rng);

/// Channel normalization with its learned scale/shift and running buffers.
struct Norm {
    Param* scale = nullptr;
    Param* shift = nullptr;
    Param* mean = nullptr;
    Param* var = nullptr;

    static Norm create(ParamStore& store, const std::string& prefix, std::size_t channels);
    Var apply(Graph& g, Var x, const nn::BatchNormOptions& opt) const;
};

/// Adapter depth and compression ratio per stage.
struct StageConfig {
    std::size_t n_early = 3, n_middle = 1, n_late = 1;
    double r_early = 2.0, r_middle = 4.0, r_late = 8.0;

    /// Throws ConfigError unless block counts are (3, 1, 1) and
    /// 1 <= r_early < r_middle < r_late.
    void validate() const;
};

/// ceil(c / r), at least 1.
std::size_t reduced_channels(std::size_t c, double r);

/// alpha = 0.1 + 0.4 * sigmoid(raw).
class GatingCoefficient {
public:
    GatingCoefficient(ParamStore& store, const std::string& prefix);

    Var alpha(Graph& g) const;
    double value() const;
    Param& raw() const { return *raw_; }

    /// Test hook: treat alpha as exactly 0 (outside the learnable range).
    void force_zero(bool on) { forced_zero_ = on; }
    bool forced_zero() const { return forced_zero_; }

private:
    Param* raw_;
    bool forced_zero_ = false;
};

/// avgpool2 -> 3x3 conv to ceil(C/r) channels -> norm -> ReLU.
class CompressorBlock {
public:
    CompressorBlock(ParamStore& store, const std::string& prefix, std::size_t channels, double r, Rng& rng);

    /// Throws ShapeError if H or W < 2 or the channel count differs.
    Var forward(Graph& g, Var x, const nn::BatchNormOptions& bn) const;

    std::size_t in_channels() const { return in_; }
    std::size_t out_channels() const { return out_; }
    Param& conv() const { return *conv_; }
    const Norm& norm() const { return norm_; }

private:
    std::size_t in_, out_;
    Param* conv_;
    Norm norm_;
};

/// Attention from a compressed representation: nearest upsample to the
/// target grid -> 3x3 conv -> norm -> ReLU -> 3x3 conv to the target
/// channels -> sigmoid.
class InjectorBlock {
public:
    InjectorBlock(ParamStore& store, const std::string& prefix, std::size_t k_channels, std::size_t target_channels,
                  Rng& rng);

    Var attention(Graph& g, Var kc, std::size_t h, std::size_t w, const nn::BatchNormOptions& bn) const;

    std::size_t target_channels() const { return target_; }

private:
    std::size_t k_, target_;
    Param* conv1_;
    Norm norm_;
    Param* conv2_;
};

/// F * (1 + alpha * A). With the zero hook set, returns `f` itself.
Var inject(Graph& g, Var f, Var kc, const InjectorBlock& injector, const GatingCoefficient& gate,
           const nn::BatchNormOptions& bn);

/// F + w_s * spatial(F) + w_c * channel(F), (w_s, w_c) = softmax(logits).
/// Spatial: depthwise 3x3 -> norm -> ReLU -> depthwise 3x3.
/// Channel: 1x1 down to ceil(C/r) -> ReLU -> 1x1 up.
/// The last conv of each path starts at zero.
class DualPathAdapter {
public:
    DualPathAdapter(ParamStore& store, const std::string& prefix, std::size_t channels, double r, Rng& rng);

    Var forward(Graph& g, Var x, const nn::BatchNormOptions& bn) const;

    Var spatial(Graph& g, Var x, const nn::BatchNormOptions& bn) const;
    Var channel(Graph& g, Var x) const;
    std::pair<Var, Var> weights(Graph& g) const;
    std::pair<double, double> fusion_weights() const;

    Param& logits() const { return *logits_; }
    std::vector<Param*> params() const;

private:
    std::size_t channels_;
    Param* dw1_;
    Norm norm_;
    Param* dw2_;
    Param* down_;
    Param* up_;
    Param* logits_;
};

/// Per-group prompts: 1x1 projection of the mean of member features.
class AgentPromptGenerator {
public:
    AgentPromptGenerator(ParamStore& store, const std::string& prefix, std::size_t channels,
                         std::size_t prompt_channels, Rng& rng);

    /// groups[k] lists the agent indices of group k. Every agent in
    /// [0, feats.size()) must belong to exactly one group; members are
    /// averaged in ascending index order. Throws InvalidGrouping.
    std::vector<Var> make_prompts(Graph& g, const std::vector<Var>& feats,
                                  const std::vector<std::vector<std::size_t>>& groups) const;

    Param& projection() const { return *proj_; }

private:
    std::size_t channels_;
    Param* proj_;
};

/// Compressed early features per agent for one forward pass. The cut sits
/// between the early features and the compressor: readers train the
/// compressor but never reach the early stage.
class FeatureMemory {
public:
    explicit FeatureMemory(std::size_t agents) : slots_(agents) {}

    /// Stores compressor(detach(early)) for agent.
    void write(Graph& g, std::size_t agent, Var early, const CompressorBlock& compressor,
               const nn::BatchNormOptions& bn);
    /// Throws StageOrderError if nothing was written for agent.
    Var read(std::size_t agent) const;
    bool has(std::size_t agent) const { return agent < slots_.size() && slots_[agent].has_value(); }
    void clear();

private:
    std::vector<std::optional<Var>> slots_;
};

/// N_early dual-path blocks followed by the compressor feeding the memory.
class EarlyStage {
public:
    EarlyStage(ParamStore& store, const std::string& prefix, std::size_t channels, const StageConfig& cfg, Rng& rng);

    /// Returns the adapted features and fills memory[agent] from them.
    Var forward(Graph& g, Var f, std::size_t agent, FeatureMemory& memory, const nn::BatchNormOptions& bn) const;

    /// Adapted features without touching memory.
    Var adapt(Graph& g, Var f, const nn::BatchNormOptions& bn) const;

    const CompressorBlock& compressor() const { return compressor_; }
    const std::vector<DualPathAdapter>& blocks() const { return blocks_; }

private:
    std::vector<DualPathAdapter> blocks_;
    CompressorBlock compressor_;
};

/// One dual-path block, then injection of memory[agent].
class InjectStage {
public:
    InjectStage(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t k_channels,
                std::size_t n_blocks, double r, Rng& rng);

    /// Throws StageOrderError if memory[agent] is empty.
    Var forward(Graph& g, Var f, std::size_t agent, const FeatureMemory& memory, const nn::BatchNormOptions& bn) const;

    GatingCoefficient& gate() { return gate_; }
    const GatingCoefficient& gate() const { return gate_; }
    const InjectorBlock& injector() const { return injector_; }

private:
    std::vector<DualPathAdapter> blocks_;
    InjectorBlock injector_;
    GatingCoefficient gate_;
};

/// Sum of weights registered under prefix (buffers excluded).
std::size_t count_prefix(const ParamStore& store, const std::string& prefix);

}  // namespace flowsel::adapt
