#pragma once

// Synthetic multi-agent scenes on a smooth random occupancy field, a small
// frozen-backbone perception pipeline over them, and the selection-driven
// adaptation experiment.

#include "flowsel/adapt.hpp"
#include "flowsel/features.hpp"
#include "flowsel/sampler.hpp"
#include "flowsel/tensor.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace flowsel::toy {

using nn::Graph;
using nn::Tensor4;
using nn::Var;

/// How observations are rendered from the occupancy field.
struct DomainParams {
    double frequency = 1.0;  ///< multiplies every spatial frequency of the field
    double noise_std = 0.05;
    double contrast = 1.0;
    double bias = 0.0;
    double drift = 0.0;  ///< relative swing of contrast and bias along the stream

    static DomainParams source();
    static DomainParams target();
};

struct SceneConfig {
    std::size_t grid_h = 16, grid_w = 16;
    std::size_t n_agents = 3;
    std::size_t n_frames = 200;  ///< total frames, duplicates included
    std::size_t duplication_factor = 1;
    DomainParams domain = DomainParams::target();
    std::uint64_t world_seed = 1;  ///< the field
    std::uint64_t seed = 1;        ///< trajectories, jitter, noise
    double cell_m = 0.4;
    double step_s = 0.5;       ///< time between trajectory steps
    double duplicate_s = 0.02;  ///< time between duplicates of one step
    double visibility = 6.0;  ///< observation radius in cells

    /// Throws ConfigError.
    void validate() const;
};

/// "redundancy" (duplication 5) or "plain" (duplication 1), target domain.
SceneConfig preset(const std::string& name);

/// Position in grid cells, heading in radians.
struct Pose2 {
    double x = 0.0, y = 0.0, yaw = 0.0;
};

/// Maps an ego grid cell q (relative to the grid center, x = column,
/// y = row) to the source cell R(dyaw) q + (dx, dy), in grid units.
struct RelPose {
    double dx = 0.0, dy = 0.0, dyaw = 0.0;
};

/// Transform from ego grid coordinates into other's grid coordinates.
RelPose relative_pose(const Pose2& ego, const Pose2& other);

struct ToyFrame {
    std::vector<Tensor4> obs;  ///< per agent, (1, 1, H, W)
    std::vector<Pose2> poses;  ///< per agent; agent 0 is the ego
    Tensor4 gt;                ///< ego occupancy (1, 1, H, W), values in [0, 1]
    FrameRecord record;
};

struct Stream {
    std::vector<ToyFrame> frames;
    std::vector<FrameRecord> manifest;
};

Stream generate_stream(const SceneConfig& cfg);

/// Flat nearest-neighbour index map for remap(); -1 marks cells whose
/// source falls outside the grid.
std::vector<std::int32_t> warp_map(std::size_t h, std::size_t w, const RelPose& rel);

/// One pose per sample of feat.
Var warp_to_ego(Graph& g, Var feat, const std::vector<RelPose>& rel);

/// mean(feats) + beta * mean(prompts). beta is a one-element value; prompts
/// may be empty (beta is then unused).
Var fuse(Graph& g, const std::vector<Var>& feats, const std::vector<Var>& prompts, Var beta);

struct Batch {
    std::vector<Tensor4> obs;                 ///< per agent, (B, 1, H, W)
    std::vector<std::vector<RelPose>> rel;    ///< per agent, per sample (ego grid -> agent grid)
    Tensor4 gt;                               ///< (B, 1, H, W)
};

Batch make_batch(const std::vector<ToyFrame>& frames, const std::vector<std::size_t>& indices);

/// Encoder (2 conv blocks) -> early stage -> multi-scale encoder -> middle
/// stage -> warp to ego -> fusion -> late stage -> 1x1 head -> sigmoid.
/// Stages and prompts exist only after insert_adapters().
class ToyPipeline {
public:
    ToyPipeline(std::size_t grid_h, std::size_t grid_w, std::size_t n_agents, std::uint64_t init_seed);
    ~ToyPipeline();
    ToyPipeline(const ToyPipeline&) = delete;
    ToyPipeline& operator=(const ToyPipeline&) = delete;

    /// Registers fresh adapters, prompts, injectors and the fusion weight.
    void insert_adapters(std::uint64_t seed, const adapt::StageConfig& cfg = {});
    bool has_adapters() const;

    /// Marks the encoder, multi-scale encoder and head as frozen.
    void freeze_backbone();
    bool backbone_frozen() const { return frozen_; }

    /// Occupancy prediction (B, 1, H, W). Frozen parts always use stored
    /// normalization statistics; trainable parts use batch statistics when
    /// training, and update their running statistics only if update_stats.
    Var forward(Graph& g, const Batch& batch, bool training, bool update_stats = true);

    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    double trainable_fraction() const;

    adapt::InjectStage* middle();
    adapt::InjectStage* late();

    /// JSON checkpoint of the backbone (encoders and head) only.
    std::string backbone_checkpoint() const;
    void load_backbone(const std::string& json);

    std::size_t feature_channels() const { return kEncChannels; }

    static constexpr std::size_t kEncChannels = 8;
    static constexpr std::size_t kWideChannels = 64;

private:
    struct ConvBlock;
    struct Adapters;

    Var conv_block(Graph& g, const ConvBlock& b, Var x, const nn::BatchNormOptions& bn) const;

    std::size_t h_, w_, agents_;
    nn::ParamStore store_;
    std::vector<ConvBlock> encoder_;
    std::vector<ConvBlock> wide_;
    nn::Param* head_kernel_;
    nn::Param* head_bias_;
    std::unique_ptr<Adapters> adapters_;
    bool frozen_ = false;
};

struct PretrainConfig {
    std::size_t steps = 300;
    std::size_t batch = 4;
    double lr = 0.05;
    double momentum = 0.9;
    std::size_t n_frames = 160;
    std::uint64_t seed = 7;
};

/// Trains the adapter-free pipeline on a source-domain stream, then freezes
/// it. Returns the pipeline and its source loss before/after training.
struct PretrainResult {
    std::unique_ptr<ToyPipeline> pipeline;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};
PretrainResult pretrain_frozen(const SceneConfig& scene, const PretrainConfig& cfg);

struct AdaptConfig {
    Strategy strategy = Strategy::wgs;
    double alpha = 0.2;
    std::size_t steps = 100;
    std::size_t batch = 4;
    double lr = 0.05;
    double momentum = 0.9;
    std::size_t eval_every = 25;
    std::uint64_t seed = 0;  ///< adapter init, batch order, random selection
    WeightVector weights{};
};

struct MetricsRow {
    std::string strategy;
    double alpha = 0.0;
    std::uint64_t seed = 0;
    std::size_t step = 0;
    double train_mse = 0.0;  ///< mean batch loss since the previous row (NaN at step 0)
    double eval_mse = 0.0;
    double coverage_radius = 0.0;
    double trainable_fraction = 0.0;
};

struct AdaptResult {
    SelectionResult selection;
    std::vector<MetricsRow> rows;
    double final_eval_mse = 0.0;
};

/// Mean squared error of the pipeline over frames (inference mode).
double evaluate(ToyPipeline& pipe, const std::vector<ToyFrame>& frames, std::size_t batch = 8);

/// Selects floor(alpha * n) training frames with the strategy, then runs SGD
/// on the trainable parameters only.
AdaptResult toy_adapt(ToyPipeline& pipe, const std::vector<ToyFrame>& train, const std::vector<ToyFrame>& eval,
                      const AdaptConfig& cfg);

/// Everything needed to reproduce a toy experiment.
struct ExperimentConfig {
    std::string preset = "redundancy";
    std::vector<Strategy> strategies{Strategy::wgs};
    double alpha = 0.2;
    std::size_t seeds = 1;
    std::uint64_t base_seed = 0;
    std::size_t train_frames = 100;
    std::size_t eval_frames = 32;
    DomainParams target = DomainParams::target();
    AdaptConfig adapt{};
    PretrainConfig pretrain{};
};

/// Pretrains once, then for every seed builds the target streams and runs
/// each strategy from the same pipeline state. Row blocks are ordered by
/// seed, then strategy.
std::vector<MetricsRow> run_experiment(const ExperimentConfig& cfg);

struct SweepRow {
    std::string strategy;
    std::uint64_t seed = 0;
    double ratio = 0.0;
    double coverage_radius = 0.0;
    double eval_mse = 0.0;
    double plateau_ratio = 0.0;  ///< per seed: first ratio within 5% of the full-data eval_mse
};

/// Runs the experiment at every ratio. The full-data reference run at ratio
/// 1.0 is added when the list lacks it (and not reported as a row).
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::vector<double>& ratios);

/// Seed of stream/adapters for experiment seed index k.
std::uint64_t experiment_seed(std::uint64_t base, std::size_t k);

}  // namespace flowsel::toy
