#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "progip/imusynth.hpp"
#include "progip/nn/backbone.hpp"
#include "progip/skeleton.hpp"

namespace progip {

/// Network 0 is the global rough estimator, networks 1..4 the depth-ordered stages.
inline constexpr int kNumNets = 5;
inline constexpr std::array<int, kNumNets> kNetInDim = {45, 141, 165, 183, 147};
inline constexpr std::array<int, kNumNets> kNetOutDim = {96, 24, 42, 72, 24};
/// Offset of each net's output inside the 96-dim reduced pose.
inline constexpr std::array<int, kNumNets> kNetTargetOffset = {0, 0, 0, 0, 72};

std::string net_name(int net);

/// Which stage-2 quantities feed stage 3. Fig1: [X1, pelvis2, p2]. Text: [X2, p_d2].
enum class Stage3Recipe { Fig1, Text };

struct NetSize {
    int d_model = 256;
    int tf_layers = 3;
    int heads = 8;
    int ffn_dim = 1024;
    int rnn_layers = 2;
    int rnn_width = 256;
    int decoder_hidden = 256;
    nn::NormPlacement norm = nn::NormPlacement::Post;

    static NetSize paper() { return {}; }
    /// Narrow networks for single-machine CPU training.
    static NetSize desk();
    static NetSize preset(const std::string& name);
    bool operator==(const NetSize&) const = default;
};

struct PipelineConfig {
    int window = 40;           // M
    int supervise_frame = 30;  // N, 1-based
    double acc_scale = kDefaultAccScale;
    Stage3Recipe stage3 = Stage3Recipe::Fig1;
    SensorPlacement placement;
    NetSize net;

    /// Frames of future context the emitted pose waits for (M - N).
    [[nodiscard]] int lookahead() const { return window - supervise_frame; }
    void validate() const;
};

nn::BackboneConfig net_config(const PipelineConfig& cfg, int net);

/// FNV-1a 64 over the skeleton's canonical JSON text, as 16 hex digits.
std::string skeleton_hash(const SkeletonModel& skel);

struct ProgIPModel {
    SkeletonModel skel;
    PipelineConfig cfg;
    std::array<nn::BackboneConfig, kNumNets> nets;
    std::array<nn::BackboneWeights, kNumNets> weights;

    /// Net i is initialised with seed + i.
    static ProgIPModel create(const SkeletonModel& skel, const PipelineConfig& cfg, std::uint64_t seed);

    /// Bundle directory: global.ckpt, stage1..4.ckpt, pipeline.json.
    void save(const std::filesystem::path& dir) const;
    /// Throws FormatError when the bundle's skeleton hash does not match `skel`.
    static ProgIPModel load(const std::filesystem::path& dir, const SkeletonModel& skel);

    /// Throws ShapeMismatch unless every net matches the stage dimension table.
    void audit() const;
};

nlohmann::json pipeline_to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_from_json(const nlohmann::json& j);

/// Stage inputs and outputs for `batch` stacked windows (rows b * M + t).
struct PipelineActivations {
    std::array<nn::Mat<float>, kNumNets> inputs;
    std::array<nn::Mat<float>, kNumNets> outputs;
};

/// Builds the input of `net` from the IMU features and upstream outputs.
nn::Mat<float> compose_input(const PipelineConfig& cfg, int net, const nn::Mat<float>& x,
                             const std::array<nn::Mat<float>, kNumNets>& outputs);

/// Runs all five networks in depth order. Caches are filled when supplied.
PipelineActivations run_pipeline(const ProgIPModel& model, const nn::Mat<float>& x, int batch,
                                 std::array<nn::ForwardCache<float>, kNumNets>* caches = nullptr);

/// Global rough estimate, M x 96.
nn::Mat<float> estimate_global(const ProgIPModel& model, const nn::Mat<float>& window);

/// Fused pose: stage-3 upper body (pelvis included) followed by stage-4 legs.
ReducedPose fuse(const Eigen::Ref<const Eigen::RowVectorXf>& stage3, const Eigen::Ref<const Eigen::RowVectorXf>& stage4);

/// Full pipeline on one M x 45 window; returns the fused pose at frame N.
ReducedPose run_stages(const ProgIPModel& model, const nn::Mat<float>& window);

FullPose decode_pose(const SkeletonModel& skel, const ReducedPose& reduced);

}  // namespace progip
