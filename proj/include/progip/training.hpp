#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "progip/imusynth.hpp"
#include "progip/motion.hpp"
#include "progip/nn/adam.hpp"
#include "progip/progressive.hpp"

namespace progip {

struct TrainConfig {
    double lambda = 0.1;
    double lr = 1e-4;
    int batch = 256;
    std::uint64_t seed = 10;
    int epochs = 1;
    /// Stops after this many optimizer steps when > 0.
    int max_steps = 0;
    int stride = 1;
    bool use_fk_loss = true;
    bool detach_between_stages = true;

    static TrainConfig paper();
    /// lr 1e-3, batch 32.
    static TrainConfig desk();
    static TrainConfig preset(const std::string& name);
    void validate() const;
};

struct StageLoss {
    double rotation = 0.0;  // non-pelvis joints
    double pelvis = 0.0;    // unweighted; total applies lambda
    double position = 0.0;  // L_b
    double total = 0.0;
};

struct LossReport {
    std::array<StageLoss, kNumNets> nets{};
    double total = 0.0;
};

using TargetRows = Eigen::Matrix<double, Eigen::Dynamic, kReducedDim, Eigen::RowMajor>;

/// Gradient of one sample's stage loss with respect to the net output row, and
/// (stage 4 with FK only) to the stage-1 pelvis used for FK.
struct StageLossGrad {
    Eigen::VectorXd d_out;
    Rot6D d_fk_pelvis = Rot6D::Zero();
};

/// Loss of net `net` for one sample. `est` is the net output at the supervised
/// frame, `target` the ground-truth reduced pose there. `fk_pelvis` is the
/// stage-1 pelvis estimate, used only by stage 4's position term.
StageLoss stage_loss(int net, const Eigen::Ref<const Eigen::VectorXd>& est, const ReducedPose& target,
                     const SkeletonModel& skel, double lambda, bool use_fk, const Rot6D& fk_pelvis = identity_6d(),
                     StageLossGrad* grad = nullptr);

/// One motion clip turned into network features and per-frame targets.
struct TrainingClip {
    FeatureRows x;       // frames x 45
    TargetRows targets;  // frames x 96
    std::string label;
};

enum class ImuSource { Synthetic, Real };

struct ClipOptions {
    ImuSource source = ImuSource::Synthetic;
    SynthOptions synth;
    /// Real IMU only: shift mean acceleration onto that of synthetic IMU from the same poses.
    bool recalibrate_acc = false;
};

TrainingClip make_clip(const SkeletonModel& skel, const MotionSequence& seq, const PipelineConfig& cfg,
                       const ClipOptions& opts = {});

struct TrainingWindow {
    int start = 0;      // first frame of the window
    int supervise = 0;  // index inside the window (N - 1)
};

/// Sliding windows over a sequence of `frames`. Throws TooShort when frames < M.
std::vector<TrainingWindow> make_training_windows(int frames, int window, int supervise_frame, int stride = 1);

struct WindowRef {
    int clip = 0;
    TrainingWindow w;
};

class Trainer {
public:
    Trainer(ProgIPModel& model, TrainConfig cfg);

    /// Forward all stages, loss at frame N, backward, Adam. Throws NonFiniteLoss
    /// before touching the weights if any loss is not finite.
    LossReport step(const std::vector<TrainingClip>& clips, const std::vector<WindowRef>& batch);

    /// Loss without an update.
    LossReport loss(const std::vector<TrainingClip>& clips, const std::vector<WindowRef>& batch) const;

    using StepCallback = std::function<void(int step, int epoch, const LossReport&)>;
    /// Shuffled epochs over every window of every clip. Returns the per-step losses.
    std::vector<LossReport> fit(const std::vector<TrainingClip>& clips, const StepCallback& on_step = {});

    [[nodiscard]] int steps() const { return steps_; }
    [[nodiscard]] const TrainConfig& config() const { return cfg_; }

private:
    LossReport run(const std::vector<TrainingClip>& clips, const std::vector<WindowRef>& batch, bool update);

    ProgIPModel& model_;
    TrainConfig cfg_;
    std::vector<nn::Adam> opt_;
    int steps_ = 0;
};

/// Continues training on real-IMU clips with the same loop; 0 epochs is a no-op.
std::vector<LossReport> fine_tune(ProgIPModel& model, const std::vector<TrainingClip>& real_clips,
                                  const TrainConfig& cfg);

/// Deterministic Fisher-Yates shuffle driven by mt19937_64.
void shuffle_windows(std::vector<WindowRef>& refs, std::uint64_t seed);

}  // namespace progip
