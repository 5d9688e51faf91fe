#pragma once

#include <vector>

#include "progip/metrics.hpp"
#include "progip/progressive.hpp"
#include "progip/training.hpp"

namespace progip {

/// Poses for frames [first_frame, first_frame + poses.size()); frames without a
/// full window around them are not predicted.
struct SequencePrediction {
    int first_frame = 0;
    std::vector<FullPose> poses;
};

SequencePrediction predict_sequence(const ProgIPModel& model, const FeatureRows& x);

/// Per-frame errors of the model on one sequence, over the predicted frames.
std::vector<FrameErrors> evaluate_model(const ProgIPModel& model, const MotionSequence& seq, const JointMask& mask,
                                        const ClipOptions& opts = {});

/// Same frames scored against the identity (rest) pose.
std::vector<FrameErrors> evaluate_rest_pose(const SkeletonModel& skel, const MotionSequence& seq,
                                            const PipelineConfig& cfg, const JointMask& mask);

}  // namespace progip
