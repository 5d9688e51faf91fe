#include "progip/evaluation.hpp"

#include "progip/errors.hpp"
#include "progip/runtime.hpp"

namespace progip {

SequencePrediction predict_sequence(const ProgIPModel& model, const FeatureRows& x) {
    SequencePrediction p;
    p.first_frame = model.cfg.supervise_frame - 1;
    for (const auto& r : evaluate_windows(model, x)) p.poses.push_back(decode_pose(model.skel, r));
    return p;
}

std::vector<FrameErrors> evaluate_model(const ProgIPModel& model, const MotionSequence& seq, const JointMask& mask,
                                        const ClipOptions& opts) {
    if (seq.n_frames() < model.cfg.window) {
        throw TooShort("sequence has " + std::to_string(seq.n_frames()) + " frames; the window needs " +
                       std::to_string(model.cfg.window));
    }
    const TrainingClip clip = make_clip(model.skel, seq, model.cfg, opts);
    const SequencePrediction p = predict_sequence(model, clip.x);
    std::vector<FrameErrors> out;
    out.reserve(p.poses.size());
    for (std::size_t k = 0; k < p.poses.size(); ++k) {
        out.push_back(frame_errors(model.skel, p.poses[k], seq.full_pose(p.first_frame + static_cast<int>(k)), mask));
    }
    return out;
}

std::vector<FrameErrors> evaluate_rest_pose(const SkeletonModel& skel, const MotionSequence& seq,
                                            const PipelineConfig& cfg, const JointMask& mask) {
    const int first = cfg.supervise_frame - 1;
    const int count = seq.n_frames() - cfg.window + 1;
    if (count < 1) throw TooShort("sequence is shorter than the window");
    const FullPose rest = FullPose::identity(skel.num_joints());
    std::vector<FrameErrors> out;
    for (int k = 0; k < count; ++k) out.push_back(frame_errors(skel, rest, seq.full_pose(first + k), mask));
    return out;
}

}  // namespace progip
