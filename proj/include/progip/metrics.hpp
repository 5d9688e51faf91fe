#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "progip/skeleton.hpp"

namespace progip {

/// Joints included in MJRE/MJPE averages.
struct JointMask {
    std::vector<bool> include;

    static JointMask all(const SkeletonModel& skel);
    /// Pelvis, spine, neck, head, collars, shoulders, elbows, wrists, hands.
    static JointMask upper_body(const SkeletonModel& skel);
    [[nodiscard]] int count() const;
};

/// Errors of one frame. Rotation errors compare FK global rotations.
struct FrameErrors {
    double mjre_deg = 0.0;
    double mjre_pelvis_deg = 0.0;
    double mjpe_cm = 0.0;
    double mjpe_wrist_cm = 0.0;
};

FrameErrors frame_errors(const SkeletonModel& skel, const FullPose& pred, const FullPose& gt, const JointMask& mask);

/// Mean joint position error (cm) after translating both pelvises to a common point.
double mjpe_positions_cm(std::span<const Vec3> pred, std::span<const Vec3> gt, const JointMask& mask, int pelvis = 0);

/// Sequence means. Throw LengthMismatch on unequal lengths or empty input.
double mjre(std::span<const FullPose> pred, std::span<const FullPose> gt, const SkeletonModel& skel,
            const JointMask& mask);
double mjre_pelvis(std::span<const FullPose> pred, std::span<const FullPose> gt, const SkeletonModel& skel);
double mjpe(std::span<const FullPose> pred, std::span<const FullPose> gt, const SkeletonModel& skel,
            const JointMask& mask);
double mjpe_wrist(std::span<const FullPose> pred, std::span<const FullPose> gt, const SkeletonModel& skel);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

/// Per-frame population mean and standard deviation.
MeanStd population_stats(std::span<const double> v);
/// Mean and sample (n - 1) standard deviation; std is 0 for a single value.
MeanStd sample_stats(std::span<const double> v);

struct EvalReport {
    std::string label;
    int n_frames = 0;
    MeanStd mjre_deg, mjre_pelvis_deg, mjpe_cm, mjpe_wrist_cm;
};

/// Per-frame errors reduced to mean +- population std.
EvalReport evaluate_sequence(const SkeletonModel& skel, std::span<const FullPose> pred, std::span<const FullPose> gt,
                             const JointMask& mask, const std::string& label = "");
EvalReport summarize(std::span<const FrameErrors> frames, const std::string& label);

struct MotionTable {
    /// One row per label, in first-seen order; each row pools that label's frames.
    std::vector<EvalReport> groups;
    /// Mean of the group means with their sample standard deviation.
    EvalReport overall;
};

struct LabeledErrors {
    std::string label;
    std::vector<FrameErrors> frames;
};

MotionTable per_motion_report(std::span<const LabeledErrors> results);

void write_csv(std::ostream& out, const MotionTable& table);
void write_table(std::ostream& out, const MotionTable& table);

}  // namespace progip
