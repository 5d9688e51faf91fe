#pragma once

#include <cstdint>
#include <string>

#include "progip/motion.hpp"
#include "progip/skeleton.hpp"

namespace progip {

/// Procedural, seeded motion: locomotion-like leg and arm swing with turning,
/// torso sway, head turns, and occasional arm raises and elbow bends. Only the
/// 16 DOF joints move. Used for fixtures, demos and desk-scale training.
struct MotionGenOptions {
    int frames = 600;
    double framerate = 60.0;
    std::uint64_t seed = 10;
    std::string subject = "synthetic";
    std::string label = "walk";
    /// 0 = standing in place, 1 = full stride.
    double stride = 1.0;
};

MotionSequence generate_motion(const SkeletonModel& skel, const MotionGenOptions& opts);

}  // namespace progip
