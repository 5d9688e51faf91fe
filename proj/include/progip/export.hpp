#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "progip/skeleton.hpp"

namespace progip {

struct PoseFrame {
    long frame = 0;
    double t = 0.0;  // seconds
    FullPose pose;
};

/// {"frame": i, "t": seconds, "pose": [24 x 3 axis-angle]} on one line.
std::string jsonl_line(const PoseFrame& f);
PoseFrame parse_jsonl_line(const std::string& line);

/// Throw IoError on an empty stream or a write failure.
void write_jsonl(const std::filesystem::path& path, std::span<const PoseFrame> frames);
void write_bvh(const std::filesystem::path& path, const SkeletonModel& skel, std::span<const PoseFrame> frames,
               double framerate);
void write_bvh(std::ostream& out, const SkeletonModel& skel, std::span<const PoseFrame> frames, double framerate);

std::vector<PoseFrame> read_jsonl(const std::filesystem::path& path);

/// Z, X, Y Euler angles in degrees such that R = Rz * Rx * Ry.
Vec3 bvh_euler_zxy_deg(const RotMatrix& r);

}  // namespace progip
