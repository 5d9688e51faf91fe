#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "progip/motion.hpp"
#include "progip/skeleton.hpp"

namespace progip {

inline constexpr int kFeaturesPerSensor = 15;
inline constexpr int kInputDim = kSensors * kFeaturesPerSensor;
inline constexpr double kDefaultAccScale = 30.0;

using ImuSequence = std::vector<ImuFrame>;

/// Per-frame network input, frames x 45, rows laid out per sensor as
/// [acc / acc_scale (3), rot 6D (6), angular velocity 6D (6)].
using FeatureRows = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SensorPlacement {
    std::array<std::string, kSensors> joints = {"Head", "L_Wrist", "R_Wrist"};

    /// Throws std::out_of_range when a sensor joint is missing.
    [[nodiscard]] std::array<int, kSensors> indices(const SkeletonModel& skel) const;
};

struct SynthOptions {
    /// Half-width of the second-difference stencil, in frames.
    int span = 1;
    /// Add the reaction to gravity (y-up world) as a real accelerometer would.
    bool gravity = false;
};

inline const Vec3 kGravity{0.0, -9.81, 0.0};

/// Sensor orientations from FK, accelerations by central second difference of
/// FK sensor positions. Boundary frames copy the nearest interior value.
/// Throws TooShort below 2 * span + 1 frames (3 with the default span).
ImuSequence synthesize_imu(const SkeletonModel& skel, std::span<const FullPose> motion,
                           const SensorPlacement& placement, double dt, const SynthOptions& opts = {});
ImuSequence synthesize_imu(const SkeletonModel& skel, const MotionSequence& motion,
                           const SensorPlacement& placement, const SynthOptions& opts = {});

/// One 45-wide feature row. `prev` is the previous frame, or null for the
/// first frame (identity angular velocity).
void feature_row(const ImuFrame& cur, const ImuFrame* prev, double acc_scale, double* out);

/// The first frame uses an identity angular velocity.
FeatureRows build_input(std::span<const ImuFrame> frames, double acc_scale = kDefaultAccScale);

/// Mean acceleration per sensor.
std::array<Vec3, kSensors> mean_acc(std::span<const ImuFrame> frames);

/// Shifts each sensor's acceleration so its sequence mean equals `target`.
ImuSequence acc_bias_align(std::span<const ImuFrame> frames, const std::array<Vec3, kSensors>& target);

/// rot' = G * rot * C_s, acc' = G * acc.
struct Calibration {
    RotMatrix global = RotMatrix::Identity();
    std::array<RotMatrix, kSensors> sensor = {RotMatrix::Identity(), RotMatrix::Identity(), RotMatrix::Identity()};

    [[nodiscard]] Calibration inverse() const;
};

ImuSequence align_global_frame(std::span<const ImuFrame> frames, const Calibration& cal);
ImuFrame align_global_frame(const ImuFrame& frame, const Calibration& cal);

/// T-pose calibration from frames captured while the wearer holds the rest pose
/// facing forward. G removes the head sensor's heading about the vertical (y)
/// axis; C_s maps each averaged sensor orientation to the identity rest-pose
/// bone orientation. Throws TooShort on an empty capture.
Calibration calibrate_tpose(std::span<const ImuFrame> rest_frames);

}  // namespace progip
