#pragma once

#include <array>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "progip/rotmath.hpp"
#include "progip/skeleton.hpp"

namespace progip {

constexpr int kSensors = 3;

/// One IMU reading per sensor: acceleration (m/s^2) and global orientation.
struct ImuFrame {
    std::array<Vec3, kSensors> acc;
    std::array<RotMatrix, kSensors> rot;

    static ImuFrame identity();
};

using PoseRows = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A recorded or generated motion. Poses are axis-angle, frames x (24 * 3);
/// the pelvis entry is the global orientation. Storage is float so the
/// on-disk format round-trips bit-exactly.
struct MotionSequence {
    double framerate = 60.0;
    std::string subject;
    std::string label;
    std::string subset;

    PoseRows poses;                 // frames x 72
    std::optional<PoseRows> imu_acc;  // frames x (3 sensors * 3)
    std::optional<PoseRows> imu_rot;  // frames x (3 sensors * 9), row-major per sensor

    MotionSequence() = default;
    MotionSequence(int frames, double hz);

    [[nodiscard]] int n_frames() const { return static_cast<int>(poses.rows()); }
    [[nodiscard]] bool has_imu() const { return imu_acc.has_value(); }

    [[nodiscard]] AxisAngle axis_angle(int frame, int joint) const;
    void set_axis_angle(int frame, int joint, const AxisAngle& aa);

    [[nodiscard]] FullPose full_pose(int frame) const;
    void set_full_pose(int frame, const FullPose& pose);

    [[nodiscard]] ImuFrame imu_frame(int frame) const;
    void set_imu_frame(int frame, const ImuFrame& f);

    /// Throws NaNError / FormatError when fields are inconsistent.
    void validate() const;
};

}  // namespace progip
