#include "progip/motion.hpp"

#include <cmath>

#include "progip/errors.hpp"

namespace progip {

ImuFrame ImuFrame::identity() {
    ImuFrame f;
    for (int s = 0; s < kSensors; ++s) {
        f.acc[s] = Vec3::Zero();
        f.rot[s] = RotMatrix::Identity();
    }
    return f;
}

MotionSequence::MotionSequence(int frames, double hz) : framerate(hz), poses(PoseRows::Zero(frames, 3 * kSmplJoints)) {}

AxisAngle MotionSequence::axis_angle(int frame, int joint) const {
    return poses.block<1, 3>(frame, 3 * joint).transpose().cast<double>();
}

void MotionSequence::set_axis_angle(int frame, int joint, const AxisAngle& aa) {
    poses.block<1, 3>(frame, 3 * joint) = aa.transpose().cast<float>();
}

FullPose MotionSequence::full_pose(int frame) const {
    FullPose p;
    p.local_rot.resize(kSmplJoints);
    for (int j = 0; j < kSmplJoints; ++j) p.local_rot[j] = axis_angle_to_rot(axis_angle(frame, j));
    return p;
}

void MotionSequence::set_full_pose(int frame, const FullPose& pose) {
    if (static_cast<int>(pose.local_rot.size()) != kSmplJoints) throw ShapeMismatch("set_full_pose: expected 24 joints");
    for (int j = 0; j < kSmplJoints; ++j) set_axis_angle(frame, j, rot_to_axis_angle(pose.local_rot[j]));
}

ImuFrame MotionSequence::imu_frame(int frame) const {
    if (!has_imu()) throw FormatError("sequence has no IMU channel");
    ImuFrame f;
    for (int s = 0; s < kSensors; ++s) {
        f.acc[s] = imu_acc->block<1, 3>(frame, 3 * s).transpose().cast<double>();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) f.rot[s](r, c) = (*imu_rot)(frame, 9 * s + 3 * r + c);
        }
    }
    return f;
}

void MotionSequence::set_imu_frame(int frame, const ImuFrame& f) {
    if (!has_imu()) {
        imu_acc = PoseRows::Zero(n_frames(), 3 * kSensors);
        imu_rot = PoseRows::Zero(n_frames(), 9 * kSensors);
    }
    for (int s = 0; s < kSensors; ++s) {
        imu_acc->block<1, 3>(frame, 3 * s) = f.acc[s].transpose().cast<float>();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) (*imu_rot)(frame, 9 * s + 3 * r + c) = static_cast<float>(f.rot[s](r, c));
        }
    }
}

void MotionSequence::validate() const {
    if (!(framerate > 0.0) || !std::isfinite(framerate)) throw FormatError("framerate must be positive");
    if (poses.cols() != 3 * kSmplJoints) throw FormatError("poses must have 72 columns");
    if (!poses.allFinite()) throw NaNError("non-finite pose values");
    if (imu_acc.has_value() != imu_rot.has_value()) throw FormatError("IMU channel is incomplete");
    if (has_imu()) {
        if (imu_acc->rows() != poses.rows() || imu_rot->rows() != poses.rows()) {
            throw FormatError("IMU channel is not frame-aligned with poses");
        }
        if (imu_acc->cols() != 3 * kSensors || imu_rot->cols() != 9 * kSensors) {
            throw FormatError("IMU channel has the wrong width");
        }
        if (!imu_acc->allFinite() || !imu_rot->allFinite()) throw NaNError("non-finite IMU values");
    }
}

}  // namespace progip
