#include "progip/imusynth.hpp"

#include <cmath>

#include "progip/errors.hpp"

namespace progip {

std::array<int, kSensors> SensorPlacement::indices(const SkeletonModel& skel) const {
    std::array<int, kSensors> idx{};
    for (int s = 0; s < kSensors; ++s) idx[s] = skel.index_of(joints[s]);
    return idx;
}

ImuSequence synthesize_imu(const SkeletonModel& skel, std::span<const FullPose> motion,
                           const SensorPlacement& placement, double dt, const SynthOptions& opts) {
    if (!(dt > 0.0)) throw ShapeMismatch("synthesize_imu: dt must be positive");
    if (opts.span < 1) throw ShapeMismatch("synthesize_imu: span must be >= 1");
    const int n = static_cast<int>(motion.size());
    const int k = opts.span;
    if (n < 2 * k + 1) throw TooShort("synthesize_imu: need at least " + std::to_string(2 * k + 1) + " frames");

    const auto idx = placement.indices(skel);
    std::vector<std::array<Vec3, kSensors>> pos(n);
    ImuSequence out(n);
    for (int t = 0; t < n; ++t) {
        const FkResult fk = forward_kinematics(skel, motion[t]);
        for (int s = 0; s < kSensors; ++s) {
            pos[t][s] = fk.positions[idx[s]];
            out[t].rot[s] = fk.global_rot[idx[s]];
        }
    }

    const double h2 = (k * dt) * (k * dt);
    for (int t = k; t < n - k; ++t) {
        for (int s = 0; s < kSensors; ++s) out[t].acc[s] = (pos[t - k][s] + pos[t + k][s] - 2.0 * pos[t][s]) / h2;
    }
    for (int t = 0; t < k; ++t) out[t].acc = out[k].acc;
    for (int t = n - k; t < n; ++t) out[t].acc = out[n - k - 1].acc;

    if (opts.gravity) {
        for (auto& f : out) {
            for (auto& a : f.acc) a -= kGravity;
        }
    }
    return out;
}

ImuSequence synthesize_imu(const SkeletonModel& skel, const MotionSequence& motion, const SensorPlacement& placement,
                           const SynthOptions& opts) {
    std::vector<FullPose> poses(motion.n_frames());
    for (int t = 0; t < motion.n_frames(); ++t) poses[t] = motion.full_pose(t);
    return synthesize_imu(skel, poses, placement, 1.0 / motion.framerate, opts);
}

void feature_row(const ImuFrame& cur, const ImuFrame* prev, double acc_scale, double* out) {
    for (int s = 0; s < kSensors; ++s) {
        double* o = out + s * kFeaturesPerSensor;
        const RotMatrix w = prev ? angular_velocity(prev->rot[s], cur.rot[s]) : RotMatrix::Identity();
        const Rot6D r6 = rot_to_6d(cur.rot[s]);
        const Rot6D w6 = rot_to_6d(w);
        for (int k = 0; k < 3; ++k) o[k] = cur.acc[s](k) / acc_scale;
        for (int k = 0; k < 6; ++k) o[3 + k] = r6(k);
        for (int k = 0; k < 6; ++k) o[9 + k] = w6(k);
    }
}

FeatureRows build_input(std::span<const ImuFrame> frames, double acc_scale) {
    if (!(acc_scale > 0.0)) throw ShapeMismatch("build_input: acc_scale must be positive");
    const int n = static_cast<int>(frames.size());
    FeatureRows x(n, kInputDim);
    for (int t = 0; t < n; ++t) feature_row(frames[t], t == 0 ? nullptr : &frames[t - 1], acc_scale, x.row(t).data());
    return x;
}

std::array<Vec3, kSensors> mean_acc(std::span<const ImuFrame> frames) {
    if (frames.empty()) throw TooShort("mean_acc: empty sequence");
    std::array<Vec3, kSensors> m;
    for (int s = 0; s < kSensors; ++s) {
        m[s].setZero();
        for (const auto& f : frames) m[s] += f.acc[s];
        m[s] /= static_cast<double>(frames.size());
    }
    return m;
}

ImuSequence acc_bias_align(std::span<const ImuFrame> frames, const std::array<Vec3, kSensors>& target) {
    const auto m = mean_acc(frames);
    ImuSequence out(frames.begin(), frames.end());
    for (auto& f : out) {
        for (int s = 0; s < kSensors; ++s) f.acc[s] = f.acc[s] - m[s] + target[s];
    }
    return out;
}

Calibration Calibration::inverse() const {
    Calibration inv;
    inv.global = global.transpose();
    for (int s = 0; s < kSensors; ++s) inv.sensor[s] = sensor[s].transpose();
    return inv;
}

ImuFrame align_global_frame(const ImuFrame& frame, const Calibration& cal) {
    ImuFrame out;
    for (int s = 0; s < kSensors; ++s) {
        out.rot[s] = cal.global * frame.rot[s] * cal.sensor[s];
        out.acc[s] = cal.global * frame.acc[s];
    }
    return out;
}

ImuSequence align_global_frame(std::span<const ImuFrame> frames, const Calibration& cal) {
    ImuSequence out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(align_global_frame(f, cal));
    return out;
}

Calibration calibrate_tpose(std::span<const ImuFrame> rest_frames) {
    if (rest_frames.empty()) throw TooShort("calibrate_tpose: no rest frames");
    std::array<RotMatrix, kSensors> mean;
    for (int s = 0; s < kSensors; ++s) {
        Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
        for (const auto& f : rest_frames) acc += f.rot[s];
        mean[s] = orthonormalize(acc);
    }
    // Heading of the head sensor's forward (+z) axis about the vertical.
    const Vec3 fwd = mean[0].col(2);
    const double heading = std::atan2(fwd.x(), fwd.z());

    Calibration cal;
    cal.global = rot_y(-heading);
    for (int s = 0; s < kSensors; ++s) cal.sensor[s] = (cal.global * mean[s]).transpose();
    return cal;
}

}  // namespace progip
