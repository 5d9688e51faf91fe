#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "progip/errors.hpp"
#include "progip/imusynth.hpp"
#include "support/test_util.hpp"

using namespace progip;
using progip::testing::random_rotation;

namespace {

std::vector<FullPose> spinning(int frames, double omega, double dt) {
    std::vector<FullPose> m(frames, FullPose::identity());
    for (int t = 0; t < frames; ++t) m[t].local_rot[0] = rot_y(omega * dt * t);
    return m;
}

}  // namespace

TEST_CASE("static pose gives zero acceleration and rest orientations") {
    const auto skel = SkeletonModel::default_smpl();
    std::vector<FullPose> m(5, FullPose::identity());
    const auto imu = synthesize_imu(skel, m, {}, 1.0 / 60.0);
    REQUIRE(imu.size() == 5);
    for (const auto& f : imu) {
        for (int s = 0; s < kSensors; ++s) {
            CHECK(f.acc[s].norm() == 0.0);
            CHECK((f.rot[s] - RotMatrix::Identity()).norm() < 1e-15);
        }
    }
}

TEST_CASE("gravity option adds the upward reaction") {
    const auto skel = SkeletonModel::default_smpl();
    std::vector<FullPose> m(3, FullPose::identity());
    SynthOptions o;
    o.gravity = true;
    const auto imu = synthesize_imu(skel, m, {}, 1.0 / 60.0, o);
    for (int s = 0; s < kSensors; ++s) CHECK((imu[1].acc[s] - Vec3(0, 9.81, 0)).norm() < 1e-12);
}

TEST_CASE("uniform yaw spin matches the chord acceleration of a circle") {
    const auto skel = SkeletonModel::default_smpl();
    const double dt = 1.0 / 60.0;
    const double omega = 2.0;
    const auto m = spinning(9, omega, dt);
    const auto imu = synthesize_imu(skel, m, {}, dt);
    const auto idx = SensorPlacement{}.indices(skel);
    for (int s = 0; s < kSensors; ++s) {
        const Vec3 p0 = forward_kinematics(skel, m[4]).positions[idx[s]];
        const double r = std::hypot(p0.x(), p0.z());
        const double expect = 2.0 * r * (1.0 - std::cos(omega * dt)) / (dt * dt);
        const Vec3 a = imu[4].acc[s];
        CHECK(a.norm() == doctest::Approx(expect).epsilon(1e-9));
        CHECK(std::abs(a.y()) < 1e-9);
        // points at the spin axis
        const Vec3 inward(-p0.x(), 0.0, -p0.z());
        CHECK(a.normalized().dot(inward.normalized()) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("boundary frames copy the nearest interior acceleration") {
    const auto skel = SkeletonModel::default_smpl();
    const auto m = spinning(6, 1.5, 0.01);
    SynthOptions o;
    o.span = 2;
    const auto imu = synthesize_imu(skel, m, {}, 0.01, o);
    for (int s = 0; s < kSensors; ++s) {
        CHECK(imu[0].acc[s] == imu[2].acc[s]);
        CHECK(imu[1].acc[s] == imu[2].acc[s]);
        CHECK(imu[5].acc[s] == imu[3].acc[s]);
        CHECK(imu[4].acc[s] == imu[3].acc[s]);
    }
    CHECK_THROWS_AS(synthesize_imu(skel, spinning(4, 1.0, 0.01), {}, 0.01, o), TooShort);
    CHECK_THROWS_AS(synthesize_imu(skel, spinning(2, 1.0, 0.01), {}, 0.01), TooShort);
}

TEST_CASE("feature row layout and acceleration scaling") {
    ImuFrame f = ImuFrame::identity();
    f.acc[0] = Vec3(30.0, -60.0, 15.0);
    std::mt19937_64 rng(3);
    f.rot[1] = random_rotation(rng);
    ImuFrame prev = f;
    prev.rot[2] = random_rotation(rng);

    const std::vector<ImuFrame> seq = {prev, f};
    const FeatureRows x = build_input(seq);
    REQUIRE(x.rows() == 2);
    REQUIRE(x.cols() == 45);
    CHECK(x(1, 0) == doctest::Approx(1.0));
    CHECK(x(1, 1) == doctest::Approx(-2.0));
    CHECK(x(1, 2) == doctest::Approx(0.5));
    const Rot6D r1 = rot_to_6d(f.rot[1]);
    for (int k = 0; k < 6; ++k) CHECK(x(1, 15 + 3 + k) == r1(k));
    // sensors 0 and 1 did not turn: identity angular velocity
    for (int s = 0; s < 2; ++s) {
        for (int k = 0; k < 6; ++k) CHECK(x(1, 15 * s + 9 + k) == doctest::Approx(identity_6d()(k)).epsilon(1e-12));
    }
    const Rot6D w2 = rot_to_6d(prev.rot[2].transpose() * f.rot[2]);
    for (int k = 0; k < 6; ++k) CHECK(x(1, 30 + 9 + k) == doctest::Approx(w2(k)).epsilon(1e-12));
    // first frame has no predecessor
    for (int s = 0; s < kSensors; ++s) {
        for (int k = 0; k < 6; ++k) CHECK(x(0, 15 * s + 9 + k) == identity_6d()(k));
    }
}

TEST_CASE("bias alignment hits the target mean and is idempotent") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 3.0);
    std::vector<ImuFrame> seq(20, ImuFrame::identity());
    for (auto& f : seq) {
        for (auto& a : f.acc) a = Vec3(n(rng), n(rng), n(rng));
    }
    const std::array<Vec3, kSensors> target = {Vec3(1, 2, 3), Vec3(0, 9.81, 0), Vec3(-1, 0, 0)};
    const auto once = acc_bias_align(seq, target);
    const auto m = mean_acc(once);
    for (int s = 0; s < kSensors; ++s) CHECK((m[s] - target[s]).norm() < 1e-12);
    const auto twice = acc_bias_align(once, target);
    for (std::size_t t = 0; t < seq.size(); ++t) {
        for (int s = 0; s < kSensors; ++s) CHECK((twice[t].acc[s] - once[t].acc[s]).norm() < 1e-12);
        // fluctuations are kept
        CHECK(((once[t].acc[0] - once[0].acc[0]) - (seq[t].acc[0] - seq[0].acc[0])).norm() < 1e-12);
    }
    CHECK_THROWS_AS(mean_acc(std::span<const ImuFrame>{}), TooShort);
}

TEST_CASE("T-pose calibration undoes heading and mounting offsets") {
    const auto skel = SkeletonModel::default_smpl();
    std::mt19937_64 rng(21);
    const double dt = 1.0 / 60.0;

    // Motion in the body frame.
    std::vector<FullPose> m(12, FullPose::identity());
    for (int t = 0; t < 12; ++t) {
        m[t].local_rot[0] = rot_y(0.1 * t) * rot_x(0.05 * t);
        m[t].local_rot[skel.index_of("L_Shoulder")] = rot_z(0.08 * t);
    }
    const auto truth = synthesize_imu(skel, m, {}, dt);

    // Sensor world with a yaw offset; head mounting only rolls about its forward axis.
    const RotMatrix g0 = rot_y(0.7);
    const std::array<RotMatrix, kSensors> mount = {rot_z(0.3), random_rotation(rng), random_rotation(rng)};
    auto raw = [&](const ImuFrame& f) {
        ImuFrame o;
        for (int s = 0; s < kSensors; ++s) {
            o.rot[s] = g0.transpose() * f.rot[s] * mount[s].transpose();
            o.acc[s] = g0.transpose() * f.acc[s];
        }
        return o;
    };
    std::vector<ImuFrame> rest(10, raw(ImuFrame::identity()));
    const Calibration cal = calibrate_tpose(rest);
    for (int s = 0; s < kSensors; ++s) {
        CHECK((align_global_frame(rest[0], cal).rot[s] - RotMatrix::Identity()).norm() < 1e-10);
    }
    for (const auto& f : truth) {
        const ImuFrame back = align_global_frame(raw(f), cal);
        for (int s = 0; s < kSensors; ++s) {
            CHECK((back.rot[s] - f.rot[s]).norm() < 1e-10);
            CHECK((back.acc[s] - f.acc[s]).norm() < 1e-9);
        }
    }
    const Calibration inv = cal.inverse();
    const ImuFrame there = align_global_frame(truth[5], cal);
    const ImuFrame back = align_global_frame(there, inv);
    for (int s = 0; s < kSensors; ++s) CHECK((back.acc[s] - truth[5].acc[s]).norm() < 1e-12);
    CHECK_THROWS_AS(calibrate_tpose(std::span<const ImuFrame>{}), TooShort);
}
