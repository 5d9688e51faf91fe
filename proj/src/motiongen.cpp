#include "progip/motiongen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "progip/errors.hpp"

namespace progip {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Band-limited noise: a few sinusoids with random slow frequencies.
class SmoothNoise {
public:
    SmoothNoise(std::mt19937_64& rng, double amplitude, double max_hz) {
        std::uniform_real_distribution<double> f(0.05, max_hz);
        std::uniform_real_distribution<double> p(0.0, kTwoPi);
        std::uniform_real_distribution<double> a(0.3, 1.0);
        double total = 0.0;
        for (auto& c : comps_) {
            c = {f(rng), p(rng), a(rng)};
            total += c.amp;
        }
        for (auto& c : comps_) c.amp *= amplitude / total;
    }
    double operator()(double t) const {
        double v = 0.0;
        for (const auto& c : comps_) v += c.amp * std::sin(kTwoPi * c.hz * t + c.phase);
        return v;
    }

private:
    struct Comp {
        double hz, phase, amp;
    };
    std::array<Comp, 4> comps_{};
};

double smoothstep(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3.0 - 2.0 * x);
}

/// Sum of smooth bumps at random times: 0 at rest, up to 1 during an event.
class Events {
public:
    Events(std::mt19937_64& rng, double duration, double rate_hz) {
        std::exponential_distribution<double> gap(rate_hz);
        std::uniform_real_distribution<double> len(0.8, 2.5);
        for (double t = gap(rng); t < duration; t += gap(rng)) {
            const double l = len(rng);
            bumps_.push_back({t, l});
            t += l;
        }
    }
    double operator()(double t) const {
        double v = 0.0;
        for (const auto& b : bumps_) {
            const double u = (t - b.start) / b.length;
            if (u > 0.0 && u < 1.0) v = std::max(v, std::sin(std::numbers::pi * u) * smoothstep(4.0 * u));
        }
        return v;
    }

private:
    struct Bump {
        double start, length;
    };
    std::vector<Bump> bumps_;
};

}  // namespace

MotionSequence generate_motion(const SkeletonModel& skel, const MotionGenOptions& opts) {
    if (opts.frames < 1) throw TooShort("generate_motion: frames must be >= 1");
    if (!(opts.framerate > 0.0)) throw ShapeMismatch("generate_motion: framerate must be positive");
    if (!skel.has_smpl_topology()) throw ShapeMismatch("generate_motion: skeleton lacks SMPL joint names");

    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double duration = opts.frames / opts.framerate;

    const double gait_hz = 0.75 + 0.45 * uni(rng);
    const SmoothNoise gait_mod(rng, 0.15, 0.2);
    const SmoothNoise stride_env(rng, 0.5, 0.08);
    const double hip_amp = (0.25 + 0.3 * uni(rng)) * opts.stride;
    const double knee_amp = (0.5 + 0.5 * uni(rng)) * opts.stride;
    const double arm_swing = (0.2 + 0.35 * uni(rng)) * opts.stride;
    const double arm_down = 1.0 + 0.35 * uni(rng);

    const SmoothNoise yaw_rate(rng, 0.8, 0.1);
    const SmoothNoise pelvis_pitch(rng, 0.08, 0.4);
    const SmoothNoise pelvis_roll(rng, 0.06, 0.4);
    const SmoothNoise spine_bend(rng, 0.12, 0.3);
    const SmoothNoise spine_side(rng, 0.08, 0.3);
    const SmoothNoise spine_twist(rng, 0.1, 0.3);
    const SmoothNoise head_yaw(rng, 0.6, 0.35);
    const SmoothNoise head_pitch(rng, 0.25, 0.35);
    const SmoothNoise collar_l(rng, 0.1, 0.3);
    const SmoothNoise collar_r(rng, 0.1, 0.3);
    const SmoothNoise hip_abd(rng, 0.08, 0.3);

    const Events raise_l(rng, duration, 0.15);
    const Events raise_r(rng, duration, 0.15);
    const Events bend_l(rng, duration, 0.25);
    const Events bend_r(rng, duration, 0.25);
    const Events crouch(rng, duration, 0.05);
    const double raise_amt = 1.2 + 0.8 * uni(rng);
    const double bend_amt = 1.0 + 0.8 * uni(rng);

    MotionSequence seq(opts.frames, opts.framerate);
    seq.subject = opts.subject;
    seq.label = opts.label;

    auto set = [&](int t, const char* joint, const RotMatrix& r) {
        seq.set_axis_angle(t, skel.index_of(joint), rot_to_axis_angle(r));
    };

    double phase = kTwoPi * uni(rng);
    double yaw = kTwoPi * uni(rng);
    const double dt = 1.0 / opts.framerate;
    for (int t = 0; t < opts.frames; ++t) {
        const double s = t * dt;
        const double env = std::clamp(0.6 + stride_env(s), 0.0, 1.0);
        const double c = crouch(s);
        const double sw = std::sin(phase);

        set(t, "Pelvis", rot_y(yaw) * rot_x(pelvis_pitch(s) + 0.3 * c) * rot_z(pelvis_roll(s) + 0.05 * env * sw));
        set(t, "Spine1", rot_x(spine_bend(s) / 3.0) * rot_z(spine_side(s) / 3.0) * rot_y(spine_twist(s) / 3.0 - 0.05 * env * sw));
        set(t, "Spine2", rot_x(spine_bend(s) / 3.0) * rot_z(spine_side(s) / 3.0) * rot_y(spine_twist(s) / 3.0));
        set(t, "Spine3", rot_x(spine_bend(s) / 3.0) * rot_z(spine_side(s) / 3.0) * rot_y(spine_twist(s) / 3.0));
        set(t, "Neck", rot_y(head_yaw(s) / 2.0) * rot_x(head_pitch(s) / 2.0));
        set(t, "Head", rot_y(head_yaw(s) / 2.0) * rot_x(head_pitch(s) / 2.0));
        set(t, "L_Collar", rot_z(collar_l(s) + 0.2 * raise_l(s)));
        set(t, "R_Collar", rot_z(-collar_r(s) - 0.2 * raise_r(s)));

        // Arms hang from the T-pose, swing against the same-side leg, and lift during raise events.
        const double lift_l = raise_amt * raise_l(s);
        const double lift_r = raise_amt * raise_r(s);
        set(t, "L_Shoulder", rot_x(arm_swing * env * sw * (1.0 - raise_l(s))) * rot_z(-(arm_down - lift_l)));
        set(t, "R_Shoulder", rot_x(-arm_swing * env * sw * (1.0 - raise_r(s))) * rot_z(arm_down - lift_r));
        set(t, "L_Elbow", rot_y(-(0.15 + bend_amt * bend_l(s) + 0.1 * env * (1 + sw))));
        set(t, "R_Elbow", rot_y(0.15 + bend_amt * bend_r(s) + 0.1 * env * (1 - sw)));

        set(t, "L_Hip", rot_x(-hip_amp * env * sw - 0.8 * c) * rot_z(hip_abd(s)));
        set(t, "R_Hip", rot_x(hip_amp * env * sw - 0.8 * c) * rot_z(-hip_abd(s)));
        set(t, "L_Knee", rot_x(knee_amp * env * std::max(0.0, std::sin(phase - 1.2)) + 1.2 * c));
        set(t, "R_Knee", rot_x(knee_amp * env * std::max(0.0, std::sin(phase + std::numbers::pi - 1.2)) + 1.2 * c));

        phase += kTwoPi * gait_hz * (1.0 + gait_mod(s)) * dt;
        yaw += yaw_rate(s) * env * dt;
    }
    return seq;
}

}  // namespace progip
