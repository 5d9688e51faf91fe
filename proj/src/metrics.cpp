#include "progip/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "progip/errors.hpp"

namespace progip {

JointMask JointMask::all(const SkeletonModel& skel) { return {std::vector<bool>(skel.num_joints(), true)}; }

JointMask JointMask::upper_body(const SkeletonModel& skel) {
    JointMask m{std::vector<bool>(skel.num_joints(), false)};
    for (const char* name : {"Pelvis", "Spine1", "Spine2", "Spine3", "Neck", "Head", "L_Collar", "R_Collar",
                             "L_Shoulder", "R_Shoulder", "L_Elbow", "R_Elbow", "L_Wrist", "R_Wrist", "L_Hand",
                             "R_Hand"}) {
        if (skel.has_joint(name)) m.include[skel.index_of(name)] = true;
    }
    return m;
}

int JointMask::count() const {
    int n = 0;
    for (bool b : include) n += b ? 1 : 0;
    return n;
}

double mjpe_positions_cm(std::span<const Vec3> pred, std::span<const Vec3> gt, const JointMask& mask, int pelvis) {
    if (pred.size() != gt.size() || mask.include.size() != pred.size()) {
        throw LengthMismatch("mjpe: joint counts differ");
    }
    const Vec3 shift = gt[pelvis] - pred[pelvis];
    double sum = 0.0;
    int n = 0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
        if (!mask.include[j]) continue;
        sum += (pred[j] + shift - gt[j]).norm();
        ++n;
    }
    return n == 0 ? 0.0 : 100.0 * sum / n;
}

FrameErrors frame_errors(const SkeletonModel& skel, const FullPose& pred, const FullPose& gt, const JointMask& mask) {
    const int nj = skel.num_joints();
    if (static_cast<int>(pred.local_rot.size()) != nj || static_cast<int>(gt.local_rot.size()) != nj) {
        throw LengthMismatch("frame_errors: pose joint count differs from skeleton");
    }
    if (static_cast<int>(mask.include.size()) != nj) throw LengthMismatch("frame_errors: mask size");
    const FkResult a = forward_kinematics(skel, pred);
    const FkResult b = forward_kinematics(skel, gt);

    FrameErrors e;
    double rot = 0.0;
    int n = 0;
    for (int j = 0; j < nj; ++j) {
        if (!mask.include[j]) continue;
        rot += geodesic_angle_deg(a.global_rot[j], b.global_rot[j]);
        ++n;
    }
    e.mjre_deg = n == 0 ? 0.0 : rot / n;
    e.mjre_pelvis_deg = geodesic_angle_deg(a.global_rot[skel.root()], b.global_rot[skel.root()]);
    e.mjpe_cm = mjpe_positions_cm(a.positions, b.positions, mask, skel.root());

    const Vec3 shift = b.positions[skel.root()] - a.positions[skel.root()];
    double wrist = 0.0;
    for (const char* w : {"L_Wrist", "R_Wrist"}) {
        const int j = skel.index_of(w);
        wrist += (a.positions[j] + shift - b.positions[j]).norm();
    }
    e.mjpe_wrist_cm = 100.0 * wrist / 2.0;
    return e;
}

namespace {

std::vector<FrameErrors> all_frames(std::span<const FullPose> pred, std::span<const FullPose> gt,
                                    const SkeletonModel& skel, const JointMask& mask) {
    if (pred.size() != gt.size()) {
        throw LengthMismatch("metric inputs differ in length: " + std::to_string(pred.size()) + " vs " +
                             std::to_string(gt.size()));
    }
    if (pred.empty()) throw LengthMismatch("metric inputs are empty");
    std::vector<FrameErrors> out;
    out.reserve(pred.size());
    for (std::size_t t = 0; t < pred.size(); ++t) out.push_back(frame_errors(skel, pred[t], gt[t], mask));
    return out;
}

template <typename F>
double mean_of(const std::vector<FrameErrors>& v, F f) {
    double s = 0.0;
    for (const auto& e : v) s += f(e);
    return s / static_cast<double>(v.size());
}

}  // namespace

double mjre(std::span<const FullPose> pred, std::span<const FullPose> gt, const SkeletonModel& skel,
            const JointMask& mask) {
    return mean_of(all_frames(pred, gt, skel, mask), [](const FrameErrors& e) { return e.mjre_deg; });
}

double mjre_pelvis(std::span<const FullPose> pred, std::span<const FullPose> gt, const SkeletonModel& skel) {
    return mean_of(all_frames(pred, gt, skel, JointMask::all(skel)),
                   [](const FrameErrors& e) { return e.mjre_pelvis_deg; });
}

double mjpe(std::span<const FullPose> pred, std::span<const FullPose> gt, const SkeletonModel& skel,
            const JointMask& mask) {
    return mean_of(all_frames(pred, gt, skel, mask), [](const FrameErrors& e) { return e.mjpe_cm; });
}

double mjpe_wrist(std::span<const FullPose> pred, std::span<const FullPose> gt, const SkeletonModel& skel) {
    return mean_of(all_frames(pred, gt, skel, JointMask::all(skel)),
                   [](const FrameErrors& e) { return e.mjpe_wrist_cm; });
}

MeanStd population_stats(std::span<const double> v) {
    if (v.empty()) return {};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

MeanStd sample_stats(std::span<const double> v) {
    if (v.empty()) return {};
    MeanStd p = population_stats(v);
    if (v.size() == 1) return {p.mean, 0.0};
    const double n = static_cast<double>(v.size());
    return {p.mean, p.std * std::sqrt(n / (n - 1.0))};
}

EvalReport summarize(std::span<const FrameErrors> frames, const std::string& label) {
    EvalReport r;
    r.label = label;
    r.n_frames = static_cast<int>(frames.size());
    std::vector<double> a, b, c, d;
    for (const auto& e : frames) {
        a.push_back(e.mjre_deg);
        b.push_back(e.mjre_pelvis_deg);
        c.push_back(e.mjpe_cm);
        d.push_back(e.mjpe_wrist_cm);
    }
    r.mjre_deg = population_stats(a);
    r.mjre_pelvis_deg = population_stats(b);
    r.mjpe_cm = population_stats(c);
    r.mjpe_wrist_cm = population_stats(d);
    return r;
}

EvalReport evaluate_sequence(const SkeletonModel& skel, std::span<const FullPose> pred, std::span<const FullPose> gt,
                             const JointMask& mask, const std::string& label) {
    const auto frames = all_frames(pred, gt, skel, mask);
    return summarize(frames, label);
}

MotionTable per_motion_report(std::span<const LabeledErrors> results) {
    if (results.empty()) throw LengthMismatch("per_motion_report: no results");
    std::vector<std::string> order;
    std::map<std::string, std::vector<FrameErrors>> pooled;
    for (const auto& r : results) {
        if (!pooled.count(r.label)) order.push_back(r.label);
        auto& dst = pooled[r.label];
        dst.insert(dst.end(), r.frames.begin(), r.frames.end());
    }
    MotionTable t;
    std::vector<double> a, b, c, d;
    int frames = 0;
    for (const auto& label : order) {
        t.groups.push_back(summarize(pooled[label], label));
        const auto& g = t.groups.back();
        a.push_back(g.mjre_deg.mean);
        b.push_back(g.mjre_pelvis_deg.mean);
        c.push_back(g.mjpe_cm.mean);
        d.push_back(g.mjpe_wrist_cm.mean);
        frames += g.n_frames;
    }
    t.overall.label = "overall";
    t.overall.n_frames = frames;
    t.overall.mjre_deg = sample_stats(a);
    t.overall.mjre_pelvis_deg = sample_stats(b);
    t.overall.mjpe_cm = sample_stats(c);
    t.overall.mjpe_wrist_cm = sample_stats(d);
    return t;
}

namespace {

void csv_row(std::ostream& out, const EvalReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.label.c_str(), r.n_frames,
                  r.mjre_deg.mean, r.mjre_deg.std, r.mjre_pelvis_deg.mean, r.mjre_pelvis_deg.std, r.mjpe_cm.mean,
                  r.mjpe_cm.std, r.mjpe_wrist_cm.mean, r.mjpe_wrist_cm.std);
    out << buf;
}

void table_row(std::ostream& out, const EvalReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-16s %7d  %7.2f +- %-6.2f %7.2f +- %-6.2f %7.2f +- %-6.2f %7.2f +- %-6.2f\n",
                  r.label.c_str(), r.n_frames, r.mjre_deg.mean, r.mjre_deg.std, r.mjre_pelvis_deg.mean,
                  r.mjre_pelvis_deg.std, r.mjpe_cm.mean, r.mjpe_cm.std, r.mjpe_wrist_cm.mean, r.mjpe_wrist_cm.std);
    out << buf;
}

}  // namespace

void write_csv(std::ostream& out, const MotionTable& table) {
    out << "label,frames,mjre_deg,mjre_deg_std,mjre_pelvis_deg,mjre_pelvis_deg_std,mjpe_cm,mjpe_cm_std,"
           "mjpe_wrist_cm,mjpe_wrist_cm_std\n";
    for (const auto& g : table.groups) csv_row(out, g);
    csv_row(out, table.overall);
}

void write_table(std::ostream& out, const MotionTable& table) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-16s %7s  %-16s %-16s %-16s %-16s\n", "motion", "frames", "MJRE (deg)",
                  "MJRE-Pelvis", "MJPE (cm)", "MJPE-Wrist (cm)");
    out << buf;
    for (const auto& g : table.groups) table_row(out, g);
    table_row(out, table.overall);
}

}  // namespace progip
