#include "progip/export.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <string_view>

#include <json.hpp>

#include "progip/errors.hpp"

namespace progip {

using nlohmann::json;

std::string jsonl_line(const PoseFrame& f) {
    json pose = json::array();
    for (const auto& r : f.pose.local_rot) {
        const AxisAngle aa = rot_to_axis_angle(r);
        pose.push_back({aa.x(), aa.y(), aa.z()});
    }
    return json{{"frame", f.frame}, {"t", f.t}, {"pose", pose}}.dump();
}

PoseFrame parse_jsonl_line(const std::string& line) {
    PoseFrame f;
    try {
        const json j = json::parse(line);
        f.frame = j.at("frame").get<long>();
        f.t = j.at("t").get<double>();
        for (const auto& v : j.at("pose")) {
            const auto a = v.get<std::array<double, 3>>();
            f.pose.local_rot.push_back(axis_angle_to_rot(AxisAngle(a[0], a[1], a[2])));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("pose line: ") + e.what());
    }
    return f;
}

void write_jsonl(const std::filesystem::path& path, std::span<const PoseFrame> frames) {
    if (frames.empty()) throw IoError("refusing to export an empty pose stream");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& f : frames) out << jsonl_line(f) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<PoseFrame> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<PoseFrame> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(parse_jsonl_line(line));
    }
    return out;
}

Vec3 bvh_euler_zxy_deg(const RotMatrix& r) {
    // R = Rz(a) Rx(b) Ry(c); r(2,1) = sin b.
    const double b = std::asin(std::clamp(r(2, 1), -1.0, 1.0));
    double a = 0.0;
    double c = 0.0;
    if (std::abs(r(2, 1)) < 1.0 - 1e-12) {
        a = std::atan2(-r(0, 1), r(1, 1));
        c = std::atan2(-r(2, 0), r(2, 2));
    } else {
        // Gimbal lock: fold everything into the Z angle.
        a = std::atan2(r(1, 0), r(0, 0));
    }
    const double k = 180.0 / std::numbers::pi;
    return {a * k, b * k, c * k};
}

namespace {

void emit_joint(std::ostream& out, const SkeletonModel& skel, int j, int depth) {
    const std::string pad(2 * depth, ' ');
    const Vec3 o = skel.offset(j) * 100.0;
    char buf[128];
    if (j == skel.root()) {
        out << "ROOT " << skel.name(j) << "\n{\n";
        std::snprintf(buf, sizeof buf, "  OFFSET %.6f %.6f %.6f\n", o.x(), o.y(), o.z());
        out << buf << "  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation\n";
    } else {
        out << pad << "JOINT " << skel.name(j) << '\n' << pad << "{\n";
        std::snprintf(buf, sizeof buf, "%s  OFFSET %.6f %.6f %.6f\n", pad.c_str(), o.x(), o.y(), o.z());
        out << buf << pad << "  CHANNELS 3 Zrotation Xrotation Yrotation\n";
    }
    const auto kids = skel.children(j);
    if (kids.empty()) {
        out << pad << "  End Site\n" << pad << "  {\n" << pad << "    OFFSET 0.000000 0.000000 0.000000\n" << pad << "  }\n";
    }
    for (int c : kids) emit_joint(out, skel, c, depth + 1);
    out << pad << "}\n";
}

/// Joints in the depth-first order the hierarchy section lists them.
void dfs_order(const SkeletonModel& skel, int j, std::vector<int>& order) {
    order.push_back(j);
    for (int c : skel.children(j)) dfs_order(skel, c, order);
}

}  // namespace

void write_bvh(std::ostream& out, const SkeletonModel& skel, std::span<const PoseFrame> frames, double framerate) {
    if (frames.empty()) throw IoError("refusing to export an empty pose stream");
    if (!(framerate > 0.0)) throw IoError("BVH export needs a positive framerate");
    out << "HIERARCHY\n";
    emit_joint(out, skel, skel.root(), 0);
    std::vector<int> order;
    dfs_order(skel, skel.root(), order);

    char buf[64];
    out << "MOTION\nFrames: " << frames.size() << '\n';
    std::snprintf(buf, sizeof buf, "Frame Time: %.8f\n", 1.0 / framerate);
    out << buf;
    for (const auto& f : frames) {
        if (static_cast<int>(f.pose.local_rot.size()) != skel.num_joints()) {
            throw ShapeMismatch("BVH export: pose joint count differs from skeleton");
        }
        std::string line = "0.000000 0.000000 0.000000";
        for (int j : order) {
            const Vec3 e = bvh_euler_zxy_deg(f.pose.local_rot[j]);
            std::snprintf(buf, sizeof buf, " %.6f %.6f %.6f", e.x() + 0.0, e.y() + 0.0, e.z() + 0.0);
            line += buf;
        }
        out << line << '\n';
    }
}

void write_bvh(const std::filesystem::path& path, const SkeletonModel& skel, std::span<const PoseFrame> frames,
               double framerate) {
    if (frames.empty()) throw IoError("refusing to export an empty pose stream");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    write_bvh(out, skel, frames, framerate);
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace progip
