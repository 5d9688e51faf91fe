#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "progip/errors.hpp"
#include "progip/export.hpp"
#include "support/tempdir.hpp"
#include "support/test_util.hpp"

using namespace progip;
using progip::testing::random_dof_pose;
using progip::testing::random_rotation;
using progip::testing::TempDir;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::vector<double> numbers_of(const std::string& line) {
    std::istringstream is(line);
    std::vector<double> v;
    double x;
    while (is >> x) v.push_back(x);
    return v;
}

}  // namespace

TEST_CASE("ZXY Euler angles rebuild the rotation") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        const RotMatrix r = random_rotation(rng);
        const Vec3 e = bvh_euler_zxy_deg(r);
        const RotMatrix back = rot_z(e.x() * kDeg) * rot_x(e.y() * kDeg) * rot_y(e.z() * kDeg);
        CHECK((back - r).norm() < 1e-9);
    }
    for (double s : {1.0, -1.0}) {
        const RotMatrix r = rot_z(0.4) * rot_x(s * std::numbers::pi / 2) * rot_y(0.3);
        const Vec3 e = bvh_euler_zxy_deg(r);
        CHECK((rot_z(e.x() * kDeg) * rot_x(e.y() * kDeg) * rot_y(e.z() * kDeg) - r).norm() < 1e-9);
    }
    CHECK(bvh_euler_zxy_deg(rot_x(0.5)).y() == doctest::Approx(0.5 / kDeg));
}

TEST_CASE("identity pose exports zero channels") {
    const auto skel = SkeletonModel::default_smpl();
    const std::vector<PoseFrame> frames{{0, 0.0, FullPose::identity()}, {1, 1.0 / 60, FullPose::identity()}};
    std::ostringstream os;
    write_bvh(os, skel, frames, 60.0);
    const std::string text = os.str();
    CHECK(text.rfind("HIERARCHY\nROOT Pelvis\n", 0) == 0);
    std::istringstream is(text);
    std::string line;
    int joints = 0, end_sites = 0, channels = 0;
    std::vector<std::string> motion;
    bool in_motion = false;
    while (std::getline(is, line)) {
        if (line.find("JOINT ") != std::string::npos) ++joints;
        if (line.find("End Site") != std::string::npos) ++end_sites;
        if (auto p = line.find("CHANNELS "); p != std::string::npos) channels += std::stoi(line.substr(p + 9));
        if (in_motion) motion.push_back(line);
        if (line.rfind("Frame Time:", 0) == 0) in_motion = true;
    }
    CHECK(joints == 23);
    CHECK(end_sites == 5);  // head, hands, feet
    CHECK(channels == 6 + 3 * 23);
    CHECK(text.find("Frames: 2\n") != std::string::npos);
    CHECK(text.find("Frame Time: 0.01666667\n") != std::string::npos);
    REQUIRE(motion.size() == 2);
    for (const auto& m : motion) {
        const auto v = numbers_of(m);
        CHECK(v.size() == 6 + 3 * 24 - 3);
        for (double x : v) CHECK(x == 0.0);
        CHECK(m.find('-') == std::string::npos);
    }
}

TEST_CASE("BVH channels follow the hierarchy order") {
    const auto skel = SkeletonModel::default_smpl();
    FullPose p = FullPose::identity();
    p.local_rot[skel.index_of("R_Knee")] = rot_x(0.25);
    const std::vector<PoseFrame> frames{{0, 0.0, p}};
    std::ostringstream os;
    write_bvh(os, skel, frames, 30.0);
    // locate R_Knee's position among JOINT declarations
    std::istringstream is(os.str());
    std::string line, last;
    int order = 0, knee = -1;
    while (std::getline(is, line)) {
        if (line.find("ROOT ") != std::string::npos || line.find("JOINT ") != std::string::npos) {
            if (line.find("R_Knee") != std::string::npos) knee = order;
            ++order;
        }
        last = line;
    }
    REQUIRE(knee > 0);
    const auto v = numbers_of(last);
    CHECK(v[3 + 3 * knee + 1] == doctest::Approx(0.25 / kDeg).epsilon(1e-6));
}

TEST_CASE("JSONL round-trip") {
    const auto skel = SkeletonModel::default_smpl();
    std::mt19937_64 rng(7);
    std::vector<PoseFrame> frames;
    for (int i = 0; i < 5; ++i) frames.push_back({i + 29, (i + 29) / 60.0, random_dof_pose(skel, rng)});
    TempDir dir;
    write_jsonl(dir / "out.jsonl", frames);
    const auto back = read_jsonl(dir / "out.jsonl");
    REQUIRE(back.size() == frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        CHECK(back[i].frame == frames[i].frame);
        CHECK(back[i].t == frames[i].t);
        for (int j = 0; j < kSmplJoints; ++j) {
            CHECK((back[i].pose.local_rot[j] - frames[i].pose.local_rot[j]).cwiseAbs().maxCoeff() <= 1e-6);
        }
    }
    CHECK_THROWS_AS(parse_jsonl_line("{\"frame\": 1}"), FormatError);
}

TEST_CASE("empty streams are refused") {
    const auto skel = SkeletonModel::default_smpl();
    TempDir dir;
    CHECK_THROWS_AS(write_jsonl(dir / "a.jsonl", {}), IoError);
    CHECK_THROWS_AS(write_bvh(dir / "a.bvh", skel, {}, 60.0), IoError);
    CHECK_FALSE(std::filesystem::exists(dir / "a.bvh"));
}
