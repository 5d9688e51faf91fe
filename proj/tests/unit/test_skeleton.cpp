#include <doctest.h>

#include <functional>
#include <numbers>
#include <random>
#include <set>

#include "progip/errors.hpp"
#include "progip/skeleton.hpp"
#include "support/test_util.hpp"

using namespace progip;
using progip::testing::random_dof_pose;
using progip::testing::random_full_pose;
using progip::testing::random_rotation;

namespace {

// Naive recursive FK: walks the ancestry of every joint from scratch.
RotMatrix oracle_global(const SkeletonModel& s, const FullPose& p, int j) {
    if (s.parent(j) < 0) return p.local_rot[j];
    return oracle_global(s, p, s.parent(j)) * p.local_rot[j];
}

Vec3 oracle_position(const SkeletonModel& s, const FullPose& p, int j) {
    if (s.parent(j) < 0) return Vec3::Zero();
    return oracle_position(s, p, s.parent(j)) + oracle_global(s, p, s.parent(j)) * s.offset(j);
}

}  // namespace

TEST_CASE("default asset has SMPL topology") {
    const auto skel = SkeletonModel::default_smpl();
    CHECK(skel.num_joints() == 24);
    CHECK(skel.has_smpl_topology());
    CHECK(skel.name(skel.root()) == "Pelvis");
    for (int j = 1; j < skel.num_joints(); ++j) CHECK(skel.parent(j) < j);
    CHECK(skel.name(skel.parent(skel.index_of("L_Elbow"))) == "L_Shoulder");
    CHECK(skel.name(skel.parent(skel.index_of("Head"))) == "Neck");
}

TEST_CASE("skeleton validation") {
    CHECK_THROWS_AS(SkeletonModel({"a", "b"}, {-1, -1}, {Vec3::Zero(), Vec3::Zero()}), FormatError);
    CHECK_THROWS_AS(SkeletonModel({"a", "b"}, {-1, 1}, {Vec3::Zero(), Vec3::Zero()}), FormatError);
    CHECK_THROWS_AS(SkeletonModel({"a", "a"}, {-1, 0}, {Vec3::Zero(), Vec3::Zero()}), FormatError);
    CHECK_THROWS_AS(SkeletonModel({"a"}, {-1}, {Vec3(NAN, 0, 0)}), FormatError);
    CHECK_THROWS_AS(SkeletonModel::from_json_text(R"({"names": ["a"], "parents": [-1], "offsets": [[0,0,0]]})"),
                    FormatError);
    CHECK_THROWS_AS(SkeletonModel::from_json_text("{"), FormatError);
}

TEST_CASE("region partition") {
    const auto skel = SkeletonModel::default_smpl();
    auto names_in = [&](Region r) {
        std::set<std::string> out;
        for (int j = 0; j < skel.num_joints(); ++j) {
            if (skel.region(j) == r) out.insert(skel.name(j));
        }
        return out;
    };
    CHECK(names_in(Region::D1) == std::set<std::string>{"Pelvis", "Spine1", "Spine2", "Spine3"});
    CHECK(names_in(Region::D2) == std::set<std::string>{"Neck", "R_Collar", "L_Collar"});
    CHECK(names_in(Region::D3) ==
          std::set<std::string>{"Head", "R_Shoulder", "L_Shoulder", "R_Elbow", "L_Elbow"});
    CHECK(names_in(Region::D4) == std::set<std::string>{"R_Hip", "L_Hip", "R_Knee", "L_Knee"});
    CHECK(names_in(Region::None) == std::set<std::string>{"L_Wrist", "R_Wrist", "L_Hand", "R_Hand", "L_Ankle",
                                                          "R_Ankle", "L_Foot", "R_Foot"});

    // Disjoint cover of the 16 DOF joints; canonical order walks d1..d4.
    const auto& dof = skel.dof_indices();
    CHECK(std::set<int>(dof.begin(), dof.end()).size() == 16);
    int prev = 0;
    for (int j : dof) {
        const int r = static_cast<int>(skel.region(j));
        CHECK(r >= prev);
        prev = r;
    }
}

TEST_CASE("forward_kinematics") {
    const auto skel = SkeletonModel::default_smpl();

    SUBCASE("identity pose accumulates rest offsets") {
        const auto fk = forward_kinematics(skel, FullPose::identity());
        for (int j = 0; j < skel.num_joints(); ++j) {
            Vec3 sum = Vec3::Zero();
            for (int k = j; skel.parent(k) >= 0; k = skel.parent(k)) sum += skel.offset(k);
            CHECK((fk.positions[j] - sum).norm() < 1e-15);
            CHECK(fk.global_rot[j] == RotMatrix::Identity());
        }
    }

    SUBCASE("two-joint chain") {
        const SkeletonModel chain({"a", "b"}, {-1, 0}, {Vec3::Zero(), Vec3(1, 0, 0)});
        FullPose p = FullPose::identity(2);
        p.local_rot[0] = rot_z(std::numbers::pi / 2);
        const auto fk = forward_kinematics(chain, p);
        CHECK((fk.positions[1] - Vec3(0, 1, 0)).norm() < 1e-15);
    }

    SUBCASE("random poses match the recursive oracle") {
        std::mt19937_64 rng(11);
        double worst = 0.0;
        for (int i = 0; i < 500; ++i) {
            const FullPose p = random_full_pose(rng);
            const auto fk = forward_kinematics(skel, p);
            for (int j = 0; j < skel.num_joints(); ++j) {
                worst = std::max(worst, (fk.positions[j] - oracle_position(skel, p, j)).cwiseAbs().maxCoeff());
                worst = std::max(worst, (fk.global_rot[j] - oracle_global(skel, p, j)).cwiseAbs().maxCoeff());
            }
        }
        CHECK(worst <= 1e-9);
    }

    SUBCASE("bone lengths, orthonormality and global equivariance") {
        std::mt19937_64 rng(12);
        for (int i = 0; i < 200; ++i) {
            FullPose p = random_full_pose(rng);
            const auto fk = forward_kinematics(skel, p);
            for (int j = 1; j < skel.num_joints(); ++j) {
                const double bone = (fk.positions[j] - fk.positions[skel.parent(j)]).norm();
                REQUIRE(std::abs(bone - skel.offset(j).norm()) <= 1e-9);
                REQUIRE(is_rotation(fk.global_rot[j], 1e-9));
            }
            const RotMatrix g = random_rotation(rng);
            p.local_rot[0] = g * p.local_rot[0];
            const auto rotated = forward_kinematics(skel, p);
            for (int j = 0; j < skel.num_joints(); ++j) {
                REQUIRE((rotated.positions[j] - g * fk.positions[j]).cwiseAbs().maxCoeff() <= 1e-9);
            }
        }
    }
}

TEST_CASE("expand_reduced / reduce_full") {
    const auto skel = SkeletonModel::default_smpl();

    const FullPose id = expand_reduced(skel, ReducedPose::identity());
    for (const auto& r : id.local_rot) CHECK(r == RotMatrix::Identity());

    ReducedPose pelvis_only = ReducedPose::identity();
    const RotMatrix g = rot_y(0.7);
    pelvis_only.set_joint(0, rot_to_6d(g));
    const FullPose pf = expand_reduced(skel, pelvis_only);
    CHECK((pf.local_rot[skel.index_of("Pelvis")] - g).cwiseAbs().maxCoeff() < 1e-15);
    for (int j = 1; j < 24; ++j) CHECK(pf.local_rot[j] == RotMatrix::Identity());

    const ReducedPose ri = reduce_full(skel, FullPose::identity());
    for (int k = 0; k < kDofJoints; ++k) CHECK(ri.joint(k) == identity_6d());

    FullPose single = FullPose::identity();
    single.local_rot[skel.index_of("L_Knee")] = rot_x(0.5);
    const ReducedPose rs = reduce_full(skel, single);
    CHECK(rs.joint(14) == rot_to_6d(rot_x(0.5)));
    CHECK(rs.joint(15) == identity_6d());

    std::mt19937_64 rng(13);
    for (int i = 0; i < 200; ++i) {
        ReducedPose p;
        for (int k = 0; k < kDofJoints; ++k) p.set_joint(k, rot_to_6d(random_rotation(rng)));
        const ReducedPose back = reduce_full(skel, expand_reduced(skel, p));
        REQUIRE((back.v - p.v).cwiseAbs().maxCoeff() <= 1e-9);
    }

    // Non-DOF joints are dropped by reduce and restored as identity.
    FullPose wrist = FullPose::identity();
    wrist.local_rot[skel.index_of("L_Wrist")] = rot_z(1.0);
    const FullPose e = expand_reduced(skel, reduce_full(skel, wrist));
    CHECK(e.local_rot[skel.index_of("L_Wrist")] == RotMatrix::Identity());
}

TEST_CASE("subchain_fk") {
    const auto skel = SkeletonModel::default_smpl();

    SUBCASE("torso identities give cumulative spine offsets") {
        const auto joints = chain_stage_joints(skel, ChainStage::Torso);
        CHECK(joints.size() == 4);
        const std::vector<RotMatrix> rots(joints.size(), RotMatrix::Identity());
        const auto out = subchain_fk(skel, joints, rots);
        const auto full = forward_kinematics(skel, FullPose::identity());
        for (std::size_t i = 0; i < out.joints.size(); ++i) {
            CHECK((out.positions[i] - full.positions[out.joints[i]]).norm() < 1e-15);
        }
        // Children of Spine3 are covered so its rotation is observable.
        CHECK(std::count(out.joints.begin(), out.joints.end(), skel.index_of("Neck")) == 1);
    }

    SUBCASE("upper body equals full FK with identity elsewhere") {
        std::mt19937_64 rng(14);
        const auto joints = chain_stage_joints(skel, ChainStage::UpperBody);
        CHECK(joints.size() == 12);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<RotMatrix> rots;
            FullPose p = FullPose::identity();
            for (int j : joints) {
                rots.push_back(random_rotation(rng));
                p.local_rot[j] = rots.back();
            }
            const auto out = subchain_fk(skel, joints, rots);
            const auto full = forward_kinematics(skel, p);
            for (std::size_t i = 0; i < out.joints.size(); ++i) {
                REQUIRE((out.positions[i] - full.positions[out.joints[i]]).cwiseAbs().maxCoeff() <= 1e-12);
            }
        }
    }

    SUBCASE("lower body with 90 degree hip flexion") {
        const auto joints = chain_stage_joints(skel, ChainStage::LowerBody);
        CHECK(joints.size() == 5);
        std::vector<RotMatrix> rots(joints.size(), RotMatrix::Identity());
        const int l_hip = skel.index_of("L_Hip");
        const int l_knee = skel.index_of("L_Knee");
        for (std::size_t i = 0; i < joints.size(); ++i) {
            if (joints[i] == l_hip) rots[i] = rot_x(std::numbers::pi / 2);
        }
        const auto out = subchain_fk(skel, joints, rots);
        // Hand-computed: knee = hip offset + Rx(90) * knee offset.
        const Vec3 o = skel.offset(l_knee);
        const Vec3 expect = skel.offset(l_hip) + Vec3(o.x(), -o.z(), o.y());
        bool found = false;
        for (std::size_t i = 0; i < out.joints.size(); ++i) {
            if (out.joints[i] == l_knee) {
                CHECK((out.positions[i] - expect).norm() < 1e-12);
                found = true;
            }
        }
        CHECK(found);
    }

    SUBCASE("rejects joint sets that are not stage prefixes") {
        std::vector<int> bad = {skel.index_of("Pelvis"), skel.index_of("Spine1")};
        std::vector<RotMatrix> rots(bad.size(), RotMatrix::Identity());
        CHECK_THROWS_AS(subchain_fk(skel, bad, rots), InvalidPrefix);
        auto lower = chain_stage_joints(skel, ChainStage::LowerBody);
        lower.push_back(skel.index_of("L_Ankle"));
        CHECK_THROWS_AS(subchain_fk(skel, lower, std::vector<RotMatrix>(lower.size(), RotMatrix::Identity())),
                        InvalidPrefix);
    }

    SUBCASE("backward matches central differences") {
        std::mt19937_64 rng(15);
        for (auto stage : {ChainStage::Torso, ChainStage::Transition, ChainStage::UpperBody, ChainStage::LowerBody}) {
            const auto joints = chain_stage_joints(skel, stage);
            std::vector<RotMatrix> rots;
            for (std::size_t i = 0; i < joints.size(); ++i) rots.push_back(random_rotation(rng));
            const auto base = subchain_fk(skel, joints, rots);
            std::vector<Vec3> w;
            for (std::size_t i = 0; i < base.joints.size(); ++i) w.push_back(progip::testing::random_6d(rng).head<3>());
            auto loss = [&](const std::vector<RotMatrix>& r) {
                const auto out = subchain_fk(skel, joints, r);
                double s = 0;
                for (std::size_t i = 0; i < out.positions.size(); ++i) s += out.positions[i].dot(w[i]);
                return s;
            };
            const auto grads = subchain_fk_backward(skel, joints, rots, w);
            for (std::size_t i = 0; i < joints.size(); ++i) {
                for (int e = 0; e < 9; ++e) {
                    auto plus = rots;
                    auto minus = rots;
                    plus[i](e) += 1e-6;
                    minus[i](e) -= 1e-6;
                    const double numeric = (loss(plus) - loss(minus)) / 2e-6;
                    REQUIRE(std::abs(numeric - grads[i](e)) <= 1e-7);
                }
            }
        }
    }
}
