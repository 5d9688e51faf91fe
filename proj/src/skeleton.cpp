#include "progip/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "progip/errors.hpp"

namespace progip {

namespace {

Region region_for_name(std::string_view n) {
    if (n == "Pelvis" || n == "Spine1" || n == "Spine2" || n == "Spine3") return Region::D1;
    if (n == "Neck" || n == "R_Collar" || n == "L_Collar") return Region::D2;
    if (n == "Head" || n == "R_Shoulder" || n == "L_Shoulder" || n == "R_Elbow" || n == "L_Elbow") {
        return Region::D3;
    }
    if (n == "R_Hip" || n == "L_Hip" || n == "R_Knee" || n == "L_Knee") return Region::D4;
    return Region::None;
}

}  // namespace

SkeletonModel::SkeletonModel(std::vector<std::string> names, std::vector<int> parents, std::vector<Vec3> offsets)
    : names_(std::move(names)), parents_(std::move(parents)), offsets_(std::move(offsets)) {
    const auto n = names_.size();
    if (n == 0 || parents_.size() != n || offsets_.size() != n) {
        throw FormatError("skeleton: names/parents/offsets size mismatch");
    }
    if (parents_[0] != -1) {
        throw FormatError("skeleton: joint 0 must be the root");
    }
    for (std::size_t i = 1; i < n; ++i) {
        if (parents_[i] < 0 || parents_[i] >= static_cast<int>(i)) {
            throw FormatError("skeleton: parents must precede children and only joint 0 may be a root");
        }
    }
    for (const auto& o : offsets_) {
        if (!o.allFinite()) {
            throw FormatError("skeleton: non-finite rest offset");
        }
    }
    std::set<std::string> unique(names_.begin(), names_.end());
    if (unique.size() != n) {
        throw FormatError("skeleton: duplicate joint names");
    }

    regions_.assign(n, Region::None);
    smpl_ = std::all_of(kCanonicalDofOrder.begin(), kCanonicalDofOrder.end(),
                        [&](std::string_view name) { return has_joint(name); });
    if (smpl_) {
        for (int k = 0; k < kDofJoints; ++k) {
            dof_[k] = index_of(kCanonicalDofOrder[k]);
        }
        for (std::size_t j = 0; j < n; ++j) {
            regions_[j] = region_for_name(names_[j]);
        }
    }
}

SkeletonModel SkeletonModel::from_json_text(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("skeleton: ") + e.what());
    }
    if (!doc.contains("names") || !doc.contains("parents") || !doc.contains("offsets")) {
        throw FormatError("skeleton: missing names/parents/offsets");
    }
    try {
        auto names = doc.at("names").get<std::vector<std::string>>();
        auto parents = doc.at("parents").get<std::vector<int>>();
        std::vector<Vec3> offsets;
        for (const auto& o : doc.at("offsets")) {
            if (o.size() != 3) throw FormatError("skeleton: offsets must be 3-vectors");
            offsets.emplace_back(o[0].get<double>(), o[1].get<double>(), o[2].get<double>());
        }
        if (names.size() != kSmplJoints) {
            throw FormatError("skeleton: asset must define exactly 24 joints");
        }
        return SkeletonModel(std::move(names), std::move(parents), std::move(offsets));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("skeleton: ") + e.what());
    }
}

SkeletonModel SkeletonModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open skeleton asset " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

SkeletonModel SkeletonModel::default_smpl() {
    return load(std::filesystem::path(PROGIP_ASSET_DIR) / "smpl_skeleton.json");
}

std::vector<int> SkeletonModel::children(int j) const {
    std::vector<int> out;
    for (int i = 0; i < num_joints(); ++i) {
        if (parents_[i] == j) out.push_back(i);
    }
    return out;
}

int SkeletonModel::index_of(std::string_view name) const {
    for (int i = 0; i < num_joints(); ++i) {
        if (names_[i] == name) return i;
    }
    throw std::out_of_range("unknown joint " + std::string(name));
}

bool SkeletonModel::has_joint(std::string_view name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const std::array<int, kDofJoints>& SkeletonModel::dof_indices() const {
    if (!smpl_) {
        throw FormatError("skeleton lacks SMPL joint names");
    }
    return dof_;
}

Region SkeletonModel::region(int j) const { return regions_[j]; }

std::string SkeletonModel::to_json_text() const {
    nlohmann::json doc;
    doc["format_version"] = 1;
    doc["names"] = names_;
    doc["parents"] = parents_;
    auto offs = nlohmann::json::array();
    for (const auto& o : offsets_) offs.push_back({o.x(), o.y(), o.z()});
    doc["offsets"] = offs;
    return doc.dump(2);
}

ReducedPose ReducedPose::identity() {
    ReducedPose p;
    for (int k = 0; k < kDofJoints; ++k) p.set_joint(k, identity_6d());
    return p;
}

FullPose FullPose::identity(int num_joints) {
    return FullPose{std::vector<RotMatrix>(num_joints, RotMatrix::Identity())};
}

FkResult forward_kinematics(const SkeletonModel& skel, const FullPose& pose) {
    const int n = skel.num_joints();
    if (static_cast<int>(pose.local_rot.size()) != n) {
        throw ShapeMismatch("forward_kinematics: pose joint count differs from skeleton");
    }
    FkResult out;
    out.positions.resize(n);
    out.global_rot.resize(n);
    out.global_rot[0] = pose.local_rot[0];
    out.positions[0].setZero();
    for (int j = 1; j < n; ++j) {
        const int p = skel.parent(j);
        out.global_rot[j] = out.global_rot[p] * pose.local_rot[j];
        out.positions[j] = out.positions[p] + out.global_rot[p] * skel.offset(j);
    }
    return out;
}

FullPose expand_reduced(const SkeletonModel& skel, const ReducedPose& pose) {
    FullPose full = FullPose::identity(skel.num_joints());
    const auto& dof = skel.dof_indices();
    for (int k = 0; k < kDofJoints; ++k) {
        full.local_rot[dof[k]] = six_d_to_rot(pose.joint(k));
    }
    return full;
}

ReducedPose reduce_full(const SkeletonModel& skel, const FullPose& pose) {
    ReducedPose out;
    const auto& dof = skel.dof_indices();
    for (int k = 0; k < kDofJoints; ++k) {
        out.set_joint(k, rot_to_6d(pose.local_rot[dof[k]]));
    }
    return out;
}

std::vector<int> chain_stage_joints(const SkeletonModel& skel, ChainStage stage) {
    const auto& dof = skel.dof_indices();
    std::vector<int> out;
    for (int k = 0; k < kDofJoints; ++k) {
        const Region r = skel.region(dof[k]);
        bool take = false;
        switch (stage) {
            case ChainStage::Torso: take = r == Region::D1; break;
            case ChainStage::Transition: take = r == Region::D1 || r == Region::D2; break;
            case ChainStage::UpperBody: take = r == Region::D1 || r == Region::D2 || r == Region::D3; break;
            case ChainStage::LowerBody: take = k == 0 || r == Region::D4; break;
        }
        if (take) out.push_back(dof[k]);
    }
    return out;
}

namespace {

void check_stage_set(const SkeletonModel& skel, std::span<const int> joints, std::span<const RotMatrix> rotations) {
    if (joints.size() != rotations.size()) {
        throw ShapeMismatch("subchain_fk: joints and rotations differ in length");
    }
    const std::set<int> given(joints.begin(), joints.end());
    if (given.size() != joints.size()) {
        throw InvalidPrefix("subchain_fk: duplicate joints");
    }
    for (auto stage : {ChainStage::Torso, ChainStage::Transition, ChainStage::UpperBody, ChainStage::LowerBody}) {
        const auto want = chain_stage_joints(skel, stage);
        if (std::set<int>(want.begin(), want.end()) == given) return;
    }
    throw InvalidPrefix("subchain_fk: joint set is not a stage prefix");
}

std::vector<int> covered_joints(const SkeletonModel& skel, std::span<const int> joints) {
    std::set<int> cov(joints.begin(), joints.end());
    for (int j : joints) {
        for (int c : skel.children(j)) cov.insert(c);
    }
    return {cov.begin(), cov.end()};
}

}  // namespace

SubchainPositions subchain_fk(const SkeletonModel& skel, std::span<const int> joints,
                              std::span<const RotMatrix> rotations) {
    check_stage_set(skel, joints, rotations);
    FullPose pose = FullPose::identity(skel.num_joints());
    for (std::size_t i = 0; i < joints.size(); ++i) pose.local_rot[joints[i]] = rotations[i];
    const FkResult fk = forward_kinematics(skel, pose);
    SubchainPositions out;
    out.joints = covered_joints(skel, joints);
    for (int j : out.joints) out.positions.push_back(fk.positions[j]);
    return out;
}

std::vector<Eigen::Matrix3d> subchain_fk_backward(const SkeletonModel& skel, std::span<const int> joints,
                                                  std::span<const RotMatrix> rotations,
                                                  std::span<const Vec3> grad_positions) {
    check_stage_set(skel, joints, rotations);
    const auto cov = covered_joints(skel, joints);
    if (grad_positions.size() != cov.size()) {
        throw ShapeMismatch("subchain_fk_backward: gradient count differs from covered joints");
    }
    const int n = skel.num_joints();
    FullPose pose = FullPose::identity(n);
    for (std::size_t i = 0; i < joints.size(); ++i) pose.local_rot[joints[i]] = rotations[i];
    const FkResult fk = forward_kinematics(skel, pose);

    std::vector<Vec3> g_pos(n, Vec3::Zero());
    std::vector<Eigen::Matrix3d> g_glob(n, Eigen::Matrix3d::Zero());
    std::vector<Eigen::Matrix3d> g_local(n, Eigen::Matrix3d::Zero());
    for (std::size_t i = 0; i < cov.size(); ++i) g_pos[cov[i]] += grad_positions[i];

    for (int j = n - 1; j >= 1; --j) {
        const int p = skel.parent(j);
        // pos_j = pos_p + G_p * o_j
        g_pos[p] += g_pos[j];
        g_glob[p] += g_pos[j] * skel.offset(j).transpose();
        // G_j = G_p * R_j
        g_glob[p] += g_glob[j] * pose.local_rot[j].transpose();
        g_local[j] = fk.global_rot[p].transpose() * g_glob[j];
    }
    g_local[0] = g_glob[0];

    std::vector<Eigen::Matrix3d> out;
    out.reserve(joints.size());
    for (int j : joints) out.push_back(g_local[j]);
    return out;
}

}  // namespace progip
