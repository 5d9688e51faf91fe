#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "progip/rotmath.hpp"

namespace progip {

inline constexpr int kSmplJoints = 24;
inline constexpr int kDofJoints = 16;
inline constexpr int kReducedDim = 6 * kDofJoints;

/// Joint order inside a ReducedPose. Pelvis carries the global orientation.
inline constexpr std::array<std::string_view, kDofJoints> kCanonicalDofOrder = {
    "Pelvis",     "Spine1",     "Spine2",  "Spine3",  "Neck",    "L_Collar",
    "R_Collar",   "Head",       "L_Shoulder", "R_Shoulder", "L_Elbow", "R_Elbow",
    "L_Hip",      "R_Hip",      "L_Knee",  "R_Knee"};

/// Kinematic-depth regions. Joints without rotational DOF map to None.
enum class Region { D1, D2, D3, D4, None };

/// The four joint sets accepted by subchain_fk, one per progressive stage.
enum class ChainStage { Torso, Transition, UpperBody, LowerBody };

class SkeletonModel {
public:
    SkeletonModel(std::vector<std::string> names, std::vector<int> parents, std::vector<Vec3> offsets);

    static SkeletonModel load(const std::filesystem::path& path);
    static SkeletonModel from_json_text(std::string_view text);
    /// The shipped SMPL-topology asset.
    static SkeletonModel default_smpl();

    [[nodiscard]] int num_joints() const { return static_cast<int>(names_.size()); }
    [[nodiscard]] int parent(int j) const { return parents_[j]; }
    [[nodiscard]] const Vec3& offset(int j) const { return offsets_[j]; }
    [[nodiscard]] const std::string& name(int j) const { return names_[j]; }
    [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
    [[nodiscard]] const std::vector<int>& parents() const { return parents_; }
    [[nodiscard]] const std::vector<Vec3>& offsets() const { return offsets_; }
    [[nodiscard]] int root() const { return 0; }
    [[nodiscard]] std::vector<int> children(int j) const;

    /// Throws std::out_of_range for unknown names.
    [[nodiscard]] int index_of(std::string_view name) const;
    [[nodiscard]] bool has_joint(std::string_view name) const;

    /// Joint indices in canonical ReducedPose order. Requires SMPL joint names.
    [[nodiscard]] const std::array<int, kDofJoints>& dof_indices() const;
    [[nodiscard]] bool has_smpl_topology() const { return smpl_; }
    [[nodiscard]] Region region(int j) const;
    [[nodiscard]] bool is_dof(int j) const { return region(j) != Region::None; }

    [[nodiscard]] std::string to_json_text() const;

private:
    std::vector<std::string> names_;
    std::vector<int> parents_;
    std::vector<Vec3> offsets_;
    bool smpl_ = false;
    std::array<int, kDofJoints> dof_{};
    std::vector<Region> regions_;
};

/// 16 DOF joints x 6D in canonical order.
struct ReducedPose {
    Eigen::Matrix<double, kReducedDim, 1> v = Eigen::Matrix<double, kReducedDim, 1>::Zero();

    [[nodiscard]] Rot6D joint(int k) const { return v.segment<6>(6 * k); }
    void set_joint(int k, const Rot6D& r) { v.segment<6>(6 * k) = r; }
    static ReducedPose identity();
};

/// Local rotation per joint; the root entry is the global orientation.
struct FullPose {
    std::vector<RotMatrix> local_rot;

    static FullPose identity(int num_joints = kSmplJoints);
};

struct FkResult {
    std::vector<Vec3> positions;
    std::vector<RotMatrix> global_rot;
};

/// Root fixed at the origin.
FkResult forward_kinematics(const SkeletonModel& skel, const FullPose& pose);

/// Decodes the 16 DOF joints; wrists, hands, ankles and feet stay identity.
FullPose expand_reduced(const SkeletonModel& skel, const ReducedPose& pose);
ReducedPose reduce_full(const SkeletonModel& skel, const FullPose& pose);

/// Joint set for one stage: Torso = d1, Transition = d1+d2, UpperBody = d1+d2+d3,
/// LowerBody = pelvis+d4. Returned in canonical order.
std::vector<int> chain_stage_joints(const SkeletonModel& skel, ChainStage stage);

struct SubchainPositions {
    /// Supplied joints plus their direct children, ascending index order.
    std::vector<int> joints;
    std::vector<Vec3> positions;
};

/// FK restricted to one stage's joint set. Joints outside the set are identity.
/// Throws InvalidPrefix when `joints` is not one of the four stage sets.
SubchainPositions subchain_fk(const SkeletonModel& skel, std::span<const int> joints,
                              std::span<const RotMatrix> rotations);

/// dL/dR for every supplied rotation, given dL/dposition for every covered joint
/// (ordered as in the SubchainPositions returned by subchain_fk).
std::vector<Eigen::Matrix3d> subchain_fk_backward(const SkeletonModel& skel, std::span<const int> joints,
                                                  std::span<const RotMatrix> rotations,
                                                  std::span<const Vec3> grad_positions);

}  // namespace progip
