#pragma once

#include <Eigen/Core>

namespace progip {

/// Rotation matrix, double precision. Valid when orthonormal with det +1.
using RotMatrix = Eigen::Matrix3d;

/// First two columns of a rotation matrix, column-major: [c0; c1].
using Rot6D = Eigen::Matrix<double, 6, 1>;

/// Rotation vector (axis scaled by angle in radians).
using AxisAngle = Eigen::Vector3d;

using Vec3 = Eigen::Vector3d;

Rot6D rot_to_6d(const RotMatrix& r);

/// Gram-Schmidt decode: the first column anchors, the second is orthogonalized
/// against it, the third is their cross product. Throws DegenerateInput when
/// either column collapses below 1e-8.
RotMatrix six_d_to_rot(const Rot6D& v);

/// Reverse-mode derivative of six_d_to_rot. Given dL/dR (3x3), returns dL/dv.
Rot6D six_d_to_rot_backward(const Rot6D& v, const Eigen::Matrix3d& grad_r);

/// W = r_prev^T * r_cur, the frame-to-frame rotation.
RotMatrix angular_velocity(const RotMatrix& r_prev, const RotMatrix& r_cur);

/// Geodesic distance in degrees, in [0, 180].
double geodesic_angle_deg(const RotMatrix& r1, const RotMatrix& r2);

/// Rodrigues formula; the zero vector maps to identity.
RotMatrix axis_angle_to_rot(const AxisAngle& aa);

/// Matrix log map, angle in [0, pi].
AxisAngle rot_to_axis_angle(const RotMatrix& r);

RotMatrix rot_x(double rad);
RotMatrix rot_y(double rad);
RotMatrix rot_z(double rad);

/// Spherical interpolation between two rotations, t in [0, 1].
RotMatrix slerp(const RotMatrix& a, const RotMatrix& b, double t);

/// max |R^T R - I| <= tol and |det R - 1| <= tol.
bool is_rotation(const RotMatrix& r, double tol = 1e-6);

/// Projects a nearly-orthonormal matrix back onto SO(3) via SVD.
RotMatrix orthonormalize(const Eigen::Matrix3d& m);

inline Rot6D identity_6d() {
    Rot6D v;
    v << 1, 0, 0, 0, 1, 0;
    return v;
}

}  // namespace progip
