#include "progip/rotmath.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "progip/errors.hpp"

namespace progip {

namespace {
constexpr double kDegenerateNorm = 1e-8;
}

Rot6D rot_to_6d(const RotMatrix& r) {
    Rot6D v;
    v.head<3>() = r.col(0);
    v.tail<3>() = r.col(1);
    return v;
}

RotMatrix six_d_to_rot(const Rot6D& v) {
    const Vec3 a = v.head<3>();
    const Vec3 b = v.tail<3>();
    const double na = a.norm();
    if (!(na >= kDegenerateNorm)) {
        throw DegenerateInput("6D rotation: first column has near-zero norm");
    }
    const Vec3 c0 = a / na;
    const Vec3 u = b - c0.dot(b) * c0;
    const double nu = u.norm();
    if (!(nu >= kDegenerateNorm)) {
        throw DegenerateInput("6D rotation: second column parallel to the first");
    }
    const Vec3 c1 = u / nu;
    RotMatrix r;
    r.col(0) = c0;
    r.col(1) = c1;
    r.col(2) = c0.cross(c1);
    return r;
}

Rot6D six_d_to_rot_backward(const Rot6D& v, const Eigen::Matrix3d& grad_r) {
    const Vec3 a = v.head<3>();
    const Vec3 b = v.tail<3>();
    const double na = a.norm();
    if (!(na >= kDegenerateNorm)) {
        throw DegenerateInput("6D rotation: first column has near-zero norm");
    }
    const Vec3 c0 = a / na;
    const double proj = c0.dot(b);
    const Vec3 u = b - proj * c0;
    const double nu = u.norm();
    if (!(nu >= kDegenerateNorm)) {
        throw DegenerateInput("6D rotation: second column parallel to the first");
    }
    const Vec3 c1 = u / nu;

    const Vec3 g0 = grad_r.col(0);
    const Vec3 g1 = grad_r.col(1);
    const Vec3 g2 = grad_r.col(2);

    // c2 = c0 x c1
    Vec3 gc0 = g0 + c1.cross(g2);
    const Vec3 gc1 = g1 + g2.cross(c0);

    // c1 = u / |u|
    const Vec3 gu = (gc1 - c1 * c1.dot(gc1)) / nu;

    // u = b - (c0 . b) c0
    const Vec3 gb = gu - c0 * c0.dot(gu);
    gc0 += -proj * gu - b * c0.dot(gu);

    // c0 = a / |a|
    const Vec3 ga = (gc0 - c0 * c0.dot(gc0)) / na;

    Rot6D out;
    out.head<3>() = ga;
    out.tail<3>() = gb;
    return out;
}

RotMatrix angular_velocity(const RotMatrix& r_prev, const RotMatrix& r_cur) {
    return r_prev.transpose() * r_cur;
}

double geodesic_angle_deg(const RotMatrix& r1, const RotMatrix& r2) {
    // atan2 keeps precision near 0 and 180 degrees where acos of the trace does not.
    const RotMatrix r = r1.transpose() * r2;
    const double c = (r.trace() - 1.0) / 2.0;
    const double s = Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)).norm() / 2.0;
    return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

RotMatrix axis_angle_to_rot(const AxisAngle& aa) {
    const double theta = aa.norm();
    if (theta == 0.0) {
        return RotMatrix::Identity();
    }
    const Vec3 k = aa / theta;
    Eigen::Matrix3d kx;
    kx << 0, -k.z(), k.y(),
          k.z(), 0, -k.x(),
          -k.y(), k.x(), 0;
    return RotMatrix::Identity() + std::sin(theta) * kx + (1.0 - std::cos(theta)) * kx * kx;
}

AxisAngle rot_to_axis_angle(const RotMatrix& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    if (q.w() < 0) {
        q.coeffs() = -q.coeffs();
    }
    const Vec3 xyz = q.vec();
    const double n = xyz.norm();
    if (n < 1e-12) {
        return 2.0 * xyz / q.w();
    }
    return xyz * (2.0 * std::atan2(n, q.w()) / n);
}

RotMatrix rot_x(double rad) {
    return Eigen::AngleAxisd(rad, Vec3::UnitX()).toRotationMatrix();
}

RotMatrix rot_y(double rad) {
    return Eigen::AngleAxisd(rad, Vec3::UnitY()).toRotationMatrix();
}

RotMatrix rot_z(double rad) {
    return Eigen::AngleAxisd(rad, Vec3::UnitZ()).toRotationMatrix();
}

RotMatrix slerp(const RotMatrix& a, const RotMatrix& b, double t) {
    const Eigen::Quaterniond qa(a);
    const Eigen::Quaterniond qb(b);
    return qa.slerp(t, qb).normalized().toRotationMatrix();
}

bool is_rotation(const RotMatrix& r, double tol) {
    if (!r.allFinite()) {
        return false;
    }
    const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

RotMatrix orthonormalize(const Eigen::Matrix3d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d& v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0) {
        u.col(2) = -u.col(2);
    }
    return u * v.transpose();
}

}  // namespace progip
