#pragma once

#include <optional>

#include "endowave/gaussian4d.hpp"

namespace endowave {

constexpr double kNearPlane = 0.01;

/// Pinhole camera: intrinsics in pixels, world-to-camera extrinsics.
/// Pixel centers sit at integer coordinates (0..w-1, 0..h-1).
struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    int width = 0, height = 0;

    Vec3 to_camera(const Vec3& x_world) const { return R * x_world + t; }
    Vec3 center() const { return -(R.transpose() * t); }

    Vec2 project_camera(const Vec3& x_cam) const {
        return {fx * x_cam.x() / x_cam.z() + cx, fy * x_cam.y() / x_cam.z() + cy};
    }

    /// World point to pixel; empty when at or behind the near plane.
    std::optional<Vec2> project(const Vec3& x_world) const {
        const Vec3 xc = to_camera(x_world);
        if (xc.z() <= kNearPlane) return std::nullopt;
        return project_camera(xc);
    }

    /// d(pixel)/d(camera point) at x_cam.
    Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& x_cam) const {
        const double z = x_cam.z();
        Eigen::Matrix<double, 2, 3> J;
        J << fx / z, 0.0, -fx * x_cam.x() / (z * z),
             0.0, fy / z, -fy * x_cam.y() / (z * z);
        return J;
    }

    bool orthonormal(double tol = 1e-10) const {
        return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol;
    }
};

} // namespace endowave
