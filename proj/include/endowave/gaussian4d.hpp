#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "endowave/sh.hpp"

namespace endowave {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Eigenvalue floor applied to conditioned spatial covariances and to the
/// temporal variance, in scene units squared.
constexpr double kCovFloor = 1e-7;

/// One spatio-temporal Gaussian. The 4x4 covariance is factorized as
/// R * diag(exp(log_scale))^2 * R^T with R built from the left/right unit
/// quaternion pair. Appearance is a spherical-harmonics basis in view
/// direction times cosine temporal atoms with learnable phases.
struct Primitive4D {
    Vec3 mu_x = Vec3::Zero();
    double mu_t = 0.0;
    Vec4 log_scale = Vec4::Zero();
    Vec4 rot_left = Vec4(1, 0, 0, 0);
    Vec4 rot_right = Vec4(1, 0, 0, 0);
    double logit_opacity = 0.0;
    int sh_degree = 3;       // spatial degree L
    int n_temporal = 2;      // highest temporal frequency N_t
    std::vector<double> sh_coeffs; // [(n * basis + k) * 3 + c], n in 0..N_t
    std::vector<double> phases;    // N_t + 1 entries, phases[0] pinned to 0

    Primitive4D() { resize_appearance(); }
    Primitive4D(int degree, int ntemporal) : sh_degree(degree), n_temporal(ntemporal) { resize_appearance(); }

    int basis_count() const { return sh::basis_count(sh_degree); }
    int sh_count() const { return (n_temporal + 1) * basis_count() * 3; }
    void resize_appearance() {
        sh_coeffs.assign(sh_count(), 0.0);
        phases.assign(n_temporal + 1, 0.0);
    }
    double& sh_at(int n, int k, int c) { return sh_coeffs[(static_cast<size_t>(n) * basis_count() + k) * 3 + c]; }
    double sh_at(int n, int k, int c) const { return sh_coeffs[(static_cast<size_t>(n) * basis_count() + k) * 3 + c]; }

    double opacity() const { return 1.0 / (1.0 + std::exp(-logit_opacity)); }

    void normalize_rotations() {
        rot_left.normalize();
        rot_right.normalize();
    }
};

/// Block view of a 4x4 spatio-temporal covariance.
struct Cov4Blocks {
    Mat3 sigma_xx;
    Vec3 sigma_xt;
    double sigma_tt;
};

/// Time slice of a 4D Gaussian: spatial conditional plus the marginal
/// temporal weight exp(-(t-mu_t)^2 / (2 sigma_tt)).
struct ConditionalGaussian3D {
    Vec3 mean3;
    Mat3 cov3;
    double temporal_weight;
};

/// Counters for covariance-floor events; informational only.
struct FloorCounters {
    std::atomic<uint64_t> sigma_tt{0};
    std::atomic<uint64_t> cov3{0};
    void reset() { sigma_tt = 0; cov3 = 0; }
};
FloorCounters& floor_counters();

/// Left-multiplication matrix of a quaternion acting on R^4.
Mat4 quat_left_matrix(const Vec4& q);
/// Right-multiplication matrix of a quaternion acting on R^4.
Mat4 quat_right_matrix(const Vec4& q);

/// 4D rotation from the (unit) left/right quaternion pair.
Mat4 build_rot4(const Vec4& rot_left, const Vec4& rot_right);

/// R * diag(exp(log_scale))^2 * R^T. Quaternions must be unit norm.
Mat4 build_cov4(const Vec4& log_scale, const Vec4& rot_left, const Vec4& rot_right);

Cov4Blocks cov4_blocks(const Mat4& cov4);
Cov4Blocks cov4_blocks(const Primitive4D& p);

/// Smallest eigenvalue of a symmetric 3x3 matrix, closed form.
double min_eigenvalue_sym3(const Mat3& m);

/// Conditions the 4D Gaussian on time t. Degenerate temporal variance is
/// clamped to kCovFloor and counted; cov3 eigenvalues likewise floored by an
/// isotropic shift.
ConditionalGaussian3D condition_at_time(const Primitive4D& p, double t);

/// Unnormalized density exp(-1/2 [(x,t)-mu]^T Sigma^{-1} [(x,t)-mu]).
double eval_density4(const Primitive4D& p, const Vec3& x, double t);

/// Center trajectory, the conditional mean at time t.
Vec3 position_at(const Primitive4D& p, double t);

/// Decoded emitted color: sum over temporal atoms and SH basis, plus the 0.5
/// DC offset, clamped at zero per channel. dir must be unit norm, t in [0,1].
Vec3 teash_eval(const Primitive4D& p, const Vec3& dir, double t);

/// Pre-offset, pre-clamp TEASH sum per channel.
Vec3 teash_eval_raw(const Primitive4D& p, const Vec3& dir, double t);

/// Binary container ("EW4D", version, count, degrees, fixed-size records).
void save_primitives(const std::vector<Primitive4D>& scene, const std::string& path);
std::vector<Primitive4D> load_primitives(const std::string& path);

/// Human-readable JSON form for debugging.
void save_primitives_json(const std::vector<Primitive4D>& scene, const std::string& path);
std::vector<Primitive4D> load_primitives_json(const std::string& path);

} // namespace endowave
