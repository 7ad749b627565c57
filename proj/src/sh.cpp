#include "endowave/sh.hpp"

#include <stdexcept>

namespace endowave::sh {

namespace {

constexpr double C0 = 0.28209479177387814;
constexpr double C1 = 0.4886025119029199;
constexpr double C2_0 = 1.0925484305920792;
constexpr double C2_1 = -1.0925484305920792;
constexpr double C2_2 = 0.31539156525252005;
constexpr double C2_3 = -1.0925484305920792;
constexpr double C2_4 = 0.5462742152960396;
constexpr double C3_0 = -0.5900435899266435;
constexpr double C3_1 = 2.890611442640554;
constexpr double C3_2 = -0.4570457994644658;
constexpr double C3_3 = 0.3731763325901154;
constexpr double C3_4 = -0.4570457994644658;
constexpr double C3_5 = 1.445305721320277;
constexpr double C3_6 = -0.5900435899266435;

} // namespace

void eval_basis(int degree, const Eigen::Vector3d& dir, double* b) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    b[0] = C0;
    if (degree < 1) return;
    b[1] = -C1 * y;
    b[2] = C1 * z;
    b[3] = -C1 * x;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, yz = y * z, xz = x * z;
    b[4] = C2_0 * xy;
    b[5] = C2_1 * yz;
    b[6] = C2_2 * (2.0 * zz - xx - yy);
    b[7] = C2_3 * xz;
    b[8] = C2_4 * (xx - yy);
    if (degree < 3) return;
    b[9] = C3_0 * y * (3.0 * xx - yy);
    b[10] = C3_1 * xy * z;
    b[11] = C3_2 * y * (4.0 * zz - xx - yy);
    b[12] = C3_3 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = C3_4 * x * (4.0 * zz - xx - yy);
    b[14] = C3_5 * z * (xx - yy);
    b[15] = C3_6 * x * (xx - 3.0 * yy);
}

void eval_basis_grad(int degree, const Eigen::Vector3d& dir, double* b, Eigen::Vector3d* g) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    eval_basis(degree, dir, b);
    g[0].setZero();
    if (degree < 1) return;
    g[1] = {0.0, -C1, 0.0};
    g[2] = {0.0, 0.0, C1};
    g[3] = {-C1, 0.0, 0.0};
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    g[4] = {C2_0 * y, C2_0 * x, 0.0};
    g[5] = {0.0, C2_1 * z, C2_1 * y};
    g[6] = {-2.0 * C2_2 * x, -2.0 * C2_2 * y, 4.0 * C2_2 * z};
    g[7] = {C2_3 * z, 0.0, C2_3 * x};
    g[8] = {2.0 * C2_4 * x, -2.0 * C2_4 * y, 0.0};
    if (degree < 3) return;
    g[9] = {C3_0 * 6.0 * x * y, C3_0 * (3.0 * xx - 3.0 * yy), 0.0};
    g[10] = {C3_1 * y * z, C3_1 * x * z, C3_1 * x * y};
    g[11] = {C3_2 * (-2.0 * x * y), C3_2 * (4.0 * zz - xx - 3.0 * yy), C3_2 * 8.0 * y * z};
    g[12] = {C3_3 * (-6.0 * x * z), C3_3 * (-6.0 * y * z), C3_3 * (6.0 * zz - 3.0 * xx - 3.0 * yy)};
    g[13] = {C3_4 * (4.0 * zz - 3.0 * xx - yy), C3_4 * (-2.0 * x * y), C3_4 * 8.0 * x * z};
    g[14] = {C3_5 * 2.0 * x * z, C3_5 * (-2.0 * y * z), C3_5 * (xx - yy)};
    g[15] = {C3_6 * (3.0 * xx - 3.0 * yy), C3_6 * (-6.0 * x * y), 0.0};
}

double eval(int l, int m, const Eigen::Vector3d& dir) {
    if (l < 0 || l > kMaxDegree || m < -l || m > l)
        throw std::invalid_argument("sh::eval: (l,m) out of range");
    double b[16];
    eval_basis(l, dir, b);
    return b[index(l, m)];
}

} // namespace endowave::sh
