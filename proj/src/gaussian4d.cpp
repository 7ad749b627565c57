#include "endowave/gaussian4d.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace endowave {

FloorCounters& floor_counters() {
    static FloorCounters counters;
    return counters;
}

Mat4 quat_left_matrix(const Vec4& q) {
    const double a = q[0], b = q[1], c = q[2], d = q[3];
    Mat4 m;
    m << a, -b, -c, -d,
         b,  a, -d,  c,
         c,  d,  a, -b,
         d, -c,  b,  a;
    return m;
}

Mat4 quat_right_matrix(const Vec4& q) {
    const double p = q[0], s = q[1], r = q[2], t = q[3];
    Mat4 m;
    m << p, -s, -r, -t,
         s,  p,  t, -r,
         r, -t,  p,  s,
         t,  r, -s,  p;
    return m;
}

Mat4 build_rot4(const Vec4& rot_left, const Vec4& rot_right) {
    return quat_left_matrix(rot_left) * quat_right_matrix(rot_right);
}

Mat4 build_cov4(const Vec4& log_scale, const Vec4& rot_left, const Vec4& rot_right) {
    const Mat4 rot = build_rot4(rot_left, rot_right);
    Vec4 s2;
    for (int i = 0; i < 4; ++i) s2[i] = std::exp(2.0 * log_scale[i]);
    return rot * s2.asDiagonal() * rot.transpose();
}

Cov4Blocks cov4_blocks(const Mat4& cov4) {
    Cov4Blocks b;
    b.sigma_xx = cov4.topLeftCorner<3, 3>();
    b.sigma_xt = cov4.block<3, 1>(0, 3);
    b.sigma_tt = cov4(3, 3);
    return b;
}

Cov4Blocks cov4_blocks(const Primitive4D& p) {
    return cov4_blocks(build_cov4(p.log_scale, p.rot_left, p.rot_right));
}

double min_eigenvalue_sym3(const Mat3& m) {
    // Trigonometric closed form (Smith 1961) on the deviatoric part.
    const double q = m.trace() / 3.0;
    Mat3 b = m - q * Mat3::Identity();
    const double p2 = (b * b).trace() / 6.0;
    if (p2 <= 0.0) return q;
    const double p = std::sqrt(p2);
    double detb = b.determinant() / (2.0 * p * p * p);
    detb = std::clamp(detb, -1.0, 1.0);
    const double phi = std::acos(detb) / 3.0;
    // Eigenvalues are q + 2p cos(phi + 2k pi / 3); the minimum uses k = 1.
    return q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
}

ConditionalGaussian3D condition_at_time(const Primitive4D& p, double t) {
    const Cov4Blocks blk = cov4_blocks(p);
    double tt = blk.sigma_tt;
    if (tt < kCovFloor) {
        tt = kCovFloor;
        floor_counters().sigma_tt.fetch_add(1, std::memory_order_relaxed);
    }
    const double dt = t - p.mu_t;
    ConditionalGaussian3D g;
    g.mean3 = p.mu_x + blk.sigma_xt * (dt / tt);
    g.cov3 = blk.sigma_xx - (blk.sigma_xt * blk.sigma_xt.transpose()) / tt;
    const double lmin = min_eigenvalue_sym3(g.cov3);
    if (lmin < kCovFloor) {
        g.cov3 += (kCovFloor - lmin) * Mat3::Identity();
        floor_counters().cov3.fetch_add(1, std::memory_order_relaxed);
    }
    g.temporal_weight = std::exp(-dt * dt / (2.0 * tt));
    return g;
}

double eval_density4(const Primitive4D& p, const Vec3& x, double t) {
    const Mat4 cov = build_cov4(p.log_scale, p.rot_left, p.rot_right);
    Vec4 d;
    d << x - p.mu_x, t - p.mu_t;
    const Vec4 sol = cov.ldlt().solve(d);
    return std::exp(-0.5 * d.dot(sol));
}

Vec3 position_at(const Primitive4D& p, double t) {
    const Cov4Blocks blk = cov4_blocks(p);
    const double tt = std::max(blk.sigma_tt, kCovFloor);
    return p.mu_x + blk.sigma_xt * ((t - p.mu_t) / tt);
}

Vec3 teash_eval_raw(const Primitive4D& p, const Vec3& dir, double t) {
    const int basis = p.basis_count();
    double y[16];
    sh::eval_basis(p.sh_degree, dir, y);
    Vec3 out = Vec3::Zero();
    for (int n = 0; n <= p.n_temporal; ++n) {
        const double atom = std::cos(2.0 * std::numbers::pi * n * t + p.phases[n]);
        for (int k = 0; k < basis; ++k) {
            const double yk = y[k] * atom;
            const size_t base = (static_cast<size_t>(n) * basis + k) * 3;
            out[0] += p.sh_coeffs[base + 0] * yk;
            out[1] += p.sh_coeffs[base + 1] * yk;
            out[2] += p.sh_coeffs[base + 2] * yk;
        }
    }
    return out;
}

Vec3 teash_eval(const Primitive4D& p, const Vec3& dir, double t) {
    Vec3 raw = teash_eval_raw(p, dir, t);
    for (int c = 0; c < 3; ++c) raw[c] = std::max(0.0, raw[c] + 0.5);
    return raw;
}

namespace {

constexpr char kMagic[4] = {'E', 'W', '4', 'D'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("EW4D: truncated header");
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void put_f64(std::ostream& os, double v) {
    static_assert(sizeof(double) == 8);
    uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("EW4D: truncated record");
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

} // namespace

void save_primitives(const std::vector<Primitive4D>& scene, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("EW4D: cannot open for write: " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(scene.size()));
    const int degree = scene.empty() ? 3 : scene[0].sh_degree;
    const int ntemp = scene.empty() ? 2 : scene[0].n_temporal;
    put_u32(os, static_cast<uint32_t>(ntemp));
    put_u32(os, static_cast<uint32_t>(degree));
    for (const auto& p : scene) {
        if (p.sh_degree != degree || p.n_temporal != ntemp)
            throw std::runtime_error("EW4D: mixed appearance configurations in one container");
        for (int i = 0; i < 3; ++i) put_f64(os, p.mu_x[i]);
        put_f64(os, p.mu_t);
        for (int i = 0; i < 4; ++i) put_f64(os, p.log_scale[i]);
        for (int i = 0; i < 4; ++i) put_f64(os, p.rot_left[i]);
        for (int i = 0; i < 4; ++i) put_f64(os, p.rot_right[i]);
        put_f64(os, p.logit_opacity);
        for (double v : p.sh_coeffs) put_f64(os, v);
        for (double v : p.phases) put_f64(os, v);
    }
    if (!os) throw std::runtime_error("EW4D: write failed: " + path);
}

std::vector<Primitive4D> load_primitives(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("EW4D: cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw std::runtime_error("EW4D: truncated header");
    if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("EW4D: bad magic");
    const uint32_t version = get_u32(is);
    if (version != kVersion) throw std::runtime_error("EW4D: unsupported version");
    const uint32_t count = get_u32(is);
    const uint32_t ntemp = get_u32(is);
    const uint32_t degree = get_u32(is);
    if (degree > static_cast<uint32_t>(sh::kMaxDegree)) throw std::runtime_error("EW4D: sh degree out of range");
    std::vector<Primitive4D> scene;
    scene.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Primitive4D p(static_cast<int>(degree), static_cast<int>(ntemp));
        for (int k = 0; k < 3; ++k) p.mu_x[k] = get_f64(is);
        p.mu_t = get_f64(is);
        for (int k = 0; k < 4; ++k) p.log_scale[k] = get_f64(is);
        for (int k = 0; k < 4; ++k) p.rot_left[k] = get_f64(is);
        for (int k = 0; k < 4; ++k) p.rot_right[k] = get_f64(is);
        p.logit_opacity = get_f64(is);
        for (double& v : p.sh_coeffs) v = get_f64(is);
        for (double& v : p.phases) v = get_f64(is);
        scene.push_back(std::move(p));
    }
    return scene;
}

void save_primitives_json(const std::vector<Primitive4D>& scene, const std::string& path) {
    nlohmann::json root;
    root["format"] = "endowave-primitives";
    root["version"] = kVersion;
    auto& arr = root["primitives"] = nlohmann::json::array();
    for (const auto& p : scene) {
        nlohmann::json j;
        j["mu_x"] = {p.mu_x[0], p.mu_x[1], p.mu_x[2]};
        j["mu_t"] = p.mu_t;
        j["log_scale"] = {p.log_scale[0], p.log_scale[1], p.log_scale[2], p.log_scale[3]};
        j["rot_left"] = {p.rot_left[0], p.rot_left[1], p.rot_left[2], p.rot_left[3]};
        j["rot_right"] = {p.rot_right[0], p.rot_right[1], p.rot_right[2], p.rot_right[3]};
        j["logit_opacity"] = p.logit_opacity;
        j["sh_degree"] = p.sh_degree;
        j["n_temporal"] = p.n_temporal;
        j["sh_coeffs"] = p.sh_coeffs;
        j["phases"] = p.phases;
        arr.push_back(std::move(j));
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << root.dump(2) << "\n";
}

std::vector<Primitive4D> load_primitives_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    nlohmann::json root;
    is >> root;
    std::vector<Primitive4D> scene;
    for (const auto& j : root.at("primitives")) {
        Primitive4D p(j.at("sh_degree").get<int>(), j.at("n_temporal").get<int>());
        for (int k = 0; k < 3; ++k) p.mu_x[k] = j.at("mu_x")[k].get<double>();
        p.mu_t = j.at("mu_t").get<double>();
        for (int k = 0; k < 4; ++k) p.log_scale[k] = j.at("log_scale")[k].get<double>();
        for (int k = 0; k < 4; ++k) p.rot_left[k] = j.at("rot_left")[k].get<double>();
        for (int k = 0; k < 4; ++k) p.rot_right[k] = j.at("rot_right")[k].get<double>();
        p.logit_opacity = j.at("logit_opacity").get<double>();
        p.sh_coeffs = j.at("sh_coeffs").get<std::vector<double>>();
        p.phases = j.at("phases").get<std::vector<double>>();
        if (static_cast<int>(p.sh_coeffs.size()) != p.sh_count() ||
            static_cast<int>(p.phases.size()) != p.n_temporal + 1)
            throw std::runtime_error("primitive JSON: inconsistent appearance sizes");
        scene.push_back(std::move(p));
    }
    return scene;
}

} // namespace endowave
