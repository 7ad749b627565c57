#include "endowave/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "endowave/parallel.hpp"

namespace endowave {

std::optional<Splat2D> project_gaussian(const ConditionalGaussian3D& g, const Vec3& color,
                                        double opacity, const Camera& cam) {
    const Vec3 xc = cam.to_camera(g.mean3);
    if (xc.z() <= kNearPlane) return std::nullopt;

    Splat2D s;
    s.mean2 = cam.project_camera(xc);
    const Eigen::Matrix<double, 2, 3> J = cam.projection_jacobian(xc);
    const Eigen::Matrix<double, 2, 3> M = J * cam.R;
    s.cov2 = M * g.cov3 * M.transpose() + kDilation * Mat2::Identity();

    const double det = s.cov2(0, 0) * s.cov2(1, 1) - s.cov2(0, 1) * s.cov2(1, 0);
    if (det <= 0.0) return std::nullopt;
    s.inv_cov2 << s.cov2(1, 1) / det, -s.cov2(0, 1) / det,
                  -s.cov2(1, 0) / det, s.cov2(0, 0) / det;

    // Exact axis-aligned extent of the cutoff ellipse.
    const double m = std::sqrt(kCutoffMahalSq);
    const double rx = m * std::sqrt(s.cov2(0, 0));
    const double ry = m * std::sqrt(s.cov2(1, 1));
    if (s.mean2.x() + rx < 0.0 || s.mean2.x() - rx > cam.width - 1 ||
        s.mean2.y() + ry < 0.0 || s.mean2.y() - ry > cam.height - 1)
        return std::nullopt;

    s.depth = xc.z();
    s.effective_opacity = opacity * g.temporal_weight;
    s.color = color;
    return s;
}

namespace {

Vec3 view_direction(const Vec3& mean3, const Vec3& cam_center, double* len_out) {
    Vec3 v = mean3 - cam_center;
    const double len = v.norm();
    *len_out = len;
    if (len < 1e-12) return Vec3(0, 0, 1);
    return v / len;
}

// Conditions, decodes appearance, projects, and attaches flow for every
// primitive; empty slots are dropped.
std::vector<SplatCtx> build_splats(const std::vector<Primitive4D>& scene, const Camera& cam, double t,
                                   const std::optional<FlowPair>& flow_pair) {
    std::vector<std::optional<SplatCtx>> slots(scene.size());
    const Vec3 cc = cam.center();
    parallel_for_each(scene.size(), [&](size_t i) {
        const Primitive4D& p = scene[i];
        SplatCtx ctx;
        ctx.cond = condition_at_time(p, t);
        ctx.dir = view_direction(ctx.cond.mean3, cc, &ctx.dir_len);
        ctx.raw_color = teash_eval_raw(p, ctx.dir, t);
        Vec3 color;
        for (int c = 0; c < 3; ++c) color[c] = std::max(0.0, ctx.raw_color[c] + 0.5);
        ctx.opacity = p.opacity();
        auto splat = project_gaussian(ctx.cond, color, ctx.opacity, cam);
        if (!splat) return;
        ctx.splat = *splat;
        ctx.splat.prim_index = static_cast<int>(i);
        ctx.x_cam = cam.to_camera(ctx.cond.mean3);
        if (flow_pair) {
            const Vec3 p1 = position_at(p, flow_pair->t1);
            const Vec3 p2 = position_at(p, flow_pair->t2);
            const Vec3 xc1 = flow_pair->cam1.to_camera(p1);
            const Vec3 xc2 = flow_pair->cam2.to_camera(p2);
            ctx.pos2 = p2;
            ctx.x_cam2 = xc2;
            if (xc1.z() > kNearPlane && xc2.z() > kNearPlane) {
                ctx.splat.flow2 = flow_pair->cam2.project_camera(xc2) - flow_pair->cam1.project_camera(xc1);
                ctx.splat.flow_valid = true;
            }
        }
        slots[i] = std::move(ctx);
    });
    std::vector<SplatCtx> splats;
    splats.reserve(scene.size());
    for (auto& s : slots)
        if (s) splats.push_back(std::move(*s));
    return splats;
}

struct Accum {
    double rgb[3] = {0, 0, 0};
    double depth = 0;
    double alpha = 0;
    double fu = 0, fv = 0;
    double transmittance = 1.0;
};

// One splat's contribution at pixel (px, py); returns false when it is zero.
inline bool splat_alpha(const SplatCtx& ctx, double px, double py, double* alpha_out, double* gauss_out) {
    const Splat2D& s = ctx.splat;
    const double dx = px - s.mean2.x();
    const double dy = py - s.mean2.y();
    const double m = s.inv_cov2(0, 0) * dx * dx + 2.0 * s.inv_cov2(0, 1) * dx * dy +
                     s.inv_cov2(1, 1) * dy * dy;
    if (m >= kCutoffMahalSq) return false;
    const double gauss = std::exp(-0.5 * m);
    const double a = ctx.splat.effective_opacity * gauss_shelf(gauss);
    if (a <= 0.0) return false;
    *alpha_out = a;
    *gauss_out = gauss;
    return true;
}

inline void composite(Accum& acc, const SplatCtx& ctx, double alpha) {
    const double w = alpha * acc.transmittance;
    acc.rgb[0] += w * ctx.splat.color[0];
    acc.rgb[1] += w * ctx.splat.color[1];
    acc.rgb[2] += w * ctx.splat.color[2];
    acc.depth += w * ctx.splat.depth;
    acc.alpha += w;
    if (ctx.splat.flow_valid) {
        acc.fu += w * ctx.splat.flow2.x();
        acc.fv += w * ctx.splat.flow2.y();
    }
    acc.transmittance *= (1.0 - alpha);
}

void store_pixel(RenderOutput& out, int y, int x, const Accum& acc, bool has_flow) {
    out.rgb.ch[0].at(y, x) = acc.rgb[0];
    out.rgb.ch[1].at(y, x) = acc.rgb[1];
    out.rgb.ch[2].at(y, x) = acc.rgb[2];
    out.depth.at(y, x) = acc.depth;
    out.alpha.at(y, x) = acc.alpha;
    if (has_flow) {
        out.flow_u.at(y, x) = acc.fu;
        out.flow_v.at(y, x) = acc.fv;
    }
}

void normalize_output(RenderOutput& out, const RenderSettings& settings) {
    if (!settings.normalize_composites) return;
    for (int y = 0; y < out.depth.h; ++y)
        for (int x = 0; x < out.depth.w; ++x) {
            const double a = out.alpha.at(y, x);
            if (a > 1e-3) {
                out.depth.at(y, x) /= a;
                if (out.has_flow) {
                    out.flow_u.at(y, x) /= a;
                    out.flow_v.at(y, x) /= a;
                }
            }
        }
}

RenderOutput make_output(const Camera& cam, bool has_flow) {
    RenderOutput out;
    out.rgb = ColorImage(cam.height, cam.width);
    out.depth = Grid(cam.height, cam.width);
    out.alpha = Grid(cam.height, cam.width);
    out.flow_u = Grid(cam.height, cam.width);
    out.flow_v = Grid(cam.height, cam.width);
    out.has_flow = has_flow;
    return out;
}

void sort_by_depth(std::vector<int>& idx, const std::vector<SplatCtx>& splats) {
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (splats[a].splat.depth != splats[b].splat.depth)
            return splats[a].splat.depth < splats[b].splat.depth;
        return splats[a].splat.prim_index < splats[b].splat.prim_index;
    });
}

void build_tiles(const std::vector<SplatCtx>& splats, const Camera& cam, RenderCache* cache) {
    cache->tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    cache->tiles_y = (cam.height + kTileSize - 1) / kTileSize;
    cache->tile_splats.assign(static_cast<size_t>(cache->tiles_x) * cache->tiles_y, {});
    const double m = std::sqrt(kCutoffMahalSq);
    for (size_t i = 0; i < splats.size(); ++i) {
        const Splat2D& s = splats[i].splat;
        const double rx = m * std::sqrt(s.cov2(0, 0));
        const double ry = m * std::sqrt(s.cov2(1, 1));
        const int x0 = std::clamp(static_cast<int>(std::floor(s.mean2.x() - rx)), 0, cam.width - 1);
        const int x1 = std::clamp(static_cast<int>(std::ceil(s.mean2.x() + rx)), 0, cam.width - 1);
        const int y0 = std::clamp(static_cast<int>(std::floor(s.mean2.y() - ry)), 0, cam.height - 1);
        const int y1 = std::clamp(static_cast<int>(std::ceil(s.mean2.y() + ry)), 0, cam.height - 1);
        for (int ty = y0 / kTileSize; ty <= y1 / kTileSize; ++ty)
            for (int tx = x0 / kTileSize; tx <= x1 / kTileSize; ++tx)
                cache->tile_splats[static_cast<size_t>(ty) * cache->tiles_x + tx].push_back(static_cast<int>(i));
    }
    parallel_for_each(cache->tile_splats.size(), [&](size_t ti) {
        sort_by_depth(cache->tile_splats[ti], splats);
    });
}

} // namespace

RenderOutput render_cached(const std::vector<Primitive4D>& scene, const Camera& cam, double t,
                           const std::optional<FlowPair>& flow_pair, const RenderSettings& settings,
                           RenderCache* cache) {
    cache->cam = cam;
    cache->t = t;
    cache->flow = flow_pair;
    cache->settings = settings;
    cache->splats = build_splats(scene, cam, t, flow_pair);
    build_tiles(cache->splats, cam, cache);

    RenderOutput out = make_output(cam, flow_pair.has_value());
    const auto& splats = cache->splats;
    parallel_for_each(cache->tile_splats.size(), [&](size_t ti) {
        const auto& list = cache->tile_splats[ti];
        const int tx = static_cast<int>(ti) % cache->tiles_x;
        const int ty = static_cast<int>(ti) / cache->tiles_x;
        const int x0 = tx * kTileSize, x1 = std::min(cam.width, x0 + kTileSize);
        const int y0 = ty * kTileSize, y1 = std::min(cam.height, y0 + kTileSize);
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                Accum acc;
                for (int si : list) {
                    double a, gauss;
                    if (!splat_alpha(splats[si], x, y, &a, &gauss)) continue;
                    composite(acc, splats[si], a);
                    if (acc.transmittance < settings.transmittance_min) break;
                }
                store_pixel(out, y, x, acc, out.has_flow);
            }
    });
    normalize_output(out, settings);
    return out;
}

RenderOutput render(const std::vector<Primitive4D>& scene, const Camera& cam, double t,
                    const std::optional<FlowPair>& flow_pair, const RenderSettings& settings) {
    RenderCache cache;
    return render_cached(scene, cam, t, flow_pair, settings, &cache);
}

RenderOutput render_reference(const std::vector<Primitive4D>& scene, const Camera& cam, double t,
                              const std::optional<FlowPair>& flow_pair, const RenderSettings& settings) {
    const std::vector<SplatCtx> splats = build_splats(scene, cam, t, flow_pair);
    std::vector<int> order(splats.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    sort_by_depth(order, splats);

    RenderOutput out = make_output(cam, flow_pair.has_value());
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            Accum acc;
            for (int si : order) {
                double a, gauss;
                if (!splat_alpha(splats[si], x, y, &a, &gauss)) continue;
                composite(acc, splats[si], a);
                if (acc.transmittance < settings.transmittance_min) break;
            }
            store_pixel(out, y, x, acc, out.has_flow);
        }
    normalize_output(out, settings);
    return out;
}

void GradientSet::resize_like(const std::vector<Primitive4D>& scene) {
    const size_t n = scene.size();
    mu_x.assign(n, Vec3::Zero());
    mu_t.assign(n, 0.0);
    log_scale.assign(n, Vec4::Zero());
    rot_left.assign(n, Vec4::Zero());
    rot_right.assign(n, Vec4::Zero());
    logit_opacity.assign(n, 0.0);
    sh_coeffs.resize(n);
    phases.resize(n);
    for (size_t i = 0; i < n; ++i) {
        sh_coeffs[i].assign(scene[i].sh_count(), 0.0);
        phases[i].assign(scene[i].n_temporal + 1, 0.0);
    }
    mean2_grad_norm.assign(n, 0.0);
    visible.assign(n, 0);
}

void GradientSet::set_zero() {
    std::fill(mu_x.begin(), mu_x.end(), Vec3::Zero());
    std::fill(mu_t.begin(), mu_t.end(), 0.0);
    std::fill(log_scale.begin(), log_scale.end(), Vec4::Zero());
    std::fill(rot_left.begin(), rot_left.end(), Vec4::Zero());
    std::fill(rot_right.begin(), rot_right.end(), Vec4::Zero());
    std::fill(logit_opacity.begin(), logit_opacity.end(), 0.0);
    for (auto& v : sh_coeffs) std::fill(v.begin(), v.end(), 0.0);
    for (auto& v : phases) std::fill(v.begin(), v.end(), 0.0);
    std::fill(mean2_grad_norm.begin(), mean2_grad_norm.end(), 0.0);
    std::fill(visible.begin(), visible.end(), 0);
}

void GradientSet::accumulate(const GradientSet& o) {
    for (size_t i = 0; i < mu_x.size(); ++i) {
        mu_x[i] += o.mu_x[i];
        mu_t[i] += o.mu_t[i];
        log_scale[i] += o.log_scale[i];
        rot_left[i] += o.rot_left[i];
        rot_right[i] += o.rot_right[i];
        logit_opacity[i] += o.logit_opacity[i];
        for (size_t k = 0; k < sh_coeffs[i].size(); ++k) sh_coeffs[i][k] += o.sh_coeffs[i][k];
        for (size_t k = 0; k < phases[i].size(); ++k) phases[i][k] += o.phases[i][k];
        mean2_grad_norm[i] += o.mean2_grad_norm[i];
        visible[i] = visible[i] || o.visible[i];
    }
}

bool GradientSet::all_finite(int* bad_index) const {
    for (size_t i = 0; i < mu_x.size(); ++i) {
        bool ok = mu_x[i].allFinite() && std::isfinite(mu_t[i]) && log_scale[i].allFinite() &&
                  rot_left[i].allFinite() && rot_right[i].allFinite() && std::isfinite(logit_opacity[i]);
        for (double v : sh_coeffs[i]) ok = ok && std::isfinite(v);
        for (double v : phases[i]) ok = ok && std::isfinite(v);
        if (!ok) {
            if (bad_index) *bad_index = static_cast<int>(i);
            return false;
        }
    }
    return true;
}

namespace {

// Per-splat gradient accumulator in splat space.
struct SplatGrad {
    Vec3 color = Vec3::Zero();
    double depth = 0.0;
    Vec2 flow = Vec2::Zero();
    double eff = 0.0;
    Vec2 mean2 = Vec2::Zero();
    double lam00 = 0.0, lam01 = 0.0, lam11 = 0.0; // full symmetric d/d(inv_cov2)

    void add(const SplatGrad& o) {
        color += o.color;
        depth += o.depth;
        flow += o.flow;
        eff += o.eff;
        mean2 += o.mean2;
        lam00 += o.lam00;
        lam01 += o.lam01;
        lam11 += o.lam11;
    }
};

struct PixEntry {
    int si;
    double alpha;
    double gauss;
    double trans; // transmittance at entry
};

// Quaternion left/right multiplication basis; L(q) = sum q_i B[i],
// R(q) = sum q_i C[i].
const Mat4& quat_basis_left(int i) {
    static const std::array<Mat4, 4> basis = [] {
        std::array<Mat4, 4> b;
        for (int k = 0; k < 4; ++k) {
            Vec4 e = Vec4::Zero();
            e[k] = 1.0;
            b[k] = quat_left_matrix(e);
        }
        return b;
    }();
    return basis[i];
}

const Mat4& quat_basis_right(int i) {
    static const std::array<Mat4, 4> basis = [] {
        std::array<Mat4, 4> b;
        for (int k = 0; k < 4; ++k) {
            Vec4 e = Vec4::Zero();
            e[k] = 1.0;
            b[k] = quat_right_matrix(e);
        }
        return b;
    }();
    return basis[i];
}

// Chains one splat's screen-space gradients to its primitive's parameters.
void backprop_splat(const Primitive4D& p, const SplatCtx& ctx, const SplatGrad& sg,
                    const RenderCache& cache, GradientSet* grads) {
    const int pi = ctx.splat.prim_index;
    const Camera& cam = cache.cam;
    const double t = cache.t;

    Vec3 d_mean3 = Vec3::Zero();
    Vec3 d_mu_x = Vec3::Zero();
    Vec3 d_sigma_xt = Vec3::Zero();
    double d_sigma_tt = 0.0;
    double d_mu_t = 0.0;
    Mat3 d_cov3 = Mat3::Zero();
    Vec3 d_x_cam = Vec3::Zero();

    // inv_cov2 -> cov2.
    Mat2 d_lam;
    d_lam << sg.lam00, sg.lam01, sg.lam01, sg.lam11;
    const Mat2 d_cov2 = -ctx.splat.inv_cov2 * d_lam * ctx.splat.inv_cov2;

    // cov2 = M cov3 M^T + dilation, M = J W.
    const Eigen::Matrix<double, 2, 3> J = cam.projection_jacobian(ctx.x_cam);
    const Eigen::Matrix<double, 2, 3> M = J * cam.R;
    d_cov3 += M.transpose() * d_cov2 * M;
    const Eigen::Matrix<double, 2, 3> d_M =
        d_cov2 * M * ctx.cond.cov3.transpose() + d_cov2.transpose() * M * ctx.cond.cov3;
    const Eigen::Matrix<double, 2, 3> d_J = d_M * cam.R.transpose();

    // mean2 = projection of x_cam.
    d_x_cam += J.transpose() * sg.mean2;

    // Jacobian entries depend on x_cam.
    {
        const double x = ctx.x_cam.x(), y = ctx.x_cam.y(), z = ctx.x_cam.z();
        const double fx = cam.fx, fy = cam.fy;
        d_x_cam.x() += d_J(0, 2) * (-fx / (z * z));
        d_x_cam.y() += d_J(1, 2) * (-fy / (z * z));
        d_x_cam.z() += d_J(0, 0) * (-fx / (z * z)) + d_J(0, 2) * (2.0 * fx * x / (z * z * z)) +
                       d_J(1, 1) * (-fy / (z * z)) + d_J(1, 2) * (2.0 * fy * y / (z * z * z));
    }

    // Composited depth channel is camera-space z.
    d_x_cam.z() += sg.depth;
    d_mean3 += cam.R.transpose() * d_x_cam;

    // Appearance: clamp, TEASH atoms, SH basis, view direction.
    Vec3 d_raw = Vec3::Zero();
    for (int c = 0; c < 3; ++c)
        if (ctx.raw_color[c] + 0.5 > 0.0) d_raw[c] = sg.color[c];
    if (!d_raw.isZero(0.0)) {
        const int basis = p.basis_count();
        double y[16];
        Vec3 gy[16];
        sh::eval_basis_grad(p.sh_degree, ctx.dir, y, gy);
        Vec3 d_dir = Vec3::Zero();
        auto& gsh = grads->sh_coeffs[pi];
        for (int n = 0; n <= p.n_temporal; ++n) {
            const double angle = 2.0 * std::numbers::pi * n * t + p.phases[n];
            const double cosn = std::cos(angle);
            const double sinn = std::sin(angle);
            double d_phase = 0.0;
            for (int k = 0; k < basis; ++k) {
                const size_t base = (static_cast<size_t>(n) * basis + k) * 3;
                double coeff_dot = 0.0;
                for (int c = 0; c < 3; ++c) {
                    gsh[base + c] += y[k] * cosn * d_raw[c];
                    coeff_dot += p.sh_coeffs[base + c] * d_raw[c];
                }
                d_phase += coeff_dot * y[k];
                d_dir += coeff_dot * cosn * gy[k];
            }
            grads->phases[pi][n] += d_phase * (-sinn);
        }
        // dir = v / |v|, v = mean3 - camera center.
        if (ctx.dir_len > 1e-12)
            d_mean3 += (d_dir - ctx.dir * ctx.dir.dot(d_dir)) / ctx.dir_len;
    }

    // effective opacity = sigmoid(logit) * temporal_weight.
    const double o = ctx.opacity;
    double d_tw = sg.eff * o;
    grads->logit_opacity[pi] += sg.eff * ctx.cond.temporal_weight * o * (1.0 - o);

    const Cov4Blocks blk = cov4_blocks(p);
    const bool tt_clamped = blk.sigma_tt < kCovFloor;
    const double tt = tt_clamped ? kCovFloor : blk.sigma_tt;
    const double dt1 = t - p.mu_t;

    // Flow channel: projections of the trajectory at t1 and t2.
    if (cache.flow && ctx.splat.flow_valid && (sg.flow.x() != 0.0 || sg.flow.y() != 0.0)) {
        const FlowPair& fp = *cache.flow;
        const Vec3 xc1 = fp.cam1.to_camera(position_at(p, fp.t1));
        const Eigen::Matrix<double, 2, 3> J1 = fp.cam1.projection_jacobian(xc1);
        const Eigen::Matrix<double, 2, 3> J2 = fp.cam2.projection_jacobian(ctx.x_cam2);
        const Vec3 d_p2 = fp.cam2.R.transpose() * (J2.transpose() * sg.flow);
        const Vec3 d_p1 = -(fp.cam1.R.transpose() * (J1.transpose() * sg.flow));
        // P(tau) = mu_x + sigma_xt (tau - mu_t) / sigma_tt, for tau = t1, t2.
        for (const auto& [dp, tau] : {std::pair<Vec3, double>{d_p1, fp.t1}, {d_p2, fp.t2}}) {
            const double dtau = tau - p.mu_t;
            d_mu_x += dp;
            d_sigma_xt += dp * (dtau / tt);
            const double dot = dp.dot(blk.sigma_xt);
            d_sigma_tt += -dot * dtau / (tt * tt);
            d_mu_t += -dot / tt;
        }
    }

    // temporal_weight = exp(-dt1^2 / (2 tt)).
    const double tw = ctx.cond.temporal_weight;
    d_mu_t += d_tw * tw * dt1 / tt;
    d_sigma_tt += d_tw * tw * dt1 * dt1 / (2.0 * tt * tt);

    // mean3 = mu_x + sigma_xt dt1 / tt.
    d_mu_x += d_mean3;
    d_sigma_xt += d_mean3 * (dt1 / tt);
    {
        const double dot = d_mean3.dot(blk.sigma_xt);
        d_sigma_tt += -dot * dt1 / (tt * tt);
        d_mu_t += -dot / tt;
    }

    // cov3 = sigma_xx - sigma_xt sigma_xt^T / tt (floor shift treated constant).
    const Mat3 d_sigma_xx = d_cov3;
    d_sigma_xt += -((d_cov3 + d_cov3.transpose()) * blk.sigma_xt) / tt;
    d_sigma_tt += blk.sigma_xt.dot(d_cov3 * blk.sigma_xt) / (tt * tt);

    // Assemble the 4x4 covariance gradient; forward reads only the upper
    // blocks, so the lower cross block stays zero.
    Mat4 d_cov4 = Mat4::Zero();
    d_cov4.topLeftCorner<3, 3>() = d_sigma_xx;
    d_cov4.block<3, 1>(0, 3) = d_sigma_xt;
    d_cov4(3, 3) = tt_clamped ? 0.0 : d_sigma_tt;

    // cov4 = R diag(exp(2 s)) R^T with R = L(rot_left) Q(rot_right).
    const Mat4 rot = build_rot4(p.rot_left, p.rot_right);
    Vec4 s2;
    for (int i = 0; i < 4; ++i) s2[i] = std::exp(2.0 * p.log_scale[i]);
    const Mat4 rt_d_r = rot.transpose() * d_cov4 * rot;
    for (int i = 0; i < 4; ++i) grads->log_scale[pi][i] += rt_d_r(i, i) * 2.0 * s2[i];

    const Mat4 d_rot = d_cov4 * rot * s2.asDiagonal() + d_cov4.transpose() * rot * s2.asDiagonal();
    const Mat4 right = quat_right_matrix(p.rot_right);
    const Mat4 left = quat_left_matrix(p.rot_left);
    const Mat4 d_left = d_rot * right.transpose();
    const Mat4 d_right = left.transpose() * d_rot;
    for (int i = 0; i < 4; ++i) {
        grads->rot_left[pi][i] += quat_basis_left(i).cwiseProduct(d_left).sum();
        grads->rot_right[pi][i] += quat_basis_right(i).cwiseProduct(d_right).sum();
    }

    grads->mu_x[pi] += d_mu_x;
    grads->mu_t[pi] += d_mu_t;
    grads->mean2_grad_norm[pi] += sg.mean2.norm();
    grads->visible[pi] = 1;
}

} // namespace

void render_backward(const std::vector<Primitive4D>& scene, const RenderCache& cache,
                     const OutputGrads& dout, GradientSet* grads) {
    const auto& splats = cache.splats;
    const size_t n_tiles = cache.tile_splats.size();
    const Camera& cam = cache.cam;
    const bool has_flow = cache.flow.has_value();

    // Phase 1: per-tile splat-space gradients over the tile's own pixels.
    std::vector<std::vector<SplatGrad>> tile_grads(n_tiles);
    parallel_for_each(n_tiles, [&](size_t ti) {
        const auto& list = cache.tile_splats[ti];
        if (list.empty()) return;
        auto& local = tile_grads[ti];
        local.assign(list.size(), SplatGrad{});
        const int tx = static_cast<int>(ti) % cache.tiles_x;
        const int ty = static_cast<int>(ti) / cache.tiles_x;
        const int x0 = tx * kTileSize, x1 = std::min(cam.width, x0 + kTileSize);
        const int y0 = ty * kTileSize, y1 = std::min(cam.height, y0 + kTileSize);
        std::vector<PixEntry> entries;
        entries.reserve(64);
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                entries.clear();
                double trans = 1.0;
                for (size_t li = 0; li < list.size(); ++li) {
                    double a, gauss;
                    if (!splat_alpha(splats[list[li]], x, y, &a, &gauss)) continue;
                    entries.push_back({static_cast<int>(li), a, gauss, trans});
                    trans *= (1.0 - a);
                    if (trans < cache.settings.transmittance_min) break;
                }
                if (entries.empty()) continue;

                const double gr = dout.d_rgb.ch[0].at(y, x);
                const double gg = dout.d_rgb.ch[1].at(y, x);
                const double gb = dout.d_rgb.ch[2].at(y, x);
                const double gz = dout.d_depth.at(y, x);
                const double ga = dout.d_alpha.at(y, x);
                const double gfu = has_flow ? dout.d_flow_u.at(y, x) : 0.0;
                const double gfv = has_flow ? dout.d_flow_v.at(y, x) : 0.0;

                // Suffix composites B: tail value assuming unit transmittance.
                double b_rgb[3] = {0, 0, 0};
                double b_z = 0, b_a = 0, b_fu = 0, b_fv = 0;
                for (size_t k = entries.size(); k-- > 0;) {
                    const PixEntry& e = entries[k];
                    const SplatCtx& ctx = splats[list[e.si]];
                    SplatGrad& sgl = local[e.si];
                    const double w = e.alpha * e.trans;
                    const double vfu = ctx.splat.flow_valid ? ctx.splat.flow2.x() : 0.0;
                    const double vfv = ctx.splat.flow_valid ? ctx.splat.flow2.y() : 0.0;

                    sgl.color[0] += w * gr;
                    sgl.color[1] += w * gg;
                    sgl.color[2] += w * gb;
                    sgl.depth += w * gz;
                    if (ctx.splat.flow_valid) {
                        sgl.flow.x() += w * gfu;
                        sgl.flow.y() += w * gfv;
                    }

                    const double d_alpha =
                        e.trans * (gr * (ctx.splat.color[0] - b_rgb[0]) + gg * (ctx.splat.color[1] - b_rgb[1]) +
                                   gb * (ctx.splat.color[2] - b_rgb[2]) + gz * (ctx.splat.depth - b_z) +
                                   ga * (1.0 - b_a) + gfu * (vfu - b_fu) + gfv * (vfv - b_fv));

                    const double shelf = (e.gauss - kGaussCut) / (1.0 - kGaussCut);
                    sgl.eff += shelf * shelf * d_alpha;
                    const double d_gauss = ctx.splat.effective_opacity * 2.0 * shelf / (1.0 - kGaussCut) * d_alpha;
                    const double d_m = -0.5 * e.gauss * d_gauss;
                    const double dx = x - ctx.splat.mean2.x();
                    const double dy = y - ctx.splat.mean2.y();
                    const Mat2& lam = ctx.splat.inv_cov2;
                    const double lx = lam(0, 0) * dx + lam(0, 1) * dy;
                    const double ly = lam(1, 0) * dx + lam(1, 1) * dy;
                    sgl.mean2.x() += d_m * (-2.0 * lx);
                    sgl.mean2.y() += d_m * (-2.0 * ly);
                    sgl.lam00 += d_m * dx * dx;
                    sgl.lam01 += d_m * dx * dy;
                    sgl.lam11 += d_m * dy * dy;

                    // Fold this splat into the tail composite.
                    b_rgb[0] = e.alpha * ctx.splat.color[0] + (1.0 - e.alpha) * b_rgb[0];
                    b_rgb[1] = e.alpha * ctx.splat.color[1] + (1.0 - e.alpha) * b_rgb[1];
                    b_rgb[2] = e.alpha * ctx.splat.color[2] + (1.0 - e.alpha) * b_rgb[2];
                    b_z = e.alpha * ctx.splat.depth + (1.0 - e.alpha) * b_z;
                    b_a = e.alpha * 1.0 + (1.0 - e.alpha) * b_a;
                    b_fu = e.alpha * vfu + (1.0 - e.alpha) * b_fu;
                    b_fv = e.alpha * vfv + (1.0 - e.alpha) * b_fv;
                }
            }
    });

    // Phase 2: reduce tile partials in fixed tile order.
    std::vector<SplatGrad> acc(splats.size());
    for (size_t ti = 0; ti < n_tiles; ++ti) {
        if (tile_grads[ti].empty()) continue;
        const auto& list = cache.tile_splats[ti];
        for (size_t li = 0; li < list.size(); ++li) acc[list[li]].add(tile_grads[ti][li]);
    }

    // Phase 3: splat space to primitive parameters; one splat per primitive.
    parallel_for_each(splats.size(), [&](size_t si) {
        backprop_splat(scene[splats[si].splat.prim_index], splats[si], acc[si], cache, grads);
    });
}

} // namespace endowave
