#pragma once

#include <functional>
#include <vector>

#include "endowave/dataset.hpp"
#include "endowave/losses.hpp"
#include "endowave/parallel.hpp"
#include "endowave/rng.hpp"

namespace endowave::test {

inline size_t param_count(const std::vector<Primitive4D>& scene) {
    size_t n = 0;
    for (const auto& p : scene) n += 17 + p.sh_coeffs.size() + p.phases.size();
    return n;
}

inline std::vector<double> get_params(const std::vector<Primitive4D>& scene) {
    std::vector<double> out;
    out.reserve(param_count(scene));
    for (const auto& p : scene) {
        for (int k = 0; k < 3; ++k) out.push_back(p.mu_x[k]);
        out.push_back(p.mu_t);
        for (int k = 0; k < 4; ++k) out.push_back(p.log_scale[k]);
        for (int k = 0; k < 4; ++k) out.push_back(p.rot_left[k]);
        for (int k = 0; k < 4; ++k) out.push_back(p.rot_right[k]);
        out.push_back(p.logit_opacity);
        out.insert(out.end(), p.sh_coeffs.begin(), p.sh_coeffs.end());
        out.insert(out.end(), p.phases.begin(), p.phases.end());
    }
    return out;
}

inline void set_params(std::vector<Primitive4D>* scene, const std::vector<double>& v) {
    size_t i = 0;
    for (auto& p : *scene) {
        for (int k = 0; k < 3; ++k) p.mu_x[k] = v[i++];
        p.mu_t = v[i++];
        for (int k = 0; k < 4; ++k) p.log_scale[k] = v[i++];
        for (int k = 0; k < 4; ++k) p.rot_left[k] = v[i++];
        for (int k = 0; k < 4; ++k) p.rot_right[k] = v[i++];
        p.logit_opacity = v[i++];
        for (double& c : p.sh_coeffs) c = v[i++];
        for (double& ph : p.phases) ph = v[i++];
    }
}

inline std::vector<double> flatten_grads(const GradientSet& g, const std::vector<Primitive4D>& scene) {
    std::vector<double> out;
    out.reserve(param_count(scene));
    for (size_t pi = 0; pi < scene.size(); ++pi) {
        for (int k = 0; k < 3; ++k) out.push_back(g.mu_x[pi][k]);
        out.push_back(g.mu_t[pi]);
        for (int k = 0; k < 4; ++k) out.push_back(g.log_scale[pi][k]);
        for (int k = 0; k < 4; ++k) out.push_back(g.rot_left[pi][k]);
        for (int k = 0; k < 4; ++k) out.push_back(g.rot_right[pi][k]);
        out.push_back(g.logit_opacity[pi]);
        out.insert(out.end(), g.sh_coeffs[pi].begin(), g.sh_coeffs[pi].end());
        out.insert(out.end(), g.phases[pi].begin(), g.phases[pi].end());
    }
    return out;
}

/// Central finite differences over the whole parameter vector, parallel over
/// parameters; every worker perturbs its own copy of the scene.
inline std::vector<double> fd_gradient(const std::vector<Primitive4D>& scene,
                                       const std::function<double(const std::vector<Primitive4D>&)>& f,
                                       double h) {
    const std::vector<double> base = get_params(scene);
    std::vector<double> fd(base.size());
    parallel_for(base.size(), [&](size_t b, size_t e) {
        std::vector<Primitive4D> local = scene;
        std::vector<double> params = base;
        for (size_t i = b; i < e; ++i) {
            const double keep = params[i];
            params[i] = keep + h;
            set_params(&local, params);
            const double up = f(local);
            params[i] = keep - h;
            set_params(&local, params);
            const double dn = f(local);
            params[i] = keep;
            fd[i] = (up - dn) / (2.0 * h);
        }
    });
    return fd;
}

struct VectorCompare {
    double rel_error;
    double cosine;
};

inline VectorCompare compare_vectors(const std::vector<double>& a, const std::vector<double>& b) {
    double na = 0, nb = 0, dot = 0, nd = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dot += a[i] * b[i];
        nd += (a[i] - b[i]) * (a[i] - b[i]);
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    VectorCompare c;
    c.rel_error = std::sqrt(nd) / std::max({na, nb, 1e-12});
    c.cosine = dot / std::max(na * nb, 1e-300);
    return c;
}

/// Micro-scene for finite-difference checks: moderate opacities, healthy
/// depth separation at the render time (so the depth sort never flips inside
/// the FD window), and appearance kept away from the color clamp.
inline std::vector<Primitive4D> micro_scene(Rng& rng, int n, const Camera& cam, double t_render) {
    std::vector<Primitive4D> scene;
    int attempts = 0;
    while (static_cast<int>(scene.size()) < n && attempts < 4000) {
        ++attempts;
        Primitive4D p(1, 1);
        const double z = 1.5 + 0.14 * static_cast<double>(scene.size()) + rng.uniform(0.0, 0.04);
        const double span = 0.35 * z * cam.width / cam.fx / 2.0;
        p.mu_x = Vec3(rng.uniform(-span, span), rng.uniform(-span, span), z);
        p.mu_t = rng.uniform(0.2, 0.8);
        for (int k = 0; k < 3; ++k) p.log_scale[k] = rng.uniform(-2.3, -1.4);
        p.log_scale[3] = rng.uniform(-1.0, -0.2);
        Vec4 ql(1.0, 0.08 * rng.normal(), 0.08 * rng.normal(), 0.08 * rng.normal());
        Vec4 qr(1.0, 0.08 * rng.normal(), 0.08 * rng.normal(), 0.08 * rng.normal());
        p.rot_left = ql.normalized();
        p.rot_right = qr.normalized();
        p.logit_opacity = rng.uniform(-0.5, 1.5);
        for (double& c : p.sh_coeffs) c = rng.uniform(-0.08, 0.08);
        for (int c = 0; c < 3; ++c) p.sh_at(0, 0, c) = rng.uniform(-0.1, 0.5);
        for (size_t i = 1; i < p.phases.size(); ++i) p.phases[i] = rng.uniform(-1.0, 1.0);

        const double zc = condition_at_time(p, t_render).mean3.z();
        bool ok = zc > 1.0;
        for (const auto& q : scene)
            if (std::abs(condition_at_time(q, t_render).mean3.z() - zc) < 0.03) ok = false;
        if (ok) scene.push_back(std::move(p));
    }
    return scene;
}

/// A miniature observed frame whose residuals against the scene's own render
/// are bounded away from zero, so absolute-value kinks sit far outside any
/// finite-difference window.
inline FrameBundle micro_frame(Rng& rng, const Camera& cam, double t,
                               const std::vector<Primitive4D>& scene) {
    const RenderOutput out = render(scene, cam, t);
    FrameBundle fb;
    fb.cam = cam;
    fb.time = t;
    fb.index = 0;
    fb.rgb = ColorImage(cam.height, cam.width);
    for (int c = 0; c < 3; ++c)
        for (size_t i = 0; i < fb.rgb.ch[c].v.size(); ++i) {
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            fb.rgb.ch[c].v[i] = std::clamp(out.rgb.ch[c].v[i] + sign * rng.uniform(0.04, 0.12), 0.0, 1.0);
        }
    fb.depth = Grid(cam.height, cam.width, 2.0);
    for (size_t i = 0; i < fb.depth.v.size(); ++i) {
        const double a = out.alpha.v[i];
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        if (a > 1e-3) fb.depth.v[i] = out.depth.v[i] / a + sign * rng.uniform(0.1, 0.3);
    }
    fb.depth_valid = Mask(cam.height, cam.width, true);
    fb.tool = Mask(cam.height, cam.width, false);
    return fb;
}

/// Dense pseudo ground-truth flow near the rendered flow plus noise.
inline FlowField micro_flow_gt(Rng& rng, const Camera& cam) {
    FlowField f(cam.height, cam.width);
    for (auto& v : f.u.v) v = 0.3 * rng.normal();
    for (auto& v : f.v.v) v = 0.3 * rng.normal();
    return f;
}

} // namespace endowave::test
