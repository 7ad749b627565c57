#pragma once

#include "endowave/camera.hpp"
#include "endowave/gaussian4d.hpp"
#include "endowave/rng.hpp"

namespace endowave::test {

inline Vec4 random_unit_quat(Rng& rng) {
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return q.normalized();
}

/// A well-conditioned random primitive; scales stay moderate so conditioning
/// and density evaluation are accurate to tight tolerances.
inline Primitive4D random_primitive(Rng& rng, int sh_degree = 3, int n_temporal = 2) {
    Primitive4D p(sh_degree, n_temporal);
    for (int i = 0; i < 3; ++i) p.mu_x[i] = rng.uniform(-1.0, 1.0);
    p.mu_t = rng.uniform();
    for (int i = 0; i < 4; ++i) p.log_scale[i] = rng.uniform(-0.7, 0.4);
    p.rot_left = random_unit_quat(rng);
    p.rot_right = random_unit_quat(rng);
    p.logit_opacity = rng.uniform(-2.0, 2.0);
    for (double& c : p.sh_coeffs) c = rng.uniform(-0.3, 0.3);
    for (size_t i = 1; i < p.phases.size(); ++i) p.phases[i] = rng.uniform(-1.5, 1.5);
    return p;
}

inline Camera test_camera(int w = 32, int h = 32, double focal = 35.0) {
    Camera cam;
    cam.fx = cam.fy = focal;
    cam.cx = (w - 1) / 2.0;
    cam.cy = (h - 1) / 2.0;
    cam.width = w;
    cam.height = h;
    return cam;
}

} // namespace endowave::test
