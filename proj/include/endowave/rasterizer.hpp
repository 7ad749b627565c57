#pragma once

#include <optional>
#include <vector>

#include "endowave/camera.hpp"
#include "endowave/grid.hpp"

namespace endowave {

constexpr int kTileSize = 16;
/// Screen-space dilation added to the projected covariance diagonal, px^2.
constexpr double kDilation = 0.3;
/// Gaussian value at which a contribution reaches exactly zero.
constexpr double kGaussCut = 1.0 / 255.0;
/// Mahalanobis^2 matching kGaussCut; beyond it splats contribute nothing,
/// so tile assignment and viewport culling based on it are exact.
inline const double kCutoffMahalSq = -2.0 * std::log(kGaussCut);

struct Splat2D {
    Vec2 mean2;
    Mat2 cov2;
    Mat2 inv_cov2;
    double depth = 0.0;
    double effective_opacity = 0.0; // o * temporal_weight
    Vec3 color = Vec3::Zero();
    Vec2 flow2 = Vec2::Zero();
    bool flow_valid = false;
    int prim_index = -1;
};

/// Contribution profile: a C1-continuous shelf on the Gaussian factor that is
/// exactly zero at G = kGaussCut and exactly 1 at the peak.
inline double gauss_shelf(double gauss) {
    if (gauss <= kGaussCut) return 0.0;
    const double s = (gauss - kGaussCut) / (1.0 - kGaussCut);
    return s * s;
}

/// EWA projection of a time-conditioned Gaussian. Returns empty when the
/// center is at or behind the near plane or the cutoff ellipse misses the
/// viewport. effective opacity is opacity * g.temporal_weight.
std::optional<Splat2D> project_gaussian(const ConditionalGaussian3D& g, const Vec3& color,
                                        double opacity, const Camera& cam);

struct FlowPair {
    double t1 = 0.0;
    double t2 = 0.0;
    Camera cam1;
    Camera cam2;
};

struct RenderSettings {
    /// Front-to-back compositing stops when transmittance drops below this.
    /// The training path uses 0 so the composite is an exact sum.
    double transmittance_min = 1e-4;
    /// Divides depth and flow by alpha (> 1e-3) for visualization.
    bool normalize_composites = false;
};

struct RenderOutput {
    ColorImage rgb;
    Grid depth;
    Grid alpha;
    Grid flow_u, flow_v;
    bool has_flow = false;
};

/// Per-splat intermediates kept for the backward pass.
struct SplatCtx {
    Splat2D splat;
    ConditionalGaussian3D cond; // at render time
    Vec3 x_cam;                 // camera frame at render time
    Vec3 dir;                   // unit view direction, camera center -> mean3
    double dir_len = 0.0;
    Vec3 raw_color;             // TEASH sum before offset/clamp
    double opacity = 0.0;       // sigmoid(logit)
    Vec3 pos2;                  // world position at t2 (flow pair only)
    Vec3 x_cam2;                // camera frame at t2
};

struct RenderCache {
    std::vector<SplatCtx> splats;
    std::vector<std::vector<int>> tile_splats; // sorted by (depth, prim_index)
    int tiles_x = 0, tiles_y = 0;
    Camera cam;
    double t = 0.0;
    std::optional<FlowPair> flow;
    RenderSettings settings;
};

/// Tiled front-to-back compositor. Deterministic: per-tile depth sort with
/// (depth, primitive index) tie-break, tiles write disjoint pixels.
RenderOutput render(const std::vector<Primitive4D>& scene, const Camera& cam, double t,
                    const std::optional<FlowPair>& flow_pair = std::nullopt,
                    const RenderSettings& settings = RenderSettings{});

/// render plus the cache consumed by render_backward.
RenderOutput render_cached(const std::vector<Primitive4D>& scene, const Camera& cam, double t,
                           const std::optional<FlowPair>& flow_pair, const RenderSettings& settings,
                           RenderCache* cache);

/// Untiled brute-force compositor with the identical contract; test oracle.
RenderOutput render_reference(const std::vector<Primitive4D>& scene, const Camera& cam, double t,
                              const std::optional<FlowPair>& flow_pair = std::nullopt,
                              const RenderSettings& settings = RenderSettings{});

/// Reverse-mode gradients of every primitive parameter.
struct GradientSet {
    std::vector<Vec3> mu_x;
    std::vector<double> mu_t;
    std::vector<Vec4> log_scale;
    std::vector<Vec4> rot_left;
    std::vector<Vec4> rot_right;
    std::vector<double> logit_opacity;
    std::vector<std::vector<double>> sh_coeffs;
    std::vector<std::vector<double>> phases;
    /// Accumulated screen-space positional gradient norm and visibility, for
    /// density control.
    std::vector<double> mean2_grad_norm;
    std::vector<uint8_t> visible;

    void resize_like(const std::vector<Primitive4D>& scene);
    void set_zero();
    void accumulate(const GradientSet& other); // element-wise add
    bool all_finite(int* bad_index = nullptr) const;
};

/// Gradients of the rendered channels with respect to the outputs.
struct OutputGrads {
    ColorImage d_rgb;
    Grid d_depth;
    Grid d_alpha;
    Grid d_flow_u, d_flow_v;
};

/// Backpropagates per-pixel output gradients through compositing, projection,
/// appearance, and time conditioning into `grads` (accumulated, not reset).
/// Tile-local partials are reduced in fixed tile order, so results are
/// independent of the thread count.
void render_backward(const std::vector<Primitive4D>& scene, const RenderCache& cache,
                     const OutputGrads& dout, GradientSet* grads);

} // namespace endowave
