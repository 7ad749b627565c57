#pragma once

#include <optional>
#include <string>

#include "endowave/camera.hpp"
#include "endowave/grid.hpp"

namespace endowave {

/// Dense 2-channel flow in pixels with a per-pixel validity mask.
struct FlowField {
    Grid u, v;
    Mask valid;

    FlowField() = default;
    FlowField(int h, int w) : u(h, w), v(h, w), valid(h, w, true) {}
    int height() const { return u.h; }
    int width() const { return u.w; }
};

/// 3D displacement of a primitive's center between two times.
Vec3 scene_flow(const Primitive4D& p, double t1, double t2);

/// Difference of the pinhole projections of the center at the two times.
/// Empty when the center is at or behind either near plane.
std::optional<Vec2> projected_flow(const Primitive4D& p, const Camera& cam1, double t1,
                                   const Camera& cam2, double t2);

/// Per-pixel forward-backward validity:
///   ||fwd(p) + bwd(p + fwd(p))||^2 < alpha (||fwd(p)||^2 + ||bwd(...)||^2) + beta
/// with bilinear sampling of bwd; out-of-bounds or invalid samples fail.
Mask consistency_mask(const FlowField& fwd, const FlowField& bwd, double alpha = 0.01,
                      double beta = 0.5);

/// Root-sum-square of masked per-pixel flow differences; 0 for an empty mask.
double flow_loss(const FlowField& rendered, const FlowField& pseudo_gt, const Mask& mask);

/// flow_loss plus d(loss)/d(rendered u, v); gradients may be null.
double flow_loss_grad(const FlowField& rendered, const FlowField& pseudo_gt, const Mask& mask,
                      Grid* d_u, Grid* d_v);

/// Mean Euclidean endpoint distance over masked pixels.
double epe(const FlowField& a, const FlowField& b, const Mask& mask);

struct BadMagicError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TruncatedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Middlebury .flo: "PIEH", i32 width, i32 height, row-major interleaved
/// float32 (u, v), little-endian. Values with magnitude above 1e9 load as
/// invalid pixels.
FlowField read_flo(const std::string& path);
void write_flo(const FlowField& field, const std::string& path);

} // namespace endowave
