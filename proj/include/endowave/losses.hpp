#pragma once

#include <optional>

#include "endowave/dataset.hpp"
#include "endowave/rasterizer.hpp"
#include "endowave/rwavelet.hpp"

namespace endowave {

struct LossWeights {
    double rgb = 1.0;
    double depth = 0.5;
    double flow = 0.02;
    double wavelet = 0.1;
    BandWeights bands{};
    double lambda_ssim = 0.2; // SSIM share inside the rgb term
};

/// (1 - lambda_ssim) * L1 + lambda_ssim * (1 - SSIM) over masked pixels.
double rgb_loss(const ColorImage& rendered, const ColorImage& observed, const Mask& mask,
                double lambda_ssim = 0.2);
double rgb_loss_grad(const ColorImage& rendered, const ColorImage& observed, const Mask& mask,
                     double lambda_ssim, ColorImage* d_rendered);

/// Mean absolute difference over masked pixels of alpha-normalized depth.
double depth_loss(const Grid& rendered_depth_normalized, const Grid& observed_depth, const Mask& mask);

/// Training form: normalizes the composited depth by alpha internally and
/// fades pixels in over alpha in [1e-3, 1e-2] so the loss stays continuous.
/// d_depth / d_alpha may be null.
double depth_loss_grad(const Grid& depth_composite, const Grid& alpha, const Grid& observed_depth,
                       const Mask& mask, Grid* d_depth, Grid* d_alpha);

/// Everything total_loss needs for one supervised step: the observed frame,
/// the flow-pair geometry, pseudo ground-truth flow, and the mask it was
/// validated with.
struct FramePairInput {
    const FrameBundle* frame = nullptr;
    std::optional<FlowPair> flow_pair;
    const FlowField* pseudo_gt = nullptr; // forward flow frame -> pair frame
    Mask flow_mask;                       // consistency-validated, tools removed
};

struct LossComponents {
    double rgb = 0.0;
    double depth = 0.0;
    double flow = 0.0;
    double wavelet = 0.0;
    double total = 0.0;
};

/// Weighted objective; the wavelet term runs per color channel on
/// tool-masked differences.
LossComponents total_loss(const std::vector<Primitive4D>& scene, const FramePairInput& pair,
                          const LossWeights& weights, const RationalFilterBank& bank, int levels);

/// total_loss plus exact reverse-mode gradients of every primitive parameter.
/// Throws when the loss or a gradient goes non-finite, naming the primitive.
LossComponents loss_backward(const std::vector<Primitive4D>& scene, const FramePairInput& pair,
                             const LossWeights& weights, const RationalFilterBank& bank, int levels,
                             GradientSet* grads);

} // namespace endowave
