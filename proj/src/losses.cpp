#include "endowave/losses.hpp"

#include <cmath>

#include "endowave/metrics.hpp"

namespace endowave {

double rgb_loss(const ColorImage& rendered, const ColorImage& observed, const Mask& mask,
                double lambda_ssim) {
    return rgb_loss_grad(rendered, observed, mask, lambda_ssim, nullptr);
}

double rgb_loss_grad(const ColorImage& rendered, const ColorImage& observed, const Mask& mask,
                     double lambda_ssim, ColorImage* d_rendered) {
    require(rendered.same_shape(observed), "rgb_loss: dimension mismatch");
    require(mask.same_shape(rendered.ch[0]), "rgb_loss: mask dimension mismatch");
    const size_t n = mask.count();
    require(n > 0, "rgb_loss: empty mask");
    const double unit = 1.0 / (3.0 * static_cast<double>(n));

    double l1 = 0.0;
    if (d_rendered) *d_rendered = ColorImage(rendered.height(), rendered.width());
    for (int y = 0; y < rendered.height(); ++y)
        for (int x = 0; x < rendered.width(); ++x) {
            if (!mask.at(y, x)) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = rendered.ch[c].at(y, x) - observed.ch[c].at(y, x);
                l1 += std::abs(d) * unit;
                if (d_rendered)
                    d_rendered->ch[c].at(y, x) = (1.0 - lambda_ssim) * unit * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
            }
        }

    double ssim_value;
    if (lambda_ssim != 0.0) {
        ColorImage d_ssim;
        ssim_value = ssim_grad(rendered, observed, mask, d_rendered ? &d_ssim : nullptr);
        if (d_rendered)
            for (int c = 0; c < 3; ++c)
                for (size_t i = 0; i < d_ssim.ch[c].v.size(); ++i)
                    d_rendered->ch[c].v[i] += -lambda_ssim * d_ssim.ch[c].v[i];
    } else {
        ssim_value = 1.0;
    }
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim_value);
}

double depth_loss(const Grid& rendered_depth_normalized, const Grid& observed_depth, const Mask& mask) {
    require(rendered_depth_normalized.same_shape(observed_depth), "depth_loss: dimension mismatch");
    require(mask.same_shape(observed_depth), "depth_loss: mask dimension mismatch");
    double sum = 0.0;
    size_t n = 0;
    for (int y = 0; y < observed_depth.h; ++y)
        for (int x = 0; x < observed_depth.w; ++x) {
            if (!mask.at(y, x)) continue;
            sum += std::abs(rendered_depth_normalized.at(y, x) - observed_depth.at(y, x));
            ++n;
        }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

namespace {

constexpr double kAlphaFloor = 1e-3;
constexpr double kAlphaFull = 1e-2;

// C1 fade-in over alpha in [floor, full]: zero value and slope at both ends.
inline double alpha_ramp(double a, double* slope) {
    const double t = (a - kAlphaFloor) / (kAlphaFull - kAlphaFloor);
    if (t <= 0.0) {
        *slope = 0.0;
        return 0.0;
    }
    if (t >= 1.0) {
        *slope = 0.0;
        return 1.0;
    }
    *slope = 6.0 * t * (1.0 - t) / (kAlphaFull - kAlphaFloor);
    return t * t * (3.0 - 2.0 * t);
}

} // namespace

double depth_loss_grad(const Grid& depth_composite, const Grid& alpha, const Grid& observed_depth,
                       const Mask& mask, Grid* d_depth, Grid* d_alpha) {
    require(depth_composite.same_shape(observed_depth), "depth_loss: dimension mismatch");
    const size_t n = mask.count();
    if (d_depth) *d_depth = Grid(observed_depth.h, observed_depth.w);
    if (d_alpha) *d_alpha = Grid(observed_depth.h, observed_depth.w);
    if (n == 0) return 0.0;
    const double unit = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    for (int y = 0; y < observed_depth.h; ++y)
        for (int x = 0; x < observed_depth.w; ++x) {
            if (!mask.at(y, x)) continue;
            const double a = alpha.at(y, x);
            if (a <= kAlphaFloor) continue; // ramp weight is zero here
            double ramp_slope = 0.0;
            const double ramp = alpha_ramp(a, &ramp_slope);
            const double dn = depth_composite.at(y, x) / a;
            const double diff = dn - observed_depth.at(y, x);
            const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            loss += unit * ramp * std::abs(diff);
            if (d_depth) d_depth->at(y, x) += unit * ramp * sign / a;
            if (d_alpha) {
                double da = unit * ramp * sign * (-depth_composite.at(y, x) / (a * a));
                da += unit * ramp_slope * std::abs(diff);
                d_alpha->at(y, x) += da;
            }
        }
    return loss;
}

namespace {

struct Masked {
    Grid a, b;
};

// Zeroing tool pixels in both images makes the band difference, and hence the
// gradient, vanish there.
Masked masked_channel(const Grid& rendered, const Grid& observed, const Mask& tool_free) {
    Masked m{rendered, observed};
    for (int y = 0; y < rendered.h; ++y)
        for (int x = 0; x < rendered.w; ++x)
            if (!tool_free.at(y, x)) {
                m.a.at(y, x) = 0.0;
                m.b.at(y, x) = 0.0;
            }
    return m;
}

struct EvalResult {
    LossComponents comps;
    RenderOutput out;
    RenderCache cache;
    OutputGrads grads;
    bool with_grads = false;
};

EvalResult evaluate(const std::vector<Primitive4D>& scene, const FramePairInput& pair,
                    const LossWeights& weights, const RationalFilterBank& bank, int levels,
                    bool with_grads) {
    require(pair.frame != nullptr, "total_loss: missing frame");
    const FrameBundle& fb = *pair.frame;
    RenderSettings settings;
    settings.transmittance_min = 0.0; // exact composite for exact gradients

    EvalResult r;
    r.with_grads = with_grads;
    r.out = render_cached(scene, fb.cam, fb.time, pair.flow_pair, settings, &r.cache);

    const int h = fb.cam.height, w = fb.cam.width;
    Mask not_tool(h, w, false);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) not_tool.set(y, x, !fb.tool.at(y, x));

    if (with_grads) {
        r.grads.d_rgb = ColorImage(h, w);
        r.grads.d_depth = Grid(h, w);
        r.grads.d_alpha = Grid(h, w);
        r.grads.d_flow_u = Grid(h, w);
        r.grads.d_flow_v = Grid(h, w);
    }

    if (weights.rgb != 0.0) {
        ColorImage d_rgb;
        r.comps.rgb = rgb_loss_grad(r.out.rgb, fb.rgb, not_tool, weights.lambda_ssim,
                                    with_grads ? &d_rgb : nullptr);
        if (with_grads)
            for (int c = 0; c < 3; ++c)
                for (size_t i = 0; i < d_rgb.ch[c].v.size(); ++i)
                    r.grads.d_rgb.ch[c].v[i] += weights.rgb * d_rgb.ch[c].v[i];
    }

    if (weights.depth != 0.0) {
        Mask depth_mask(h, w, false);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                depth_mask.set(y, x, not_tool.at(y, x) && fb.depth_valid.at(y, x));
        Grid d_depth, d_alpha;
        r.comps.depth = depth_loss_grad(r.out.depth, r.out.alpha, fb.depth, depth_mask,
                                        with_grads ? &d_depth : nullptr, with_grads ? &d_alpha : nullptr);
        if (with_grads)
            for (size_t i = 0; i < d_depth.v.size(); ++i) {
                r.grads.d_depth.v[i] += weights.depth * d_depth.v[i];
                r.grads.d_alpha.v[i] += weights.depth * d_alpha.v[i];
            }
    }

    if (weights.flow != 0.0 && pair.pseudo_gt && pair.flow_pair) {
        FlowField rendered_flow(h, w);
        rendered_flow.u = r.out.flow_u;
        rendered_flow.v = r.out.flow_v;
        Grid d_u, d_v;
        r.comps.flow = flow_loss_grad(rendered_flow, *pair.pseudo_gt, pair.flow_mask,
                                      with_grads ? &d_u : nullptr, with_grads ? &d_v : nullptr);
        if (with_grads)
            for (size_t i = 0; i < d_u.v.size(); ++i) {
                r.grads.d_flow_u.v[i] += weights.flow * d_u.v[i];
                r.grads.d_flow_v.v[i] += weights.flow * d_v.v[i];
            }
    }

    if (weights.wavelet != 0.0) {
        for (int c = 0; c < 3; ++c) {
            const Masked m = masked_channel(r.out.rgb.ch[c], fb.rgb.ch[c], not_tool);
            Grid d_a;
            r.comps.wavelet += wavelet_loss_grad(m.a, m.b, bank, levels, weights.bands,
                                                 with_grads ? &d_a : nullptr);
            if (with_grads)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        if (not_tool.at(y, x))
                            r.grads.d_rgb.ch[c].at(y, x) += weights.wavelet * d_a.at(y, x);
        }
    }

    r.comps.total = weights.rgb * r.comps.rgb + weights.depth * r.comps.depth +
                    weights.flow * r.comps.flow + weights.wavelet * r.comps.wavelet;
    return r;
}

} // namespace

LossComponents total_loss(const std::vector<Primitive4D>& scene, const FramePairInput& pair,
                          const LossWeights& weights, const RationalFilterBank& bank, int levels) {
    return evaluate(scene, pair, weights, bank, levels, false).comps;
}

LossComponents loss_backward(const std::vector<Primitive4D>& scene, const FramePairInput& pair,
                             const LossWeights& weights, const RationalFilterBank& bank, int levels,
                             GradientSet* grads) {
    EvalResult r = evaluate(scene, pair, weights, bank, levels, true);
    grads->resize_like(scene);
    render_backward(scene, r.cache, r.grads, grads);
    if (!std::isfinite(r.comps.total)) throw std::runtime_error("loss_backward: non-finite loss");
    int bad = -1;
    if (!grads->all_finite(&bad))
        throw std::runtime_error("loss_backward: non-finite gradient at primitive " + std::to_string(bad));
    return r.comps;
}

} // namespace endowave
