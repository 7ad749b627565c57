#include "endowave/rwavelet.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "endowave/parallel.hpp"

namespace endowave {

RationalFilterBank design_filters(int q) {
    require(q >= 1, "design_filters: q must be >= 1");
    RationalFilterBank bank;
    bank.q = q;
    bank.a = static_cast<double>(q + 1) / q;
    bank.sigma = 1.0 / bank.a;
    bank.radius = static_cast<int>(std::ceil(6.0 * 2.0 * bank.sigma)) + q;
    const int r = bank.radius;
    const int n = 2 * r + 1;
    bank.h0.assign(n, 0.0);
    bank.h1.assign(n, 0.0);
    bank.g.assign(n, 0.0);

    // Numerators evaluated on t >= 0 and mirrored, which keeps the
    // antisymmetry of h1 and g exact in floating point.
    double sum_h0 = 0.0, sum_h1 = 0.0, sum_g = 0.0;
    for (int t = 0; t <= r; ++t) {
        const double env = std::exp(-0.5 * (t / bank.sigma) * (t / bank.sigma));
        const double env_wide = std::exp(-0.5 * (t / (2.0 * bank.sigma)) * (t / (2.0 * bank.sigma)));
        const double n0 = env;
        const double n1 = -t * env;
        const double ng = std::sin(std::numbers::pi * t / bank.a) * env_wide;
        bank.h0[r + t] = n0;
        bank.h0[r - t] = n0;
        bank.h1[r + t] = n1;
        bank.h1[r - t] = -n1;
        bank.g[r + t] = ng;
        bank.g[r - t] = -ng;
        const double two = (t == 0) ? 1.0 : 2.0;
        sum_h0 += two * n0;
        sum_h1 += two * std::abs(n1);
        sum_g += two * std::abs(ng);
    }
    for (int i = 0; i < n; ++i) {
        bank.h0[i] /= sum_h0;
        bank.h1[i] /= sum_h1;
        bank.g[i] /= sum_g;
    }
    return bank;
}

namespace {

inline int reflect(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

void check_support(const Grid& img, int radius, const char* who) {
    const int support = 2 * radius + 1;
    if (img.h < support || img.w < support)
        throw std::invalid_argument(std::string(who) + ": image smaller than filter support");
}

} // namespace

Grid correlate_rows(const Grid& img, const std::vector<double>& taps, int radius) {
    check_support(img, radius, "correlate_rows");
    Grid out(img.h, img.w);
    parallel_for(img.h, [&](size_t yb, size_t ye) {
        for (size_t y = yb; y < ye; ++y) {
            const double* row = &img.v[y * img.w];
            double* orow = &out.v[y * img.w];
            for (int x = 0; x < img.w; ++x) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += taps[static_cast<size_t>(k + radius)] * row[reflect(x + k, img.w)];
                orow[x] = acc;
            }
        }
    });
    return out;
}

Grid correlate_cols(const Grid& img, const std::vector<double>& taps, int radius) {
    check_support(img, radius, "correlate_cols");
    Grid out(img.h, img.w);
    parallel_for(img.w, [&](size_t xb, size_t xe) {
        for (size_t x = xb; x < xe; ++x) {
            for (int y = 0; y < img.h; ++y) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += taps[static_cast<size_t>(k + radius)] * img.at(reflect(y + k, img.h), static_cast<int>(x));
                out.at(y, static_cast<int>(x)) = acc;
            }
        }
    });
    return out;
}

Grid correlate_rows_adjoint(const Grid& gout, const std::vector<double>& taps, int radius) {
    Grid gin(gout.h, gout.w);
    parallel_for(gout.h, [&](size_t yb, size_t ye) {
        for (size_t y = yb; y < ye; ++y) {
            const double* grow = &gout.v[y * gout.w];
            double* irow = &gin.v[y * gout.w];
            for (int x = 0; x < gout.w; ++x) {
                const double gv = grow[x];
                if (gv == 0.0) continue;
                for (int k = -radius; k <= radius; ++k)
                    irow[reflect(x + k, gout.w)] += taps[static_cast<size_t>(k + radius)] * gv;
            }
        }
    });
    return gin;
}

Grid correlate_cols_adjoint(const Grid& gout, const std::vector<double>& taps, int radius) {
    Grid gin(gout.h, gout.w);
    parallel_for(gout.w, [&](size_t xb, size_t xe) {
        for (size_t x = xb; x < xe; ++x) {
            for (int y = 0; y < gout.h; ++y) {
                const double gv = gout.at(y, static_cast<int>(x));
                if (gv == 0.0) continue;
                for (int k = -radius; k <= radius; ++k)
                    gin.at(reflect(y + k, gout.h), static_cast<int>(x)) += taps[static_cast<size_t>(k + radius)] * gv;
            }
        }
    });
    return gin;
}

Grid convolve_sep(const Grid& img, const RationalFilterBank& bank,
                  const std::vector<double>& row_filter, const std::vector<double>& col_filter) {
    return correlate_cols(correlate_rows(img, row_filter, bank.radius), col_filter, bank.radius);
}

int resampled_dim(int n, double a) {
    return static_cast<int>(std::ceil(static_cast<double>(n) / a));
}

namespace {

struct LerpPlan {
    std::vector<int> i0;
    std::vector<double> frac;
};

LerpPlan make_plan(int n, int m) {
    LerpPlan plan;
    plan.i0.resize(m);
    plan.frac.resize(m);
    const double s = static_cast<double>(n) / m;
    for (int i = 0; i < m; ++i) {
        double x = (i + 0.5) * s - 0.5; // in [0, n-1] because s >= 1
        int i0 = static_cast<int>(std::floor(x));
        double f = x - i0;
        if (i0 >= n - 1) {
            i0 = n - 2 >= 0 ? n - 2 : 0;
            f = n >= 2 ? 1.0 : 0.0;
        }
        plan.i0[i] = i0;
        plan.frac[i] = f;
    }
    return plan;
}

} // namespace

Grid resample_rational(const Grid& field, double a) {
    require(a > 1.0 && a <= 2.0, "resample_rational: a must be in (1, 2]");
    const int mh = resampled_dim(field.h, a);
    const int mw = resampled_dim(field.w, a);
    const LerpPlan py = make_plan(field.h, mh);
    const LerpPlan px = make_plan(field.w, mw);
    // Rows first.
    Grid tmp(field.h, mw);
    for (int y = 0; y < field.h; ++y)
        for (int x = 0; x < mw; ++x) {
            const int i0 = px.i0[x];
            const double f = px.frac[x];
            tmp.at(y, x) = (1.0 - f) * field.at(y, i0) + f * field.at(y, i0 + 1);
        }
    Grid out(mh, mw);
    for (int y = 0; y < mh; ++y) {
        const int i0 = py.i0[y];
        const double f = py.frac[y];
        for (int x = 0; x < mw; ++x)
            out.at(y, x) = (1.0 - f) * tmp.at(i0, x) + f * tmp.at(i0 + 1, x);
    }
    return out;
}

Grid resample_rational_adjoint(const Grid& gout, int in_h, int in_w, double a) {
    const int mh = resampled_dim(in_h, a);
    const int mw = resampled_dim(in_w, a);
    require(gout.h == mh && gout.w == mw, "resample_rational_adjoint: shape mismatch");
    const LerpPlan py = make_plan(in_h, mh);
    const LerpPlan px = make_plan(in_w, mw);
    Grid tmp(in_h, mw);
    for (int y = 0; y < mh; ++y) {
        const int i0 = py.i0[y];
        const double f = py.frac[y];
        for (int x = 0; x < mw; ++x) {
            const double gv = gout.at(y, x);
            tmp.at(i0, x) += (1.0 - f) * gv;
            tmp.at(i0 + 1, x) += f * gv;
        }
    }
    Grid gin(in_h, in_w);
    for (int y = 0; y < in_h; ++y)
        for (int x = 0; x < mw; ++x) {
            const double gv = tmp.at(y, x);
            if (gv == 0.0) continue;
            const int i0 = px.i0[x];
            const double f = px.frac[x];
            gin.at(y, i0) += (1.0 - f) * gv;
            gin.at(y, i0 + 1) += f * gv;
        }
    return gin;
}

SubBands decompose_level(const Grid& img, const RationalFilterBank& bank) {
    require(img.h >= 8 && img.w >= 8, "decompose_level: image must be at least 8x8");
    const Grid rows_h0 = correlate_rows(img, bank.h0, bank.radius);
    const Grid rows_h1 = correlate_rows(img, bank.h1, bank.radius);
    const Grid rows_g = correlate_rows(img, bank.g, bank.radius);
    SubBands out;
    out.ll = resample_rational(correlate_cols(rows_h0, bank.h0, bank.radius), bank.a);
    out.lh = resample_rational(correlate_cols(rows_h0, bank.h1, bank.radius), bank.a);
    out.hl = resample_rational(correlate_cols(rows_h1, bank.h0, bank.radius), bank.a);
    out.hh = resample_rational(correlate_cols(rows_g, bank.g, bank.radius), bank.a);
    return out;
}

WaveletPyramid decompose(const Grid& img, const RationalFilterBank& bank, int levels) {
    require(levels >= 1, "decompose: need at least one level");
    WaveletPyramid pyr;
    Grid cur = img;
    for (int j = 0; j < levels; ++j) {
        if (cur.h < 8 || cur.w < 8 || cur.h < bank.support() || cur.w < bank.support())
            throw std::invalid_argument("decompose: image too small at level " + std::to_string(j));
        SubBands bands = decompose_level(cur, bank);
        cur = bands.ll;
        pyr.levels.push_back(std::move(bands));
    }
    return pyr;
}

namespace {

double band_norm(const Grid& a, const Grid& b) {
    require(a.same_shape(b), "wavelet_loss: pyramid shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        const double d = a.v[i] - b.v[i];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace

double wavelet_loss(const WaveletPyramid& a, const WaveletPyramid& b, const BandWeights& w) {
    require(a.levels.size() == b.levels.size(), "wavelet_loss: pyramid level count mismatch");
    double loss = 0.0;
    for (size_t j = 0; j < a.levels.size(); ++j) {
        loss += w.ll * band_norm(a.levels[j].ll, b.levels[j].ll);
        loss += w.lh * band_norm(a.levels[j].lh, b.levels[j].lh);
        loss += w.hl * band_norm(a.levels[j].hl, b.levels[j].hl);
        loss += w.hh * band_norm(a.levels[j].hh, b.levels[j].hh);
    }
    return loss;
}

namespace {

// d||A-B|| / dA for one band; zero at coincidence.
Grid band_grad(const Grid& a, const Grid& b, double lambda, double* loss_out) {
    const double n = band_norm(a, b);
    *loss_out += lambda * n;
    Grid g(a.h, a.w);
    if (n > 0.0) {
        const double scale = lambda / n;
        for (size_t i = 0; i < a.v.size(); ++i) g.v[i] = scale * (a.v[i] - b.v[i]);
    }
    return g;
}

// Adjoint of one band path: resample then the two correlations, reversed.
Grid band_adjoint(const Grid& gband, int in_h, int in_w, const RationalFilterBank& bank,
                  const std::vector<double>& row_filter, const std::vector<double>& col_filter) {
    Grid pre = resample_rational_adjoint(gband, in_h, in_w, bank.a);
    Grid grows = correlate_cols_adjoint(pre, col_filter, bank.radius);
    return correlate_rows_adjoint(grows, row_filter, bank.radius);
}

} // namespace

double wavelet_loss_grad(const Grid& a, const Grid& b, const RationalFilterBank& bank, int levels,
                         const BandWeights& w, Grid* grad_a) {
    WaveletPyramid pa = decompose(a, bank, levels);
    WaveletPyramid pb = decompose(b, bank, levels);
    double loss = 0.0;
    if (!grad_a) {
        loss = wavelet_loss(pa, pb, w);
        return loss;
    }
    // Inputs per level: level 0 sees `a`, level j sees LL^(j-1).
    std::vector<const Grid*> inputs(levels);
    inputs[0] = &a;
    for (int j = 1; j < levels; ++j) inputs[j] = &pa.levels[j - 1].ll;

    Grid g_next; // gradient flowing into the input of level j+1
    for (int j = levels - 1; j >= 0; --j) {
        const int ih = inputs[j]->h, iw = inputs[j]->w;
        Grid gll = band_grad(pa.levels[j].ll, pb.levels[j].ll, w.ll, &loss);
        if (j + 1 < levels)
            for (size_t i = 0; i < gll.v.size(); ++i) gll.v[i] += g_next.v[i];
        Grid glh = band_grad(pa.levels[j].lh, pb.levels[j].lh, w.lh, &loss);
        Grid ghl = band_grad(pa.levels[j].hl, pb.levels[j].hl, w.hl, &loss);
        Grid ghh = band_grad(pa.levels[j].hh, pb.levels[j].hh, w.hh, &loss);

        Grid gin = band_adjoint(gll, ih, iw, bank, bank.h0, bank.h0);
        Grid t1 = band_adjoint(glh, ih, iw, bank, bank.h0, bank.h1);
        Grid t2 = band_adjoint(ghl, ih, iw, bank, bank.h1, bank.h0);
        Grid t3 = band_adjoint(ghh, ih, iw, bank, bank.g, bank.g);
        for (size_t i = 0; i < gin.v.size(); ++i) gin.v[i] += t1.v[i] + t2.v[i] + t3.v[i];
        g_next = std::move(gin);
    }
    *grad_a = std::move(g_next);
    return loss;
}

} // namespace endowave
