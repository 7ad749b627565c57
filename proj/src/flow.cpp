#include "endowave/flow.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace endowave {

Vec3 scene_flow(const Primitive4D& p, double t1, double t2) {
    return position_at(p, t2) - position_at(p, t1);
}

std::optional<Vec2> projected_flow(const Primitive4D& p, const Camera& cam1, double t1,
                                   const Camera& cam2, double t2) {
    const auto p1 = cam1.project(position_at(p, t1));
    const auto p2 = cam2.project(position_at(p, t2));
    if (!p1 || !p2) return std::nullopt;
    return *p2 - *p1;
}

namespace {

struct Sample {
    double u, v;
    bool ok;
};

// Bilinear sample by value. Out-of-bounds targets fail; corner values are
// used regardless of validity flags, guarded against sentinel magnitudes, so
// unreliable stored flow fails the consistency inequality rather than being
// silently skipped.
Sample sample_flow(const FlowField& f, double x, double y) {
    if (x < 0.0 || y < 0.0 || x > f.width() - 1 || y > f.height() - 1) return {0, 0, false};
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    if (x0 >= f.width() - 1) x0 = f.width() - 2 >= 0 ? f.width() - 2 : 0;
    if (y0 >= f.height() - 1) y0 = f.height() - 2 >= 0 ? f.height() - 2 : 0;
    const int x1 = std::min(x0 + 1, f.width() - 1);
    const int y1 = std::min(y0 + 1, f.height() - 1);
    for (int yy : {y0, y1})
        for (int xx : {x0, x1}) {
            const double u = f.u.at(yy, xx), v = f.v.at(yy, xx);
            if (!std::isfinite(u) || !std::isfinite(v) || std::abs(u) >= 1e9 || std::abs(v) >= 1e9)
                return {0, 0, false};
        }
    const double fx = x - x0, fy = y - y0;
    const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy), w10 = (1 - fx) * fy, w11 = fx * fy;
    return {w00 * f.u.at(y0, x0) + w01 * f.u.at(y0, x1) + w10 * f.u.at(y1, x0) + w11 * f.u.at(y1, x1),
            w00 * f.v.at(y0, x0) + w01 * f.v.at(y0, x1) + w10 * f.v.at(y1, x0) + w11 * f.v.at(y1, x1),
            true};
}

} // namespace

Mask consistency_mask(const FlowField& fwd, const FlowField& bwd, double alpha, double beta) {
    require(fwd.u.same_shape(bwd.u), "consistency_mask: dimension mismatch");
    Mask mask(fwd.height(), fwd.width(), false);
    for (int y = 0; y < fwd.height(); ++y)
        for (int x = 0; x < fwd.width(); ++x) {
            if (!fwd.valid.at(y, x)) continue;
            const double fu = fwd.u.at(y, x), fv = fwd.v.at(y, x);
            if (!std::isfinite(fu) || !std::isfinite(fv)) continue;
            const Sample b = sample_flow(bwd, x + fu, y + fv);
            if (!b.ok) continue;
            const double du = fu + b.u, dv = fv + b.v;
            const double diff = du * du + dv * dv;
            const double mag = fu * fu + fv * fv + b.u * b.u + b.v * b.v;
            if (diff < alpha * mag + beta) mask.set(y, x, true);
        }
    return mask;
}

double flow_loss(const FlowField& rendered, const FlowField& pseudo_gt, const Mask& mask) {
    return flow_loss_grad(rendered, pseudo_gt, mask, nullptr, nullptr);
}

double flow_loss_grad(const FlowField& rendered, const FlowField& pseudo_gt, const Mask& mask,
                      Grid* d_u, Grid* d_v) {
    require(rendered.u.same_shape(pseudo_gt.u), "flow_loss: dimension mismatch");
    require(mask.same_shape(rendered.u), "flow_loss: mask dimension mismatch");
    double sum = 0.0;
    for (int y = 0; y < rendered.height(); ++y)
        for (int x = 0; x < rendered.width(); ++x) {
            if (!mask.at(y, x)) continue;
            const double du = rendered.u.at(y, x) - pseudo_gt.u.at(y, x);
            const double dv = rendered.v.at(y, x) - pseudo_gt.v.at(y, x);
            sum += du * du + dv * dv;
        }
    const double loss = std::sqrt(sum);
    if (d_u && d_v) {
        *d_u = Grid(rendered.height(), rendered.width());
        *d_v = Grid(rendered.height(), rendered.width());
        if (loss > 0.0) {
            for (int y = 0; y < rendered.height(); ++y)
                for (int x = 0; x < rendered.width(); ++x) {
                    if (!mask.at(y, x)) continue;
                    d_u->at(y, x) = (rendered.u.at(y, x) - pseudo_gt.u.at(y, x)) / loss;
                    d_v->at(y, x) = (rendered.v.at(y, x) - pseudo_gt.v.at(y, x)) / loss;
                }
        }
    }
    return loss;
}

double epe(const FlowField& a, const FlowField& b, const Mask& mask) {
    require(a.u.same_shape(b.u), "epe: dimension mismatch");
    require(mask.same_shape(a.u), "epe: mask dimension mismatch");
    double sum = 0.0;
    size_t n = 0;
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            if (!mask.at(y, x)) continue;
            const double du = a.u.at(y, x) - b.u.at(y, x);
            const double dv = a.v.at(y, x) - b.v.at(y, x);
            sum += std::sqrt(du * du + dv * dv);
            ++n;
        }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

namespace {

constexpr float kFloTag = 202021.25f;
constexpr double kFloInvalid = 1e9;

void put_f32(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                          static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_f32(std::istream& is, float* v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    uint32_t u = static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
                 static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
    std::memcpy(v, &u, 4);
    return true;
}

void put_i32(std::ostream& os, int32_t v) { put_f32(os, std::bit_cast<float>(v)); }

bool get_i32(std::istream& is, int32_t* v) {
    float f;
    if (!get_f32(is, &f)) return false;
    *v = std::bit_cast<int32_t>(f);
    return true;
}

} // namespace

FlowField read_flo(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw TruncatedError("flo: cannot open: " + path);
    float tag;
    if (!get_f32(is, &tag)) throw TruncatedError("flo: truncated header: " + path);
    if (tag != kFloTag) throw BadMagicError("flo: bad magic: " + path);
    int32_t w, h;
    if (!get_i32(is, &w) || !get_i32(is, &h)) throw TruncatedError("flo: truncated header: " + path);
    if (w <= 0 || h <= 0 || w > 1 << 20 || h > 1 << 20)
        throw TruncatedError("flo: implausible dimensions: " + path);
    FlowField f(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float u, v;
            if (!get_f32(is, &u) || !get_f32(is, &v))
                throw TruncatedError("flo: truncated payload: " + path);
            f.u.at(y, x) = u;
            f.v.at(y, x) = v;
            if (!(std::abs(static_cast<double>(u)) < kFloInvalid &&
                  std::abs(static_cast<double>(v)) < kFloInvalid) ||
                !std::isfinite(u) || !std::isfinite(v))
                f.valid.set(y, x, false);
        }
    return f;
}

void write_flo(const FlowField& field, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("flo: cannot open for write: " + path);
    os.write("PIEH", 4);
    put_i32(os, field.width());
    put_i32(os, field.height());
    for (int y = 0; y < field.height(); ++y)
        for (int x = 0; x < field.width(); ++x) {
            if (field.valid.at(y, x)) {
                put_f32(os, static_cast<float>(field.u.at(y, x)));
                put_f32(os, static_cast<float>(field.v.at(y, x)));
            } else {
                put_f32(os, 1e10f);
                put_f32(os, 1e10f);
            }
        }
    if (!os) throw std::runtime_error("flo: write failed: " + path);
}

} // namespace endowave
