#include "endowave/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "endowave/image_io.hpp"
#include "endowave/rng.hpp"

namespace fs = std::filesystem;

namespace endowave {

namespace {

std::string frame_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", index);
    return buf;
}

void assign_split(Dataset& ds) {
    ds.train_idx.clear();
    ds.test_idx.clear();
    for (size_t i = 0; i < ds.frames.size(); ++i) {
        if (ds.frames[i].index % 8 == 7)
            ds.test_idx.push_back(static_cast<int>(i));
        else
            ds.train_idx.push_back(static_cast<int>(i));
    }
}

void normalize_times(Dataset& ds) {
    if (ds.frames.empty()) return;
    double lo = ds.frames.front().time, hi = lo;
    for (const auto& f : ds.frames) {
        lo = std::min(lo, f.time);
        hi = std::max(hi, f.time);
    }
    const double span = hi - lo;
    for (auto& f : ds.frames) f.time = span > 0.0 ? (f.time - lo) / span : 0.0;
}

} // namespace

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    const fs::path poses_path = root / "poses.json";
    std::ifstream is(poses_path);
    if (!is) throw std::runtime_error("load_dataset: missing " + poses_path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("load_dataset: unreadable pose file " + poses_path.string() + ": " + e.what());
    }

    Camera base;
    base.fx = j.at("fx").get<double>();
    base.fy = j.at("fy").get<double>();
    base.cx = j.at("cx").get<double>();
    base.cy = j.at("cy").get<double>();
    base.width = j.at("width").get<int>();
    base.height = j.at("height").get<int>();
    if (base.fx <= 0.0 || base.fy <= 0.0 || base.width <= 0 || base.height <= 0)
        throw std::runtime_error("load_dataset: invalid intrinsics in " + poses_path.string());
    const double depth_png_scale = j.value("depth_png_scale", 1.0);

    Dataset ds;
    const bool have_masks = fs::exists(root / "masks");
    for (const auto& jf : j.at("frames")) {
        FrameBundle fb;
        fb.index = jf.at("index").get<int>();
        fb.time = jf.at("time").get<double>();
        fb.cam = base;
        const auto& r = jf.at("R");
        const auto& t = jf.at("t");
        for (int k = 0; k < 9; ++k) fb.cam.R(k / 3, k % 3) = r[k].get<double>();
        for (int k = 0; k < 3; ++k) fb.cam.t[k] = t[k].get<double>();
        if (!fb.cam.orthonormal())
            throw std::runtime_error("load_dataset: non-orthonormal rotation for frame " +
                                     std::to_string(fb.index));

        const std::string name = frame_name(fb.index);
        const fs::path img_path = root / "images" / (name + ".png");
        if (!fs::exists(img_path)) throw std::runtime_error("load_dataset: missing " + img_path.string());
        fb.rgb = read_png_rgb(img_path.string());
        if (fb.rgb.height() != base.height || fb.rgb.width() != base.width)
            throw std::runtime_error("load_dataset: dimension mismatch in " + img_path.string());

        const fs::path pfm_path = root / "depth" / (name + ".pfm");
        const fs::path dpng_path = root / "depth" / (name + ".png");
        if (fs::exists(pfm_path)) {
            fb.depth = read_pfm(pfm_path.string());
        } else if (fs::exists(dpng_path)) {
            fb.depth = read_png_gray(dpng_path.string());
            for (double& v : fb.depth.v) v *= depth_png_scale;
        } else {
            throw std::runtime_error("load_dataset: missing " + pfm_path.string());
        }
        if (!fb.depth.same_shape(fb.rgb.ch[0]))
            throw std::runtime_error("load_dataset: dimension mismatch in " + pfm_path.string());
        fb.depth_valid = Mask(base.height, base.width, false);
        for (int y = 0; y < base.height; ++y)
            for (int x = 0; x < base.width; ++x)
                fb.depth_valid.set(y, x, std::isfinite(fb.depth.at(y, x)) && fb.depth.at(y, x) > 0.0);

        if (have_masks) {
            const fs::path mask_path = root / "masks" / (name + ".png");
            if (!fs::exists(mask_path)) throw std::runtime_error("load_dataset: missing " + mask_path.string());
            fb.tool = read_mask_png(mask_path.string());
            if (!fb.tool.same_shape(fb.rgb.ch[0]))
                throw std::runtime_error("load_dataset: dimension mismatch in " + mask_path.string());
        } else {
            fb.tool = Mask(base.height, base.width, false);
        }
        ds.frames.push_back(std::move(fb));
    }
    std::sort(ds.frames.begin(), ds.frames.end(),
              [](const FrameBundle& a, const FrameBundle& b) { return a.index < b.index; });

    ds.flow_fwd.assign(ds.frames.empty() ? 0 : ds.frames.size() - 1, std::nullopt);
    ds.flow_bwd.assign(ds.flow_fwd.size(), std::nullopt);
    for (size_t i = 0; i + 1 < ds.frames.size(); ++i) {
        const std::string name = frame_name(ds.frames[i].index);
        const fs::path fwd = root / "flow" / (name + "_fwd.flo");
        const fs::path bwd = root / "flow" / (name + "_bwd.flo");
        if (fs::exists(fwd)) ds.flow_fwd[i] = read_flo(fwd.string());
        if (fs::exists(bwd)) ds.flow_bwd[i] = read_flo(bwd.string());
    }

    normalize_times(ds);
    assign_split(ds);
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root / "images");
    fs::create_directories(root / "depth");
    fs::create_directories(root / "masks");
    bool any_flow = false;
    for (const auto& f : ds.flow_fwd) any_flow = any_flow || f.has_value();
    if (any_flow) fs::create_directories(root / "flow");

    nlohmann::json j;
    const Camera& base = ds.frames.at(0).cam;
    j["fx"] = base.fx;
    j["fy"] = base.fy;
    j["cx"] = base.cx;
    j["cy"] = base.cy;
    j["width"] = base.width;
    j["height"] = base.height;
    auto& frames = j["frames"] = nlohmann::json::array();
    for (const auto& fb : ds.frames) {
        const std::string name = frame_name(fb.index);
        write_png_rgb8((root / "images" / (name + ".png")).string(), fb.rgb);
        Grid depth = fb.depth;
        for (int y = 0; y < depth.h; ++y)
            for (int x = 0; x < depth.w; ++x)
                if (!fb.depth_valid.at(y, x)) depth.at(y, x) = 0.0; // nonpositive = invalid
        write_pfm((root / "depth" / (name + ".pfm")).string(), depth);
        write_mask_png((root / "masks" / (name + ".png")).string(), fb.tool);
        nlohmann::json jf;
        jf["index"] = fb.index;
        jf["time"] = fb.time;
        std::vector<double> r(9), t(3);
        for (int k = 0; k < 9; ++k) r[k] = fb.cam.R(k / 3, k % 3);
        for (int k = 0; k < 3; ++k) t[k] = fb.cam.t[k];
        jf["R"] = r;
        jf["t"] = t;
        frames.push_back(std::move(jf));
    }
    std::ofstream os(root / "poses.json");
    if (!os) throw std::runtime_error("save_dataset: cannot write poses.json");
    os << j.dump(2) << "\n";

    for (size_t i = 0; i < ds.flow_fwd.size(); ++i) {
        const std::string name = frame_name(ds.frames[i].index);
        if (ds.flow_fwd[i]) write_flo(*ds.flow_fwd[i], (root / "flow" / (name + "_fwd.flo")).string());
        if (ds.flow_bwd[i]) write_flo(*ds.flow_bwd[i], (root / "flow" / (name + "_bwd.flo")).string());
    }
}

namespace {

struct Blob {
    BlobSpec spec;
    Vec2 center(double frames_elapsed, double tau) const {
        return spec.center0 + spec.velocity * frames_elapsed +
               spec.sin_amp * std::sin(2.0 * std::numbers::pi * tau + spec.sin_phase) * spec.sin_dir;
    }
};

// Opaque core with a Gaussian skirt, truncated at the support radius.
double blob_alpha(double r, double radius) {
    const double core = 0.6 * radius;
    if (r >= radius) return 0.0;
    if (r <= core) return 1.0;
    const double sigma = (radius - core) / 3.0;
    const double d = r - core;
    return std::exp(-0.5 * d * d / (sigma * sigma));
}

Vec3 background_color(double seed_a, double seed_b, int x, int y, int w, int h) {
    const double u = static_cast<double>(x) / w - 0.5;
    const double v = static_cast<double>(y) / h - 0.5;
    Vec3 c;
    c[0] = 0.45 + 0.20 * u + 0.10 * std::sin(2.0 * std::numbers::pi * (u + v) + seed_a);
    c[1] = 0.42 - 0.15 * v + 0.10 * std::sin(4.0 * std::numbers::pi * u + seed_b);
    c[2] = 0.40 + 0.12 * (u - v);
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(c[k], 0.05, 0.95);
    return c;
}

} // namespace

Dataset make_synthetic(uint64_t seed, const SynthSpec& spec) {
    Rng rng(seed);
    const int w = spec.width, h = spec.height, nframes = spec.frames;
    require(nframes >= 2, "make_synthetic: need at least 2 frames");

    Camera cam;
    cam.fx = cam.fy = spec.focal;
    cam.cx = (w - 1) / 2.0;
    cam.cy = (h - 1) / 2.0;
    cam.width = w;
    cam.height = h;

    const double bg_seed_a = rng.uniform(0.0, 6.28);
    const double bg_seed_b = rng.uniform(0.0, 6.28);

    std::vector<Blob> blobs;
    if (!spec.explicit_blobs.empty()) {
        for (const auto& bs : spec.explicit_blobs) blobs.push_back({bs});
    } else {
        // Rejection placement: supports stay disjoint and inside the border
        // at every frame, which keeps depth and flow unambiguous. Radii shrink
        // as attempts accumulate so crowded requests still place.
        for (int k = 0; k < spec.blobs; ++k) {
            Blob b;
            bool placed = false;
            for (int attempt = 0; attempt < 20000 && !placed; ++attempt) {
                const double shrink = 1.0 - 0.5 * std::min(1.0, attempt / 10000.0);
                b.spec.radius = rng.uniform(0.07, 0.12) * std::min(w, h) * shrink;
                b.spec.z = rng.uniform(1.45, 2.25);
                const double border = b.spec.radius + 2.5;
                b.spec.center0 = {rng.uniform(border, w - 1 - border),
                                  rng.uniform(border, h - 1 - border)};
                const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
                const double lin = rng.uniform(0.4, 1.0) * spec.motion_amp_px / std::max(1, nframes - 1);
                b.spec.velocity = {lin * std::cos(ang), lin * std::sin(ang)};
                const double ang2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
                b.spec.sin_dir = {std::cos(ang2), std::sin(ang2)};
                b.spec.sin_amp = rng.uniform(0.1, 0.35) * spec.motion_amp_px;
                b.spec.sin_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
                b.spec.color_inner = {rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)};
                b.spec.color_outer = {rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)};
                bool ok = true;
                for (int f = 0; f < nframes && ok; ++f) {
                    const double tau = static_cast<double>(f) / (nframes - 1);
                    const Vec2 c = b.center(f, tau);
                    if (c.x() < b.spec.radius + 2 || c.x() > w - 1 - b.spec.radius - 2 ||
                        c.y() < b.spec.radius + 2 || c.y() > h - 1 - b.spec.radius - 2) {
                        ok = false;
                        break;
                    }
                    for (const auto& other : blobs) {
                        const Vec2 oc = other.center(f, tau);
                        if ((c - oc).norm() < b.spec.radius + other.spec.radius + 4.0) {
                            ok = false;
                            break;
                        }
                    }
                }
                // Distinct depths keep the front blob well defined.
                for (const auto& other : blobs)
                    if (std::abs(other.spec.z - b.spec.z) < 0.05) ok = false;
                placed = ok;
            }
            if (!placed) throw std::runtime_error("make_synthetic: could not place blobs; reduce count or motion");
            blobs.push_back(b);
        }
    }

    // Front-to-back blob order per pixel is depth order; supports are
    // disjoint so at most one blob covers a pixel.
    Dataset ds;
    std::vector<std::vector<Vec2>> centers(nframes, std::vector<Vec2>(blobs.size()));
    for (int f = 0; f < nframes; ++f) {
        const double tau = static_cast<double>(f) / (nframes - 1);
        for (size_t k = 0; k < blobs.size(); ++k) centers[f][k] = blobs[k].center(f, tau);
    }

    for (int f = 0; f < nframes; ++f) {
        const double tau = static_cast<double>(f) / (nframes - 1);
        FrameBundle fb;
        fb.index = f;
        fb.time = tau;
        fb.cam = cam;
        fb.rgb = ColorImage(h, w);
        fb.depth = Grid(h, w, spec.z_background);
        fb.depth_valid = Mask(h, w, true);
        fb.tool = Mask(h, w, false);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                Vec3 color = background_color(bg_seed_a, bg_seed_b, x, y, w, h);
                double depth = spec.z_background;
                bool depth_ok = true;
                // Topmost covering blob wins (supports are disjoint).
                int cover = -1;
                double cover_a = 0.0, cover_r = 0.0;
                for (size_t k = 0; k < blobs.size(); ++k) {
                    const double r = (Vec2(x, y) - centers[f][k]).norm();
                    const double a = blob_alpha(r, blobs[k].spec.radius);
                    if (a > 0.0 && (cover < 0 || blobs[k].spec.z < blobs[cover].spec.z)) {
                        cover = static_cast<int>(k);
                        cover_a = a;
                        cover_r = r;
                    }
                }
                if (cover >= 0) {
                    const auto& bs = blobs[cover].spec;
                    const double mix = std::clamp(cover_r / bs.radius, 0.0, 1.0);
                    const Vec3 bc = (1.0 - mix) * bs.color_inner + mix * bs.color_outer;
                    color = cover_a * bc + (1.0 - cover_a) * color;
                    if (cover_a >= 0.5) depth = bs.z;
                    depth_ok = cover_a <= 0.02 || cover_a >= 0.98;
                }
                for (int c = 0; c < 3; ++c) fb.rgb.ch[c].at(y, x) = std::clamp(color[c], 0.0, 1.0);
                fb.depth.at(y, x) = depth;
                fb.depth_valid.set(y, x, depth_ok);
            }
        ds.frames.push_back(std::move(fb));
    }

    // Analytic flow for consecutive pairs. Valid pixels: rigid blob cores with
    // a 2 px sampling margin, or background with clearance at both frames.
    ds.flow_fwd.assign(nframes - 1, std::nullopt);
    ds.flow_bwd.assign(nframes - 1, std::nullopt);
    auto make_flow = [&](int fa, int fb_) {
        FlowField fl(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int cover = -1;
                double cover_r = 0.0;
                for (size_t k = 0; k < blobs.size(); ++k) {
                    const double r = (Vec2(x, y) - centers[fa][k]).norm();
                    if (r < blobs[k].spec.radius && (cover < 0 || blobs[k].spec.z < blobs[cover].spec.z)) {
                        cover = static_cast<int>(k);
                        cover_r = r;
                    }
                }
                if (cover >= 0) {
                    const Vec2 d = centers[fb_][cover] - centers[fa][cover];
                    fl.u.at(y, x) = d.x();
                    fl.v.at(y, x) = d.y();
                    const double rigid = std::min(0.6 * blobs[cover].spec.radius,
                                                  blobs[cover].spec.radius - 2.0);
                    fl.valid.set(y, x, cover_r <= rigid);
                } else {
                    bool clear = true;
                    for (size_t k = 0; k < blobs.size() && clear; ++k) {
                        if ((Vec2(x, y) - centers[fa][k]).norm() < blobs[k].spec.radius + 2.0) clear = false;
                        if ((Vec2(x, y) - centers[fb_][k]).norm() < blobs[k].spec.radius + 2.0) clear = false;
                    }
                    fl.valid.set(y, x, clear);
                }
            }
        return fl;
    };
    for (int f = 0; f + 1 < nframes; ++f) {
        ds.flow_fwd[f] = make_flow(f, f + 1);
        ds.flow_bwd[f] = make_flow(f + 1, f);
    }

    assign_split(ds);
    return ds;
}

std::vector<Primitive4D> init_scene(const FrameBundle& frame0, int stride, const InitDefaults& d) {
    require(stride >= 1, "init_scene: stride must be positive");
    Rng rng(d.seed);
    std::vector<Primitive4D> scene;
    const Camera& cam = frame0.cam;
    const double y00 = sh::eval(0, 0, Vec3(0, 0, 1));
    for (int y = 0; y < frame0.depth.h; y += stride)
        for (int x = 0; x < frame0.depth.w; x += stride) {
            if (!frame0.depth_valid.at(y, x) || frame0.tool.at(y, x)) continue;
            const double z = frame0.depth.at(y, x);
            const Vec3 x_cam((x - cam.cx) / cam.fx * z, (y - cam.cy) / cam.fy * z, z);
            Primitive4D p(d.sh_degree, d.n_temporal);
            p.mu_x = cam.R.transpose() * (x_cam - cam.t);
            p.mu_t = rng.uniform();
            const double spacing = stride * z / cam.fx;
            const double s = std::max(1e-4, d.spacing_mult * spacing);
            p.log_scale = Vec4(std::log(s), std::log(s), std::log(s), std::log(d.sigma_t_init));
            p.logit_opacity = std::log(d.opacity_init / (1.0 - d.opacity_init));
            for (int c = 0; c < 3; ++c)
                p.sh_at(0, 0, c) = (frame0.rgb.ch[c].at(y, x) - 0.5) / y00;
            scene.push_back(std::move(p));
        }
    if (scene.empty()) throw std::runtime_error("init_scene: no valid depth pixels to seed from");
    return scene;
}

} // namespace endowave
