#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "endowave/dataset.hpp"
#include "endowave/image_io.hpp"
#include "endowave/rng.hpp"

namespace fs = std::filesystem;
using namespace endowave;

namespace {

std::string temp_dir(const std::string& name) {
    const std::string dir = (fs::temp_directory_path() / name).string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("pfm and png round trips") {
    const std::string dir = temp_dir("io_test");
    Rng rng(61);

    SUBCASE("pfm preserves float32 depth") {
        Grid g(9, 13);
        for (double& v : g.v) v = static_cast<float>(rng.uniform(0.1, 5.0));
        write_pfm(dir + "/d.pfm", g);
        const Grid h = read_pfm(dir + "/d.pfm");
        REQUIRE(h.same_shape(g));
        CHECK(h.v == g.v);
    }

    SUBCASE("8-bit rgb png quantizes to 1/255") {
        ColorImage img(7, 5);
        for (int c = 0; c < 3; ++c)
            for (double& v : img.ch[c].v) v = rng.uniform();
        write_png_rgb8(dir + "/img.png", img);
        const ColorImage back = read_png_rgb(dir + "/img.png");
        for (int c = 0; c < 3; ++c)
            for (size_t i = 0; i < back.ch[c].v.size(); ++i)
                CHECK(std::abs(back.ch[c].v[i] - img.ch[c].v[i]) <= 0.5 / 255.0 + 1e-12);
    }

    SUBCASE("mask png is exact") {
        Mask m(6, 11, false);
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 11; ++x) m.set(y, x, (x * y) % 3 == 1);
        write_mask_png(dir + "/m.png", m);
        const Mask back = read_mask_png(dir + "/m.png");
        CHECK(back.v == m.v);
    }

    SUBCASE("16-bit gray png round trips the quantized levels") {
        Grid g(8, 8);
        for (double& v : g.v) v = rng.uniform(-3.0, 3.0);
        write_png_gray16(dir + "/g16.png", g, -3.0, 3.0);
        int depth = 0;
        const Grid back = read_png_gray(dir + "/g16.png", &depth);
        CHECK(depth == 16);
        for (size_t i = 0; i < g.v.size(); ++i) {
            const double rec = back.v[i] / 65535.0 * 6.0 - 3.0;
            CHECK(std::abs(rec - g.v[i]) <= 3.0 / 65535.0 + 1e-9);
        }
    }
}

TEST_CASE("synthetic dataset") {
    SynthSpec spec;
    spec.width = 48;
    spec.height = 48;
    spec.frames = 8;
    spec.blobs = 3;
    spec.motion_amp_px = 2.5;

    SUBCASE("zero amplitude means zero flow everywhere") {
        SynthSpec s = spec;
        s.motion_amp_px = 0.0;
        const Dataset ds = make_synthetic(3, s);
        for (const auto& f : ds.flow_fwd) {
            REQUIRE(f.has_value());
            for (double v : f->u.v) CHECK(v == 0.0);
            for (double v : f->v.v) CHECK(v == 0.0);
        }
    }

    SUBCASE("an explicit blob moving +2 px/frame produces u = 2 at valid covered pixels") {
        SynthSpec s = spec;
        BlobSpec blob;
        blob.center0 = Vec2(14, 24);
        blob.velocity = Vec2(2.0, 0.0);
        blob.radius = 7.0;
        blob.z = 1.8;
        s.explicit_blobs = {blob};
        const Dataset ds = make_synthetic(3, s);
        const FlowField& f = *ds.flow_fwd[0];
        int covered = 0;
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                const double r = (Vec2(x, y) - blob.center0).norm();
                if (r < 3.0) {
                    CHECK(f.valid.at(y, x));
                    CHECK(f.u.at(y, x) == 2.0);
                    CHECK(f.v.at(y, x) == 0.0);
                    ++covered;
                }
            }
        CHECK(covered > 10);
    }

    SUBCASE("same seed is bit-identical, different seed is not") {
        const Dataset a = make_synthetic(9, spec);
        const Dataset b = make_synthetic(9, spec);
        const Dataset c = make_synthetic(10, spec);
        REQUIRE(a.frames.size() == b.frames.size());
        bool all_equal = true, differs_from_c = false;
        for (size_t i = 0; i < a.frames.size(); ++i) {
            for (int ch = 0; ch < 3; ++ch) {
                all_equal = all_equal && a.frames[i].rgb.ch[ch].v == b.frames[i].rgb.ch[ch].v;
                differs_from_c = differs_from_c || a.frames[i].rgb.ch[ch].v != c.frames[i].rgb.ch[ch].v;
            }
            all_equal = all_equal && a.frames[i].depth.v == b.frames[i].depth.v;
        }
        CHECK(all_equal);
        CHECK(differs_from_c);
    }

    SUBCASE("forward and backward flow agree exactly at valid correspondences") {
        const Dataset ds = make_synthetic(5, spec);
        for (size_t pair = 0; pair + 1 < ds.frames.size(); ++pair) {
            const FlowField& fwd = *ds.flow_fwd[pair];
            const FlowField& bwd = *ds.flow_bwd[pair];
            const Mask m = consistency_mask(fwd, bwd, 0.0, 1e-9);
            size_t checked = 0;
            for (int y = 0; y < fwd.height(); ++y)
                for (int x = 0; x < fwd.width(); ++x)
                    if (fwd.valid.at(y, x)) {
                        CHECK(m.at(y, x)); // round trip error is exactly zero
                        ++checked;
                    }
            CHECK(checked > 100);
        }
    }

    SUBCASE("depth is the blob plane at opaque cores and background elsewhere") {
        SynthSpec s = spec;
        BlobSpec blob;
        blob.center0 = Vec2(24, 24);
        blob.radius = 8.0;
        blob.z = 1.5;
        s.explicit_blobs = {blob};
        const Dataset ds = make_synthetic(4, s);
        CHECK(ds.frames[0].depth.at(24, 24) == 1.5);
        CHECK(ds.frames[0].depth_valid.at(24, 24));
        CHECK(ds.frames[0].depth.at(2, 2) == s.z_background);
        CHECK(ds.frames[0].depth_valid.at(2, 2));
    }
}

TEST_CASE("dataset loading and the 7:1 split") {
    SynthSpec spec;
    spec.width = 48;
    spec.height = 48;
    spec.frames = 16;
    spec.blobs = 2;
    spec.motion_amp_px = 1.5;
    const Dataset ds = make_synthetic(21, spec);
    const std::string dir = temp_dir("ds_test");
    save_dataset(ds, dir);

    SUBCASE("16 frames split 14 train / 2 test") {
        const Dataset loaded = load_dataset(dir);
        CHECK(loaded.train_idx.size() == 14);
        CHECK(loaded.test_idx.size() == 2);
        CHECK(loaded.frames[loaded.test_idx[0]].index == 7);
        CHECK(loaded.frames[loaded.test_idx[1]].index == 15);
    }

    SUBCASE("missing depth file names the file") {
        fs::remove(dir + "/depth/0003.pfm");
        CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("0003.pfm"), std::runtime_error);
        save_dataset(ds, dir); // restore
    }

    SUBCASE("save then load is lossless for poses and masks") {
        const Dataset loaded = load_dataset(dir);
        const std::string dir2 = temp_dir("ds_test2");
        save_dataset(loaded, dir2);
        const Dataset again = load_dataset(dir2);
        REQUIRE(again.frames.size() == ds.frames.size());
        for (size_t i = 0; i < ds.frames.size(); ++i) {
            CHECK(again.frames[i].cam.fx == ds.frames[i].cam.fx);
            CHECK((again.frames[i].cam.R - ds.frames[i].cam.R).cwiseAbs().maxCoeff() == 0.0);
            CHECK((again.frames[i].cam.t - ds.frames[i].cam.t).cwiseAbs().maxCoeff() == 0.0);
            CHECK(again.frames[i].time == ds.frames[i].time);
            CHECK(again.frames[i].tool.v == ds.frames[i].tool.v);
        }
    }
}

TEST_CASE("init_scene") {
    SynthSpec spec;
    spec.width = 32;
    spec.height = 32;
    spec.frames = 8;
    spec.blobs = 2;
    const Dataset ds = make_synthetic(31, spec);
    const FrameBundle& f0 = ds.frames[0];
    InitDefaults d;

    SUBCASE("stride beyond the diagonal leaves at most one primitive") {
        const auto scene = init_scene(f0, 64, d);
        CHECK(scene.size() == 1);
    }

    SUBCASE("flat depth plane back-projects to coplanar points") {
        FrameBundle flat = f0;
        for (double& v : flat.depth.v) v = 2.0;
        flat.depth_valid = Mask(32, 32, true);
        flat.tool = Mask(32, 32, false);
        const auto scene = init_scene(flat, 4, d);
        for (const auto& p : scene) CHECK(std::abs(p.mu_x.z() - 2.0) < 1e-9);
    }

    SUBCASE("tool pixels contribute no primitives") {
        FrameBundle masked = f0;
        masked.tool = Mask(32, 32, true);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 32; ++x) masked.tool.set(y, x, false);
        const auto scene = init_scene(masked, 4, d);
        for (const auto& p : scene) {
            // Seeds come only from the unmasked top half.
            const double v = (p.mu_x.y() / p.mu_x.z()) * f0.cam.fy + f0.cam.cy;
            CHECK(v < 16.0);
        }
        FrameBundle all_masked = f0;
        all_masked.tool = Mask(32, 32, true);
        CHECK_THROWS_AS(init_scene(all_masked, 4, d), std::runtime_error);
    }

    SUBCASE("color seeds the DC coefficient") {
        const auto scene = init_scene(f0, 8, d);
        REQUIRE(!scene.empty());
        const auto& p = scene[0];
        const Vec3 color = teash_eval(p, Vec3(0, 0, 1), p.mu_t);
        // Round trip through the DC convention recovers the pixel color.
        CHECK(color[0] == doctest::Approx(f0.rgb.ch[0].at(0, 0)).epsilon(1e-9));
    }
}
