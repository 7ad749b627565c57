#pragma once

#include <optional>
#include <string>
#include <vector>

#include "endowave/camera.hpp"
#include "endowave/flow.hpp"
#include "endowave/grid.hpp"

namespace endowave {

/// One observed timestep.
struct FrameBundle {
    ColorImage rgb;       // [0,1]
    Grid depth;           // scene units
    Mask depth_valid;
    Mask tool;            // true = tool pixel, excluded from supervision
    Camera cam;
    double time = 0.0;    // normalized to [0,1]
    int index = 0;
};

struct Dataset {
    std::vector<FrameBundle> frames;   // sorted by index
    std::vector<int> train_idx;
    std::vector<int> test_idx;
    // Optional flow for consecutive pairs: entry i is i -> i+1 (fwd) and
    // i+1 -> i (bwd).
    std::vector<std::optional<FlowField>> flow_fwd;
    std::vector<std::optional<FlowField>> flow_bwd;
};

/// Layout: images/NNNN.png, depth/NNNN.pfm (or 16-bit depth/NNNN.png scaled
/// by poses.json "depth_png_scale"), masks/NNNN.png, poses.json, optional
/// flow/NNNN_fwd.flo and flow/NNNN_bwd.flo. Frames with index = 7 (mod 8) go
/// to the test split; times are normalized to [0,1].
Dataset load_dataset(const std::string& dir);

/// Writes the dataset in the same layout (PFM depth, PNG images and masks).
void save_dataset(const Dataset& ds, const std::string& dir);

struct BlobSpec {
    Vec2 center0;          // pixels at time 0
    Vec2 velocity;         // pixels per frame, linear component
    double sin_amp = 0.0;  // pixels
    Vec2 sin_dir = Vec2(1, 0);
    double sin_phase = 0.0;
    double radius = 7.0;   // support radius, pixels
    double z = 1.8;        // constant depth, scene units
    Vec3 color_inner = Vec3(0.8, 0.3, 0.2);
    Vec3 color_outer = Vec3(0.5, 0.5, 0.1);
};

struct SynthSpec {
    int width = 64;
    int height = 64;
    int frames = 16;
    int blobs = 6;
    double motion_amp_px = 3.0; // roughly total pixel excursion per blob
    double focal = 70.0;
    double z_background = 2.6;
    /// When non-empty these replace the randomly placed blobs.
    std::vector<BlobSpec> explicit_blobs;
};

/// Static-camera scene of opaque-core Gaussian blobs on fronto-parallel
/// planes over a smooth background. Depth and pairwise flow are analytic;
/// flow validity excludes anti-aliased rims so forward/backward flow agree
/// exactly at valid correspondences. Deterministic per seed.
Dataset make_synthetic(uint64_t seed, const SynthSpec& spec);

struct InitDefaults {
    int sh_degree = 3;
    int n_temporal = 2;
    double opacity_init = 0.1;
    double sigma_t_init = 0.3;   // std of the temporal marginal
    double spacing_mult = 0.6;   // spatial scale = mult * local point spacing
    uint64_t seed = 1;           // for the uniform mu_t draws
};

/// Back-projects every stride-th valid non-tool pixel of the frame; the pixel
/// color seeds the DC coefficient. Throws when no pixel qualifies.
std::vector<Primitive4D> init_scene(const FrameBundle& frame0, int stride, const InitDefaults& d);

} // namespace endowave
