#pragma once

#include <cstdint>
#include <string>

#include "endowave/losses.hpp"

namespace endowave {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// Per-field learning rates. mu_x is additionally scaled by the scene extent
/// and decayed exponentially to mu_x * position_final_ratio over the run.
struct LearningRates {
    double mu_x = 1.6e-4;
    double position_final_ratio = 0.01;
    double mu_t = 2e-3;
    double log_scale = 5e-3;
    double rotation = 1e-3;
    double logit_opacity = 5e-2;
    double sh_dc = 2.5e-3;
    double sh_rest_ratio = 0.05; // other coefficients at sh_dc * ratio
    double phase = 1e-3;
};

/// First/second moments share the gradient layout.
struct AdamState {
    GradientSet m;
    GradientSet v;
    int64_t step = 0;
    void resize_like(const std::vector<Primitive4D>& scene) {
        m.resize_like(scene);
        v.resize_like(scene);
        step = 0;
    }
};

/// One Adam update. Effective rates come from `rates` with `extent` scaling
/// and `position_decay` in (0,1] applied to mu_x. Quaternions are
/// renormalized and phases[0] stays pinned at zero.
void optimizer_step(std::vector<Primitive4D>* scene, const GradientSet& grads, AdamState* state,
                    const LearningRates& rates, const AdamHyper& hyper, double extent,
                    double position_decay);

struct DensifyConfig {
    int from_iteration = 300;
    int until_iteration = 1600;
    int interval = 200;
    double grad_threshold = 2e-4;  // mean screen-space positional gradient
    double prune_opacity = 0.005;
    double split_scale_percentile = 0.9; // split when above, clone otherwise
    double split_scale_shrink = 1.6;
    int max_primitives = 512;
};

/// Accumulated positional-gradient statistics between density steps.
struct GradStats {
    std::vector<double> norm_sum;
    std::vector<int> count;
    void resize(size_t n) {
        norm_sum.assign(n, 0.0);
        count.assign(n, 0);
    }
    void add(const GradientSet& g) {
        for (size_t i = 0; i < norm_sum.size(); ++i)
            if (g.visible[i]) {
                norm_sum[i] += g.mean2_grad_norm[i];
                count[i] += 1;
            }
    }
};

/// Prunes low-opacity primitives, clones small high-gradient ones, splits
/// large ones. Adam moments follow the survivors; additions start at zero.
void density_control(std::vector<Primitive4D>* scene, AdamState* state, GradStats* stats,
                     const DensifyConfig& cfg);

struct TrainConfig {
    uint64_t seed = 7;
    int iterations = 2000;
    int init_stride = 4;
    int eval_every = 100;
    int checkpoint_every = 500;
    int wavelet_q = 2;
    int wavelet_levels = 2;
    LossWeights weights{};
    LearningRates rates{};
    AdamHyper adam{};
    DensifyConfig densify{};
    double consistency_alpha = 0.01;
    double consistency_beta = 0.5;
    InitDefaults init{};
    std::string out_dir;
};

TrainConfig config_from_json_file(const std::string& path);
void apply_config_json(TrainConfig* cfg, const std::string& json_text);
std::string config_to_json(const TrainConfig& cfg);

struct FitResult {
    std::vector<Primitive4D> scene;
    bool aborted_on_nan = false;
    double final_psnr = 0.0;
    double final_ssim = 0.0;
    double final_epe = 0.0;
    std::string metrics_csv;
};

/// The training loop: sample a consecutive train-frame pair, render with the
/// flow pair, take one step, densify on the configured cadence, checkpoint
/// and evaluate the held-out split periodically. Deterministic for a fixed
/// config, including across worker-thread counts.
FitResult fit(const Dataset& ds, const TrainConfig& cfg);

} // namespace endowave
