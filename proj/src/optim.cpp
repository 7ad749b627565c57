#include "endowave/optim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "endowave/metrics.hpp"
#include "endowave/rng.hpp"

namespace fs = std::filesystem;

namespace endowave {

namespace {

inline double adam_update(double grad, double* m, double* v, double lr, const AdamHyper& h,
                          double bc1, double bc2) {
    *m = h.beta1 * *m + (1.0 - h.beta1) * grad;
    *v = h.beta2 * *v + (1.0 - h.beta2) * grad * grad;
    const double mhat = *m / bc1;
    const double vhat = *v / bc2;
    return -lr * mhat / (std::sqrt(vhat) + h.eps);
}

} // namespace

void optimizer_step(std::vector<Primitive4D>* scene, const GradientSet& grads, AdamState* state,
                    const LearningRates& rates, const AdamHyper& hyper, double extent,
                    double position_decay) {
    state->step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state->step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state->step));
    const double lr_pos = rates.mu_x * extent * position_decay;

    for (size_t i = 0; i < scene->size(); ++i) {
        Primitive4D& p = (*scene)[i];
        for (int k = 0; k < 3; ++k)
            p.mu_x[k] += adam_update(grads.mu_x[i][k], &state->m.mu_x[i][k], &state->v.mu_x[i][k],
                                     lr_pos, hyper, bc1, bc2);
        p.mu_t += adam_update(grads.mu_t[i], &state->m.mu_t[i], &state->v.mu_t[i], rates.mu_t,
                              hyper, bc1, bc2);
        for (int k = 0; k < 4; ++k) {
            p.log_scale[k] += adam_update(grads.log_scale[i][k], &state->m.log_scale[i][k],
                                          &state->v.log_scale[i][k], rates.log_scale, hyper, bc1, bc2);
            p.rot_left[k] += adam_update(grads.rot_left[i][k], &state->m.rot_left[i][k],
                                         &state->v.rot_left[i][k], rates.rotation, hyper, bc1, bc2);
            p.rot_right[k] += adam_update(grads.rot_right[i][k], &state->m.rot_right[i][k],
                                          &state->v.rot_right[i][k], rates.rotation, hyper, bc1, bc2);
        }
        p.logit_opacity += adam_update(grads.logit_opacity[i], &state->m.logit_opacity[i],
                                       &state->v.logit_opacity[i], rates.logit_opacity, hyper, bc1, bc2);
        const int basis = p.basis_count();
        for (size_t k = 0; k < p.sh_coeffs.size(); ++k) {
            const bool dc = (k / 3) % basis == 0 && k < static_cast<size_t>(3 * basis);
            const double lr = dc ? rates.sh_dc : rates.sh_dc * rates.sh_rest_ratio;
            p.sh_coeffs[k] += adam_update(grads.sh_coeffs[i][k], &state->m.sh_coeffs[i][k],
                                          &state->v.sh_coeffs[i][k], lr, hyper, bc1, bc2);
        }
        for (size_t k = 1; k < p.phases.size(); ++k) // phases[0] pinned
            p.phases[k] += adam_update(grads.phases[i][k], &state->m.phases[i][k],
                                       &state->v.phases[i][k], rates.phase, hyper, bc1, bc2);
        p.normalize_rotations();
    }
}

namespace {

template <typename T>
void keep_rows(std::vector<T>& v, const std::vector<int>& keep) {
    std::vector<T> out;
    out.reserve(keep.size());
    for (int i : keep) out.push_back(std::move(v[i]));
    v = std::move(out);
}

void filter_gradset(GradientSet& g, const std::vector<int>& keep) {
    keep_rows(g.mu_x, keep);
    keep_rows(g.mu_t, keep);
    keep_rows(g.log_scale, keep);
    keep_rows(g.rot_left, keep);
    keep_rows(g.rot_right, keep);
    keep_rows(g.logit_opacity, keep);
    keep_rows(g.sh_coeffs, keep);
    keep_rows(g.phases, keep);
    keep_rows(g.mean2_grad_norm, keep);
    keep_rows(g.visible, keep);
}

void append_zero_rows(GradientSet& g, const std::vector<Primitive4D>& added) {
    for (const auto& p : added) {
        g.mu_x.push_back(Vec3::Zero());
        g.mu_t.push_back(0.0);
        g.log_scale.push_back(Vec4::Zero());
        g.rot_left.push_back(Vec4::Zero());
        g.rot_right.push_back(Vec4::Zero());
        g.logit_opacity.push_back(0.0);
        g.sh_coeffs.emplace_back(p.sh_count(), 0.0);
        g.phases.emplace_back(p.n_temporal + 1, 0.0);
        g.mean2_grad_norm.push_back(0.0);
        g.visible.push_back(0);
    }
}

double max_spatial_scale(const Primitive4D& p) {
    return std::exp(std::max({p.log_scale[0], p.log_scale[1], p.log_scale[2]}));
}

// Deterministic split: offset along the dominant spatial axis of the
// covariance at mu_t, scales shrunk.
std::pair<Primitive4D, Primitive4D> split_primitive(const Primitive4D& p, double shrink) {
    const ConditionalGaussian3D g = condition_at_time(p, p.mu_t);
    Eigen::SelfAdjointEigenSolver<Mat3> es(g.cov3);
    const Vec3 axis = es.eigenvectors().col(2);
    const double sigma = std::sqrt(std::max(0.0, es.eigenvalues()[2]));
    Primitive4D a = p, b = p;
    a.mu_x += 0.5 * sigma * axis;
    b.mu_x -= 0.5 * sigma * axis;
    const double ls = std::log(shrink);
    for (int k = 0; k < 3; ++k) {
        a.log_scale[k] -= ls;
        b.log_scale[k] -= ls;
    }
    return {a, b};
}

} // namespace

void density_control(std::vector<Primitive4D>* scene, AdamState* state, GradStats* stats,
                     const DensifyConfig& cfg) {
    const size_t n = scene->size();
    std::vector<double> scales(n);
    for (size_t i = 0; i < n; ++i) scales[i] = max_spatial_scale((*scene)[i]);
    std::vector<double> sorted_scales = scales;
    std::sort(sorted_scales.begin(), sorted_scales.end());
    const double split_above =
        sorted_scales.empty()
            ? std::numeric_limits<double>::infinity()
            : sorted_scales[std::min(n - 1, static_cast<size_t>(cfg.split_scale_percentile *
                                                                static_cast<double>(n - 1)))];

    std::vector<int> keep;
    std::vector<Primitive4D> added;
    keep.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        Primitive4D& p = (*scene)[i];
        if (p.opacity() < cfg.prune_opacity) continue;
        const double mean_grad = stats->count[i] > 0 ? stats->norm_sum[i] / stats->count[i] : 0.0;
        if (mean_grad > cfg.grad_threshold &&
            scene->size() + added.size() < static_cast<size_t>(cfg.max_primitives)) {
            if (scales[i] > split_above) {
                auto [a, b] = split_primitive(p, cfg.split_scale_shrink);
                p = a;
                added.push_back(b);
            } else {
                added.push_back(p); // clone; gradients separate the copies
            }
        }
        keep.push_back(static_cast<int>(i));
    }

    keep_rows(*scene, keep);
    filter_gradset(state->m, keep);
    filter_gradset(state->v, keep);
    for (auto& p : added) {
        if (scene->size() >= static_cast<size_t>(cfg.max_primitives)) break;
        scene->push_back(p);
    }
    const size_t n_added = scene->size() - keep.size();
    std::vector<Primitive4D> added_slice(scene->end() - n_added, scene->end());
    append_zero_rows(state->m, added_slice);
    append_zero_rows(state->v, added_slice);
    stats->resize(scene->size());
}

namespace {

void json_get(const nlohmann::json& j, const char* key, double* out) {
    if (j.contains(key)) *out = j.at(key).get<double>();
}
void json_get(const nlohmann::json& j, const char* key, int* out) {
    if (j.contains(key)) *out = j.at(key).get<int>();
}
void json_get(const nlohmann::json& j, const char* key, uint64_t* out) {
    if (j.contains(key)) *out = j.at(key).get<uint64_t>();
}
void json_get(const nlohmann::json& j, const char* key, std::string* out) {
    if (j.contains(key)) *out = j.at(key).get<std::string>();
}

} // namespace

void apply_config_json(TrainConfig* cfg, const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    json_get(j, "seed", &cfg->seed);
    json_get(j, "iterations", &cfg->iterations);
    json_get(j, "init_stride", &cfg->init_stride);
    json_get(j, "eval_every", &cfg->eval_every);
    json_get(j, "checkpoint_every", &cfg->checkpoint_every);
    json_get(j, "wavelet_q", &cfg->wavelet_q);
    json_get(j, "wavelet_levels", &cfg->wavelet_levels);
    json_get(j, "lambda_rgb", &cfg->weights.rgb);
    json_get(j, "lambda_depth", &cfg->weights.depth);
    json_get(j, "lambda_flow", &cfg->weights.flow);
    json_get(j, "lambda_wavelet", &cfg->weights.wavelet);
    json_get(j, "lambda_ssim", &cfg->weights.lambda_ssim);
    json_get(j, "band_ll", &cfg->weights.bands.ll);
    json_get(j, "band_lh", &cfg->weights.bands.lh);
    json_get(j, "band_hl", &cfg->weights.bands.hl);
    json_get(j, "band_hh", &cfg->weights.bands.hh);
    json_get(j, "lr_position", &cfg->rates.mu_x);
    json_get(j, "lr_position_final_ratio", &cfg->rates.position_final_ratio);
    json_get(j, "lr_mu_t", &cfg->rates.mu_t);
    json_get(j, "lr_log_scale", &cfg->rates.log_scale);
    json_get(j, "lr_rotation", &cfg->rates.rotation);
    json_get(j, "lr_opacity", &cfg->rates.logit_opacity);
    json_get(j, "lr_sh_dc", &cfg->rates.sh_dc);
    json_get(j, "lr_sh_rest_ratio", &cfg->rates.sh_rest_ratio);
    json_get(j, "lr_phase", &cfg->rates.phase);
    json_get(j, "densify_from", &cfg->densify.from_iteration);
    json_get(j, "densify_until", &cfg->densify.until_iteration);
    json_get(j, "densify_interval", &cfg->densify.interval);
    json_get(j, "densify_grad_threshold", &cfg->densify.grad_threshold);
    json_get(j, "prune_opacity", &cfg->densify.prune_opacity);
    json_get(j, "split_scale_percentile", &cfg->densify.split_scale_percentile);
    json_get(j, "max_primitives", &cfg->densify.max_primitives);
    json_get(j, "consistency_alpha", &cfg->consistency_alpha);
    json_get(j, "consistency_beta", &cfg->consistency_beta);
    json_get(j, "sh_degree", &cfg->init.sh_degree);
    json_get(j, "n_temporal", &cfg->init.n_temporal);
    json_get(j, "opacity_init", &cfg->init.opacity_init);
    json_get(j, "sigma_t_init", &cfg->init.sigma_t_init);
    json_get(j, "spacing_mult", &cfg->init.spacing_mult);
    json_get(j, "out_dir", &cfg->out_dir);
}

TrainConfig config_from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    TrainConfig cfg;
    apply_config_json(&cfg, text);
    return cfg;
}

std::string config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["iterations"] = cfg.iterations;
    j["init_stride"] = cfg.init_stride;
    j["eval_every"] = cfg.eval_every;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["wavelet_q"] = cfg.wavelet_q;
    j["wavelet_levels"] = cfg.wavelet_levels;
    j["lambda_rgb"] = cfg.weights.rgb;
    j["lambda_depth"] = cfg.weights.depth;
    j["lambda_flow"] = cfg.weights.flow;
    j["lambda_wavelet"] = cfg.weights.wavelet;
    j["lambda_ssim"] = cfg.weights.lambda_ssim;
    j["band_ll"] = cfg.weights.bands.ll;
    j["band_lh"] = cfg.weights.bands.lh;
    j["band_hl"] = cfg.weights.bands.hl;
    j["band_hh"] = cfg.weights.bands.hh;
    j["lr_position"] = cfg.rates.mu_x;
    j["lr_position_final_ratio"] = cfg.rates.position_final_ratio;
    j["lr_mu_t"] = cfg.rates.mu_t;
    j["lr_log_scale"] = cfg.rates.log_scale;
    j["lr_rotation"] = cfg.rates.rotation;
    j["lr_opacity"] = cfg.rates.logit_opacity;
    j["lr_sh_dc"] = cfg.rates.sh_dc;
    j["lr_sh_rest_ratio"] = cfg.rates.sh_rest_ratio;
    j["lr_phase"] = cfg.rates.phase;
    j["densify_from"] = cfg.densify.from_iteration;
    j["densify_until"] = cfg.densify.until_iteration;
    j["densify_interval"] = cfg.densify.interval;
    j["densify_grad_threshold"] = cfg.densify.grad_threshold;
    j["prune_opacity"] = cfg.densify.prune_opacity;
    j["split_scale_percentile"] = cfg.densify.split_scale_percentile;
    j["max_primitives"] = cfg.densify.max_primitives;
    j["consistency_alpha"] = cfg.consistency_alpha;
    j["consistency_beta"] = cfg.consistency_beta;
    j["sh_degree"] = cfg.init.sh_degree;
    j["n_temporal"] = cfg.init.n_temporal;
    j["opacity_init"] = cfg.init.opacity_init;
    j["sigma_t_init"] = cfg.init.sigma_t_init;
    j["spacing_mult"] = cfg.init.spacing_mult;
    j["out_dir"] = cfg.out_dir;
    return j.dump(2);
}

namespace {

double scene_extent(const std::vector<Primitive4D>& scene) {
    if (scene.empty()) return 1.0;
    Vec3 lo = scene[0].mu_x, hi = scene[0].mu_x;
    for (const auto& p : scene) {
        lo = lo.cwiseMin(p.mu_x);
        hi = hi.cwiseMax(p.mu_x);
    }
    return std::max(1e-6, 0.5 * (hi - lo).norm());
}

std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

struct HoldoutMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
    double epe = 0.0;
    bool has_epe = false;
};

Mask not_tool_mask(const FrameBundle& fb) {
    Mask m(fb.tool.h, fb.tool.w, false);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) m.set(y, x, !fb.tool.at(y, x));
    return m;
}

HoldoutMetrics evaluate_holdout(const std::vector<Primitive4D>& scene, const Dataset& ds) {
    HoldoutMetrics hm;
    if (ds.test_idx.empty()) return hm;
    double psnr_sum = 0.0, ssim_sum = 0.0, epe_sum = 0.0;
    int n = 0, n_epe = 0;
    for (int fi : ds.test_idx) {
        const FrameBundle& fb = ds.frames[fi];
        const Mask mask = not_tool_mask(fb);
        std::optional<FlowPair> fp;
        const bool pair_ok = static_cast<size_t>(fi + 1) < ds.frames.size() &&
                             fi < static_cast<int>(ds.flow_fwd.size()) && ds.flow_fwd[fi].has_value();
        if (pair_ok)
            fp = FlowPair{fb.time, ds.frames[fi + 1].time, fb.cam, ds.frames[fi + 1].cam};
        const RenderOutput out = render(scene, fb.cam, fb.time, fp);
        const double p = psnr(out.rgb, fb.rgb, mask);
        psnr_sum += std::isinf(p) ? 99.0 : p;
        ssim_sum += ssim(out.rgb, fb.rgb, mask);
        ++n;
        if (pair_ok) {
            FlowField rendered(out.flow_u.h, out.flow_u.w);
            rendered.u = out.flow_u;
            rendered.v = out.flow_v;
            const FlowField& gt = *ds.flow_fwd[fi];
            Mask fm(gt.valid.h, gt.valid.w, false);
            for (int y = 0; y < fm.h; ++y)
                for (int x = 0; x < fm.w; ++x)
                    fm.set(y, x, gt.valid.at(y, x) && mask.at(y, x));
            epe_sum += epe(rendered, gt, fm);
            ++n_epe;
        }
    }
    hm.psnr = psnr_sum / n;
    hm.ssim = ssim_sum / n;
    if (n_epe > 0) {
        hm.epe = epe_sum / n_epe;
        hm.has_epe = true;
    }
    return hm;
}

FramePairInput make_pair_input(const Dataset& ds, int i1, int i2, const TrainConfig& cfg) {
    FramePairInput pair;
    pair.frame = &ds.frames[i1];
    pair.flow_pair = FlowPair{ds.frames[i1].time, ds.frames[i2].time, ds.frames[i1].cam, ds.frames[i2].cam};
    // Pseudo ground truth exists only for consecutive original indices.
    if (i2 == i1 + 1 && i1 < static_cast<int>(ds.flow_fwd.size()) && ds.flow_fwd[i1].has_value()) {
        pair.pseudo_gt = &*ds.flow_fwd[i1];
        const FlowField& fwd = *ds.flow_fwd[i1];
        Mask consistent;
        if (ds.flow_bwd[i1].has_value())
            consistent = consistency_mask(fwd, *ds.flow_bwd[i1], cfg.consistency_alpha, cfg.consistency_beta);
        else
            consistent = fwd.valid; // no backward field to check against
        pair.flow_mask = Mask(consistent.h, consistent.w, false);
        const FrameBundle& fb = ds.frames[i1];
        for (int y = 0; y < consistent.h; ++y)
            for (int x = 0; x < consistent.w; ++x)
                pair.flow_mask.set(y, x, consistent.at(y, x) && fwd.valid.at(y, x) && !fb.tool.at(y, x));
    }
    return pair;
}

} // namespace

FitResult fit(const Dataset& ds, const TrainConfig& cfg) {
    require(ds.frames.size() >= 8, "fit: need at least 8 frames");
    bool any_depth = false;
    for (const auto& f : ds.frames) any_depth = any_depth || f.depth_valid.count() > 0;
    require(any_depth, "fit: dataset has no valid depth");

    if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
    const std::string csv_path = cfg.out_dir.empty() ? "" : cfg.out_dir + "/metrics.csv";
    std::ofstream csv;
    if (!csv_path.empty()) {
        csv.open(csv_path);
        csv << "iteration,L_rgb,L_depth,L_flow,L_wavelet,psnr_holdout,ssim_holdout,epe_holdout\n";
    }
    if (!cfg.out_dir.empty()) {
        std::ofstream echo(cfg.out_dir + "/resolved_config.json");
        echo << config_to_json(cfg) << "\n";
    }

    const FrameBundle& frame0 = ds.frames[ds.train_idx.empty() ? 0 : ds.train_idx[0]];
    InitDefaults init = cfg.init;
    init.seed = cfg.seed;
    FitResult result;
    result.scene = init_scene(frame0, cfg.init_stride, init);
    result.metrics_csv = csv_path;

    if (cfg.iterations == 0) return result;

    const RationalFilterBank bank = design_filters(cfg.wavelet_q);
    AdamState state;
    state.resize_like(result.scene);
    GradStats stats;
    stats.resize(result.scene.size());
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    const double extent = scene_extent(result.scene);

    // Flow supervision pairs consecutive training frames.
    std::vector<int> pair_starts;
    for (size_t k = 0; k + 1 < ds.train_idx.size(); ++k)
        if (ds.train_idx[k + 1] == ds.train_idx[k] + 1) pair_starts.push_back(ds.train_idx[k]);
    if (pair_starts.empty() && !ds.train_idx.empty()) pair_starts.push_back(ds.train_idx[0]);

    std::vector<Primitive4D> last_good = result.scene;
    LossComponents comps;
    auto write_row = [&](int iter, const HoldoutMetrics& hm) {
        if (!csv.is_open()) return;
        csv << iter << "," << format_metric(comps.rgb) << "," << format_metric(comps.depth) << ","
            << format_metric(comps.flow) << "," << format_metric(comps.wavelet) << ","
            << format_metric(hm.psnr) << "," << format_metric(hm.ssim) << ","
            << format_metric(hm.epe) << "\n";
        csv.flush();
    };

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        const int i1 = pair_starts[rng.index(pair_starts.size())];
        const int i2 = i1 + 1 < static_cast<int>(ds.frames.size()) ? i1 + 1 : i1 - 1;
        FramePairInput pair = make_pair_input(ds, i1, i2, cfg);

        GradientSet grads;
        bool ok = true;
        try {
            comps = loss_backward(result.scene, pair, cfg.weights, bank, cfg.wavelet_levels, &grads);
        } catch (const std::runtime_error&) {
            ok = false;
        }
        if (!ok || !std::isfinite(comps.total)) {
            result.aborted_on_nan = true;
            result.scene = last_good;
            if (!cfg.out_dir.empty())
                save_primitives(result.scene, cfg.out_dir + "/checkpoint_lastgood.ew4d");
            break;
        }

        const double decay =
            std::pow(cfg.rates.position_final_ratio,
                     static_cast<double>(iter) / static_cast<double>(cfg.iterations));
        optimizer_step(&result.scene, grads, &state, cfg.rates, cfg.adam, extent, decay);
        stats.add(grads);
        last_good = result.scene;

        if (iter >= cfg.densify.from_iteration && iter <= cfg.densify.until_iteration &&
            cfg.densify.interval > 0 && iter % cfg.densify.interval == 0) {
            density_control(&result.scene, &state, &stats, cfg.densify);
        }

        if (cfg.eval_every > 0 && (iter % cfg.eval_every == 0 || iter == cfg.iterations)) {
            const HoldoutMetrics hm = evaluate_holdout(result.scene, ds);
            write_row(iter, hm);
            result.final_psnr = hm.psnr;
            result.final_ssim = hm.ssim;
            result.final_epe = hm.epe;
        }
        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "/checkpoint_%05d.ew4d", iter);
            save_primitives(result.scene, cfg.out_dir + name);
        }
    }

    if (!cfg.out_dir.empty()) save_primitives(result.scene, cfg.out_dir + "/scene_final.ew4d");
    return result;
}

} // namespace endowave
