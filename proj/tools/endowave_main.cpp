#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "endowave/dataset.hpp"
#include "endowave/flow.hpp"
#include "endowave/image_io.hpp"
#include "endowave/metrics.hpp"
#include "endowave/optim.hpp"
#include "endowave/rwavelet.hpp"

namespace fs = std::filesystem;
using namespace endowave;

namespace {

Camera camera_from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("camera: cannot open: " + path);
    nlohmann::json j;
    is >> j;
    Camera cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    if (j.contains("R"))
        for (int k = 0; k < 9; ++k) cam.R(k / 3, k % 3) = j.at("R")[k].get<double>();
    if (j.contains("t"))
        for (int k = 0; k < 3; ++k) cam.t[k] = j.at("t")[k].get<double>();
    if (!cam.orthonormal()) throw std::runtime_error("camera: non-orthonormal rotation in " + path);
    if (cam.fx <= 0.0 || cam.fy <= 0.0) throw std::runtime_error("camera: invalid focal in " + path);
    return cam;
}

Grid to_luma(const ColorImage& img) {
    Grid g(img.height(), img.width());
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            g.at(y, x) = 0.299 * img.ch[0].at(y, x) + 0.587 * img.ch[1].at(y, x) +
                         0.114 * img.ch[2].at(y, x);
    return g;
}

int cmd_synth(const std::string& out, uint64_t seed, int width, int height, int frames, int blobs,
              double amp) {
    SynthSpec spec;
    spec.width = width;
    spec.height = height;
    spec.frames = frames;
    spec.blobs = blobs;
    spec.motion_amp_px = amp;
    std::cout << "synth: out=" << out << " seed=" << seed << " size=" << width << "x" << height
              << " frames=" << frames << " blobs=" << blobs << " amp=" << amp << "\n";
    Dataset ds = make_synthetic(seed, spec);
    save_dataset(ds, out);
    std::cout << "synth: wrote " << ds.frames.size() << " frames\n";
    return 0;
}

int cmd_fit(const std::string& data_dir, TrainConfig cfg) {
    Dataset ds = load_dataset(data_dir);
    std::cout << "fit: resolved config\n" << config_to_json(cfg) << "\n";
    FitResult res = fit(ds, cfg);
    if (res.aborted_on_nan) {
        std::cerr << "fit: aborted on non-finite loss; last good checkpoint written\n";
        return 2;
    }
    std::cout << "fit: done, holdout psnr=" << res.final_psnr << " ssim=" << res.final_ssim
              << " epe=" << res.final_epe << "\n";
    return 0;
}

int cmd_render(const std::string& scene_path, const std::string& camera_path, double t,
               double flow_to, bool has_flow_to, const std::string& out_prefix, bool normalize) {
    const auto scene = load_primitives(scene_path);
    const Camera cam = camera_from_json_file(camera_path);
    std::cout << "render: scene=" << scene_path << " camera=" << camera_path << " t=" << t;
    if (has_flow_to) std::cout << " flow-to=" << flow_to;
    std::cout << " out=" << out_prefix << "\n";
    std::optional<FlowPair> fp;
    if (has_flow_to) fp = FlowPair{t, flow_to, cam, cam};
    RenderSettings settings;
    settings.normalize_composites = normalize;
    const RenderOutput out = render(scene, cam, t, fp, settings);
    write_png_rgb8(out_prefix + ".png", out.rgb);
    write_pfm(out_prefix + "_depth.pfm", out.depth);
    if (has_flow_to) {
        FlowField f(out.flow_u.h, out.flow_u.w);
        f.u = out.flow_u;
        f.v = out.flow_v;
        write_flo(f, out_prefix + "_flow.flo");
    }
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& scene_path, const std::string& out_csv,
             const std::string& error_map_prefix) {
    Dataset ds = load_dataset(data_dir);
    const auto scene = load_primitives(scene_path);
    std::cout << "eval: data=" << data_dir << " scene=" << scene_path << "\n";
    std::ofstream csv;
    if (!out_csv.empty()) {
        csv.open(out_csv);
        csv << "frame,psnr,ssim,epe\n";
    }
    std::printf("%8s %10s %8s %8s\n", "frame", "psnr", "ssim", "epe");
    for (int fi : ds.test_idx) {
        const FrameBundle& fb = ds.frames[fi];
        Mask mask(fb.tool.h, fb.tool.w, false);
        for (int y = 0; y < mask.h; ++y)
            for (int x = 0; x < mask.w; ++x) mask.set(y, x, !fb.tool.at(y, x));
        std::optional<FlowPair> fp;
        const bool pair_ok = static_cast<size_t>(fi + 1) < ds.frames.size() &&
                             fi < static_cast<int>(ds.flow_fwd.size()) && ds.flow_fwd[fi].has_value();
        if (pair_ok)
            fp = FlowPair{fb.time, ds.frames[fi + 1].time, fb.cam, ds.frames[fi + 1].cam};
        const RenderOutput out = render(scene, fb.cam, fb.time, fp);
        const double p = psnr(out.rgb, fb.rgb, mask);
        const double s = ssim(out.rgb, fb.rgb, mask);
        double e = 0.0;
        if (pair_ok) {
            FlowField rendered(out.flow_u.h, out.flow_u.w);
            rendered.u = out.flow_u;
            rendered.v = out.flow_v;
            const FlowField& gt = *ds.flow_fwd[fi];
            Mask fm(gt.valid.h, gt.valid.w, false);
            for (int y = 0; y < fm.h; ++y)
                for (int x = 0; x < fm.w; ++x) fm.set(y, x, gt.valid.at(y, x) && mask.at(y, x));
            e = epe(rendered, gt, fm);
        }
        const std::string ps = std::isinf(p) ? "inf" : std::to_string(p);
        std::printf("%8d %10s %8.4f %8.4f\n", fb.index, ps.c_str(), s, e);
        if (csv.is_open()) csv << fb.index << "," << ps << "," << s << "," << e << "\n";
        if (!error_map_prefix.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "_%04d.png", fb.index);
            write_error_map_png(error_map_prefix + name, out.rgb, fb.rgb, mask);
        }
    }
    return 0;
}

int cmd_wavelet(const std::string& in, int q, int levels, const std::string& out_dir) {
    const ColorImage img = read_png_rgb(in);
    const Grid luma = to_luma(img);
    const RationalFilterBank bank = design_filters(q);
    std::cout << "wavelet-decompose: in=" << in << " q=" << q << " levels=" << levels
              << " out=" << out_dir << "\n";
    const WaveletPyramid pyr = decompose(luma, bank, levels);
    fs::create_directories(out_dir);
    nlohmann::json sidecar;
    sidecar["q"] = q;
    sidecar["levels"] = levels;
    auto write_band = [&](const Grid& band, const std::string& name) {
        double lo = band.v[0], hi = band.v[0];
        for (double v : band.v) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        write_png_gray16(out_dir + "/" + name + ".png", band, lo, hi);
        sidecar[name] = {{"min", lo}, {"max", hi}, {"width", band.w}, {"height", band.h}};
    };
    for (size_t j = 0; j < pyr.levels.size(); ++j) {
        const std::string lvl = "level" + std::to_string(j);
        write_band(pyr.levels[j].ll, lvl + "_LL");
        write_band(pyr.levels[j].lh, lvl + "_LH");
        write_band(pyr.levels[j].hl, lvl + "_HL");
        write_band(pyr.levels[j].hh, lvl + "_HH");
    }
    std::ofstream os(out_dir + "/bands.json");
    os << sidecar.dump(2) << "\n";
    return 0;
}

int cmd_flow_check(const std::string& fwd_path, const std::string& bwd_path, double alpha,
                   double beta, const std::string& out_mask) {
    const FlowField fwd = read_flo(fwd_path);
    const FlowField bwd = read_flo(bwd_path);
    const Mask mask = consistency_mask(fwd, bwd, alpha, beta);
    const double frac = static_cast<double>(mask.count()) / (static_cast<double>(mask.h) * mask.w);
    std::cout << "flow-check: fwd=" << fwd_path << " bwd=" << bwd_path << " alpha=" << alpha
              << " beta=" << beta << "\n";
    std::printf("valid fraction: %.6f (%zu of %d pixels)\n", frac, mask.count(), mask.h * mask.w);
    if (!out_mask.empty()) write_mask_png(out_mask, mask);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"endowave: desk-scale dynamic Gaussian splatting trainer and renderer"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with analytic truth");
    std::string synth_out;
    uint64_t synth_seed = 7;
    int synth_w = 64, synth_h = 64, synth_frames = 16, synth_blobs = 6;
    double synth_amp = 3.0;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--seed", synth_seed, "random seed");
    synth->add_option("--width", synth_w, "image width");
    synth->add_option("--height", synth_h, "image height");
    synth->add_option("--frames", synth_frames, "frame count");
    synth->add_option("--blobs", synth_blobs, "moving blob count");
    synth->add_option("--amp", synth_amp, "motion amplitude in pixels");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "train a scene on a dataset");
    std::string fit_data, fit_config, fit_out;
    TrainConfig cfg;
    bool have_seed = false, have_iters = false, have_q = false, have_levels = false;
    uint64_t opt_seed = 0;
    int opt_iters = 0, opt_q = 0, opt_levels = 0;
    double opt_lrgb = -1, opt_ldepth = -1, opt_lflow = -1, opt_lwavelet = -1;
    fit_cmd->add_option("--data", fit_data, "dataset directory")->required();
    fit_cmd->add_option("--out", fit_out, "output directory")->required();
    fit_cmd->add_option("--config", fit_config, "JSON config file");
    fit_cmd->add_option("--seed", opt_seed, "random seed")->each([&](const std::string&) { have_seed = true; });
    fit_cmd->add_option("--iters", opt_iters, "iterations")->each([&](const std::string&) { have_iters = true; });
    fit_cmd->add_option("--q", opt_q, "wavelet dilation parameter")->each([&](const std::string&) { have_q = true; });
    fit_cmd->add_option("--levels", opt_levels, "wavelet levels")->each([&](const std::string&) { have_levels = true; });
    fit_cmd->add_option("--lambda-rgb", opt_lrgb, "rgb loss weight");
    fit_cmd->add_option("--lambda-depth", opt_ldepth, "depth loss weight");
    fit_cmd->add_option("--lambda-flow", opt_lflow, "flow loss weight");
    fit_cmd->add_option("--lambda-wavelet", opt_lwavelet, "wavelet loss weight");

    // render
    auto* render_cmd = app.add_subcommand("render", "render a trained scene");
    std::string r_scene, r_camera, r_out;
    double r_t = 0.0, r_flow_to = 0.0;
    bool r_normalize = false;
    render_cmd->add_option("--scene", r_scene, "EW4D scene file")->required();
    render_cmd->add_option("--camera", r_camera, "camera JSON file")->required();
    render_cmd->add_option("--t", r_t, "normalized time")->required();
    auto* flow_to_opt = render_cmd->add_option("--flow-to", r_flow_to, "second time for flow");
    render_cmd->add_option("--out", r_out, "output prefix")->required();
    render_cmd->add_flag("--normalize-composites", r_normalize, "divide depth/flow by alpha");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM/EPE on the test split");
    std::string e_data, e_scene, e_out, e_maps;
    eval_cmd->add_option("--data", e_data, "dataset directory")->required();
    eval_cmd->add_option("--scene", e_scene, "EW4D scene file")->required();
    eval_cmd->add_option("--out", e_out, "CSV output path");
    eval_cmd->add_option("--error-maps", e_maps, "prefix for color-mapped error panels");

    // wavelet-decompose
    auto* wav_cmd = app.add_subcommand("wavelet-decompose", "write sub-band panels for an image");
    std::string w_in, w_out;
    int w_q = 2, w_levels = 2;
    wav_cmd->add_option("--in", w_in, "input PNG")->required();
    wav_cmd->add_option("--q", w_q, "dilation parameter");
    wav_cmd->add_option("--levels", w_levels, "levels");
    wav_cmd->add_option("--out", w_out, "output directory")->required();

    // flow-check
    auto* fc_cmd = app.add_subcommand("flow-check", "bidirectional consistency statistics");
    std::string fc_fwd, fc_bwd, fc_out;
    double fc_alpha = 0.01, fc_beta = 0.5;
    fc_cmd->add_option("--fwd", fc_fwd, "forward .flo")->required();
    fc_cmd->add_option("--bwd", fc_bwd, "backward .flo")->required();
    fc_cmd->add_option("--alpha", fc_alpha, "relative threshold");
    fc_cmd->add_option("--beta", fc_beta, "absolute threshold, px^2");
    fc_cmd->add_option("--out", fc_out, "write validity mask PNG");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed())
            return cmd_synth(synth_out, synth_seed, synth_w, synth_h, synth_frames, synth_blobs, synth_amp);
        if (fit_cmd->parsed()) {
            if (!fit_config.empty()) cfg = config_from_json_file(fit_config);
            if (have_seed) cfg.seed = opt_seed;
            if (have_iters) cfg.iterations = opt_iters;
            if (have_q) cfg.wavelet_q = opt_q;
            if (have_levels) cfg.wavelet_levels = opt_levels;
            if (opt_lrgb >= 0) cfg.weights.rgb = opt_lrgb;
            if (opt_ldepth >= 0) cfg.weights.depth = opt_ldepth;
            if (opt_lflow >= 0) cfg.weights.flow = opt_lflow;
            if (opt_lwavelet >= 0) cfg.weights.wavelet = opt_lwavelet;
            cfg.out_dir = fit_out;
            return cmd_fit(fit_data, cfg);
        }
        if (render_cmd->parsed())
            return cmd_render(r_scene, r_camera, r_t, r_flow_to, flow_to_opt->count() > 0, r_out, r_normalize);
        if (eval_cmd->parsed()) return cmd_eval(e_data, e_scene, e_out, e_maps);
        if (wav_cmd->parsed()) return cmd_wavelet(w_in, w_q, w_levels, w_out);
        if (fc_cmd->parsed()) return cmd_flow_check(fc_fwd, fc_bwd, fc_alpha, fc_beta, fc_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
