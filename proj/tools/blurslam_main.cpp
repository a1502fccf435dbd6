// blurslam command-line tool.
//
//   blurslam run <dataset>    track and map an RGB-D sequence
//   blurslam synth            generate a synthetic blurred dataset + ground truth
//   blurslam eval <est> <gt>  trajectory ATE, or paired-directory PSNR/SSIM
//
// Exit codes: 0 success, 2 I/O failure, 3 malformed or insufficient data,
// 4 tracking divergence. Argument-syntax errors use CLI11's own codes.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "blurslam/config.hpp"
#include "blurslam/dataset.hpp"
#include "blurslam/errors.hpp"
#include "blurslam/map_io.hpp"
#include "blurslam/metrics.hpp"
#include "blurslam/parallel.hpp"
#include "blurslam/pipeline.hpp"
#include "blurslam/png_io.hpp"
#include "blurslam/splat.hpp"
#include "blurslam/synthetic.hpp"

namespace {

using namespace blurslam;
namespace fs = std::filesystem;

int fail(int code, const std::string& msg) {
    std::cerr << "error: " << msg << "\n";
    return code;
}

/// Maps library exceptions onto the documented exit codes with a one-line
/// diagnostic per failure: 2 for I/O, 3 for bad data, 4 for divergence.
template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const TrackingDiverged& e) {
        return fail(4, e.what());
    } catch (const MissingFile& e) {
        return fail(2, e.what());
    } catch (const MalformedLine& e) {
        return fail(3, e.what());
    } catch (const NoAssociations& e) {
        return fail(3, e.what());
    } catch (const ShapeMismatch& e) {
        return fail(3, e.what());
    } catch (const DomainError& e) {
        return fail(3, e.what());
    } catch (const InsufficientKeypoints& e) {
        return fail(3, e.what());
    } catch (const InsufficientPairs& e) {
        return fail(3, e.what());
    } catch (const NoKeyframes& e) {
        return fail(3, e.what());
    } catch (const CorruptCheckpoint& e) {
        return fail(3, e.what());
    } catch (const SceneValidation& e) {
        return fail(3, e.what());
    } catch (const Error& e) {
        // Remaining library errors (PNG encode, trajectory write) are I/O.
        return fail(2, e.what());
    } catch (const std::exception& e) {
        return fail(3, e.what());
    }
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void ensure_directory(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (!fs::is_directory(path)) throw MissingFile(path);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw MissingFile(path);
    out << text;
    if (!out) throw Error("failed to write " + path);
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunArgs {
    std::string dataset;
    std::string config_path;
    std::string output = "blurslam_out";
    double exposure = 0.0;  // > 0 overrides the dataset exposure
    int threads = 0;
    Config flag_overrides;  // only the keys the user passed on the command line
};

int cmd_run(const RunArgs& a) {
    if (!fs::is_directory(a.dataset)) {
        std::cerr << "dataset: " << a.dataset << ": not found\n";
        return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();

    Dataset ds = load_dataset(a.dataset);
    if (a.exposure > 0.0) ds.intrinsics.exposure = a.exposure;

    Config cfg;
    if (!a.config_path.empty()) cfg = Config::from_file(a.config_path);
    cfg.merge(a.flag_overrides);
    const PipelineConfig pcfg = make_pipeline_config(cfg);

    set_thread_count(a.threads);
    ensure_directory(a.output);
    ensure_directory(a.output + "/renders");
    const double load_s = seconds_since(t0);

    const auto t_slam = std::chrono::steady_clock::now();
    const SequenceResult res = run_slam(ds, pcfg);
    const double slam_s = seconds_since(t_slam);

    const auto t_write = std::chrono::steady_clock::now();
    write_text_file(a.output + "/trajectory_start.txt",
                    export_trajectory(res, TrajectorySample::Start));
    write_text_file(a.output + "/trajectory_mid.txt",
                    export_trajectory(res, TrajectorySample::Mid));
    write_text_file(a.output + "/trajectory_end.txt",
                    export_trajectory(res, TrajectorySample::End));
    save_checkpoint(res.map, a.output + "/map.mbag");

    char name[128];
    for (size_t j = 0; j < res.keyframes.size(); ++j) {
        const Keyframe& kf = res.keyframes[j];
        const RenderResult render =
            rasterize(res.map, mid_pose(kf.trajectory), kf.frame.intrinsics);
        std::snprintf(name, sizeof(name), "%s/renders/keyframe_%06zu.png", a.output.c_str(),
                      res.keyframe_indices[j]);
        write_png_rgb8(name, render.color);
    }
    const double write_s = seconds_since(t_write);

    size_t failures = 0;
    for (const TrackDiagnostics& d : res.diagnostics) failures += d.tracking_failed ? 1 : 0;

    std::ofstream rep(a.output + "/report.txt", std::ios::trunc);
    if (!rep) throw MissingFile(a.output + "/report.txt");
    char line[256];
    rep << "blurslam run report\n";
    rep << "dataset=" << a.dataset << "\n";
    rep << "frames=" << res.world.size() << "\n";
    rep << "keyframes=" << res.keyframes.size() << "\n";
    rep << "tracking_failures=" << failures << "\n";
    rep << "map_gaussians=" << res.map.size() << "\n";
    std::snprintf(line, sizeof(line), "load_s=%.3f\nslam_s=%.3f\nwrite_s=%.3f\ntotal_s=%.3f\n",
                  load_s, slam_s, write_s, seconds_since(t0));
    rep << line;
    rep << "\n[config]\n";
    for (const auto& [key, value] : pipeline_config_entries(pcfg))
        rep << key << "=" << value << "\n";
    rep << "\n[frames]\n";
    for (size_t k = 0; k < res.diagnostics.size(); ++k) {
        const TrackDiagnostics& d = res.diagnostics[k];
        std::snprintf(line, sizeof(line),
                      "frame=%zu ts=%.6f ref=%d keyframe=%d failed=%d cost=%.6g iters=%d "
                      "converged=%d inliers=%.3f keypoints=%d\n",
                      k, d.timestamp, d.reference_keyframe, d.is_keyframe ? 1 : 0,
                      d.tracking_failed ? 1 : 0, d.final_cost, d.iterations,
                      d.converged ? 1 : 0, d.inlier_fraction, d.keypoints_used);
        rep << line;
    }
    rep << "\n[mapping]\n";
    for (size_t j = 0; j < res.mapping_loss.size(); ++j) {
        std::snprintf(line, sizeof(line), "keyframe=%zu frame=%zu loss=%.6g\n", j,
                      res.keyframe_indices[j], res.mapping_loss[j]);
        rep << line;
    }
    if (!rep) throw Error("failed to write " + a.output + "/report.txt");
    rep.close();

    std::cout << "blurslam run: " << res.world.size() << " frames, " << res.keyframes.size()
              << " keyframes, " << failures << " tracking failures, " << res.map.size()
              << " gaussians\n";
    std::cout << "wrote " << a.output
              << "/{trajectory_start,mid,end}.txt, map.mbag, renders/, report.txt\n";
    std::snprintf(line, sizeof(line), "total %.1f s (slam %.1f s)\n", seconds_since(t0),
                  slam_s);
    std::cout << line;

    if (res.world.size() > 1 && failures == res.world.size() - 1) {
        std::cerr << "tracking: diverged on every frame after the first\n";
        return 4;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string output = "synth_out";
    std::string path_name = "sweep";
    long long seed = 1;
    int frames = 20;
    int n_oracle = 64;
    double dt = 0.1;
    double exposure = 0.06;  // 0 disables motion blur
    int threads = 0;
};

int cmd_synth(const SynthArgs& a) {
    if (a.frames < 1) throw DomainError("synth: --frames must be >= 1");
    if (!(a.dt > 0.0)) throw DomainError("synth: --dt must be positive");
    if (a.exposure < 0.0) throw DomainError("synth: --exposure must be >= 0");
    if (a.exposure > 0.0 && a.n_oracle < 2) throw DomainError("synth: --n-oracle must be >= 2");

    set_thread_count(a.threads);
    const SyntheticScene scene =
        SyntheticScene::standard_room(static_cast<uint64_t>(a.seed));
    PathSpec path;
    if (a.path_name == "sweep") {
        path = PathSpec::standard_sweep();
    } else if (a.path_name == "shake") {
        path = PathSpec::shake_stress(a.exposure > 0.0 ? a.exposure : a.dt);
    } else if (a.path_name == "static") {
        path = PathSpec::standard_sweep();
        path.vel.setZero();
        path.trans_sin_amp.setZero();
        path.rot_rate.setZero();
        path.rot_sin_amp.setZero();
    } else {
        throw DomainError("synth: unknown path '" + a.path_name + "'");
    }

    const Intrinsics cam = default_camera(a.exposure);
    GtSequence seq;
    if (a.exposure > 0.0) {
        seq = generate_sequence(scene, path, cam, a.frames, a.dt, a.n_oracle);
    } else {
        // Instantaneous captures: one render per frame, blurry == sharp.
        seq.cam = cam;
        for (int k = 0; k < a.frames; ++k) {
            GtFrame f;
            f.timestamp = k * a.dt;
            const PoseSE3 pose = path.pose_at(f.timestamp);
            double coverage = 0.0;
            auto view = render_scene(scene, cam, pose, &coverage);
            if (coverage < 0.6)
                throw SceneValidation("synthetic frame covers only " +
                                      std::to_string(coverage) + " of the image (need >= 0.6)");
            f.traj_w = {pose, pose, 0.0};
            f.sharp_mid = view.first;
            f.depth_mid = std::move(view.second);
            f.blurry = std::move(view.first);
            seq.frames.push_back(std::move(f));
        }
    }

    ensure_directory(a.output);
    std::vector<RgbdFrame> frames;
    frames.reserve(seq.frames.size());
    for (const GtFrame& f : seq.frames) frames.push_back(f.as_rgbd(cam));

    // Ground truth is sampled from the true analytic path (not the
    // two-endpoint interpolation model), so evaluation compares against the
    // oracle even on deliberately non-geodesic paths.
    const auto gt_at = [&](double offset) {
        std::vector<TimedPose> out;
        out.reserve(seq.frames.size());
        for (const GtFrame& f : seq.frames)
            out.push_back({f.timestamp + offset, path.pose_at(f.timestamp + offset)});
        return out;
    };
    write_tum_dataset(a.output, cam, frames, gt_at(0.5 * a.exposure));
    save_trajectory_file(a.output + "/groundtruth_start.txt", gt_at(0.0),
                         "ground truth at exposure start");
    save_trajectory_file(a.output + "/groundtruth_mid.txt", gt_at(0.5 * a.exposure),
                         "ground truth at mid exposure");
    save_trajectory_file(a.output + "/groundtruth_end.txt", gt_at(a.exposure),
                         "ground truth at exposure end");

    ensure_directory(a.output + "/sharp");
    char ts_buf[64];
    for (const GtFrame& f : seq.frames) {
        std::snprintf(ts_buf, sizeof(ts_buf), "%.6f", f.timestamp);
        write_png_rgb8(a.output + "/sharp/" + ts_buf + ".png", f.sharp_mid);
    }

    std::cout << "blurslam synth: wrote " << seq.frames.size() << " frames (path="
              << a.path_name << ", exposure=" << a.exposure << ", seed=" << a.seed << ") to "
              << a.output << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string est;
    std::string gt;
    double tolerance = 0.02;
    bool with_scale = false;
    bool images = false;
    int threads = 0;
};

int eval_images(const EvalArgs& a) {
    for (const std::string& dir : {a.est, a.gt}) {
        if (!fs::is_directory(dir)) {
            std::cerr << "images: " << dir << ": not found\n";
            return 2;
        }
    }
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(a.est)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
        const std::string name = entry.path().filename().string();
        if (fs::is_regular_file(fs::path(a.gt) / name)) names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    if (names.empty())
        throw InsufficientPairs("no paired .png files between " + a.est + " and " + a.gt);

    double psnr_sum = 0.0, ssim_sum = 0.0;
    char line[256];
    for (const std::string& name : names) {
        const ImageBuffer est_img = read_png_rgb8((fs::path(a.est) / name).string());
        const ImageBuffer gt_img = read_png_rgb8((fs::path(a.gt) / name).string());
        const double p = psnr(est_img, gt_img);
        const double s = ssim(est_img, gt_img);
        psnr_sum += p;
        ssim_sum += s;
        std::snprintf(line, sizeof(line), "pair=%s psnr=%.6g ssim=%.6g\n", name.c_str(), p, s);
        std::cout << line;
    }
    const double n = static_cast<double>(names.size());
    std::snprintf(line, sizeof(line), "pairs=%zu\nmean_psnr_db=%.9g\nmean_ssim=%.9g\n",
                  names.size(), psnr_sum / n, ssim_sum / n);
    std::cout << line;
    return 0;
}

int cmd_eval(const EvalArgs& a) {
    set_thread_count(a.threads);
    if (a.images) return eval_images(a);

    const std::vector<TimedPose> est = load_trajectory_file(a.est);
    const std::vector<TimedPose> gt = load_trajectory_file(a.gt);
    const AteReport report = ate_rmse(est, gt, a.tolerance, a.with_scale);

    char line[320];
    std::snprintf(line, sizeof(line),
                  "ATE over %d pairs: rmse %.6f m (mean %.6f, median %.6f, max %.6f)\n",
                  report.pairs, report.rmse, report.mean, report.median, report.max);
    std::cout << line;
    std::snprintf(line, sizeof(line),
                  "pairs=%d\nate_rmse_m=%.9g\nate_mean_m=%.9g\nate_median_m=%.9g\n"
                  "ate_max_m=%.9g\nscale=%.9g\n",
                  report.pairs, report.rmse, report.mean, report.median, report.max,
                  report.scale);
    std::cout << line;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"motion-blur-aware dense RGB-D tracking and mapping"};
    app.require_subcommand(1);

    RunArgs run_args;
    long long run_seed = 0;
    int run_n_virtual = 0;
    bool run_no_blur = false;
    CLI::App* run = app.add_subcommand("run", "Track and map an RGB-D dataset directory");
    run->add_option("dataset", run_args.dataset, "dataset directory (TUM layout)")->required();
    run->add_option("--config", run_args.config_path, "key=value configuration file");
    run->add_option("--output", run_args.output, "output directory")->capture_default_str();
    run->add_option("--seed", run_seed, "pipeline random seed");
    run->add_option("--threads", run_args.threads,
                    "worker threads (0 = machine parallelism)")->capture_default_str();
    run->add_option("--n-virtual", run_n_virtual,
                    "virtual sharp images per exposure (tracker and mapper)");
    run->add_flag("--no-blur-model", run_no_blur,
                  "ablation baseline: force n_virtual = 1 everywhere");
    run->add_option("--exposure", run_args.exposure,
                    "override the dataset exposure time in seconds (> 0)");

    SynthArgs synth_args;
    CLI::App* synth =
        app.add_subcommand("synth", "Generate a synthetic blurred RGB-D dataset");
    synth->add_option("--output", synth_args.output, "output dataset directory")->capture_default_str();
    synth->add_option("--seed", synth_args.seed, "scene generator seed")->capture_default_str();
    synth->add_option("--path", synth_args.path_name, "camera path: sweep | shake | static")
        ->capture_default_str()
        ->check(CLI::IsMember({"sweep", "shake", "static"}));
    synth->add_option("--frames", synth_args.frames, "number of frames")->capture_default_str();
    synth->add_option("--dt", synth_args.dt, "frame interval in seconds")->capture_default_str();
    synth->add_option("--exposure", synth_args.exposure,
                      "exposure time in seconds (0 disables blur)")->capture_default_str();
    synth->add_option("--n-oracle", synth_args.n_oracle,
                      "oracle views averaged per blurred frame")->capture_default_str();
    synth->add_option("--threads", synth_args.threads,
                      "worker threads (0 = machine parallelism)")->capture_default_str();

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "Evaluate a trajectory or paired renders");
    eval->add_option("estimate", eval_args.est, "estimated trajectory file (or PNG directory)")
        ->required();
    eval->add_option("groundtruth", eval_args.gt,
                     "ground-truth trajectory file (or PNG directory)")
        ->required();
    eval->add_option("--tolerance", eval_args.tolerance,
                     "timestamp association tolerance in seconds")->capture_default_str();
    eval->add_flag("--with-scale", eval_args.with_scale,
                   "estimate a similarity scale during alignment");
    eval->add_flag("--images", eval_args.images,
                   "treat inputs as paired PNG directories and report PSNR/SSIM");
    eval->add_option("--threads", eval_args.threads,
                     "worker threads (0 = machine parallelism)")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) {
        if (run->count("--seed"))
            run_args.flag_overrides.set("pipeline.seed", std::to_string(run_seed));
        if (run->count("--n-virtual")) {
            run_args.flag_overrides.set("tracker.n_virtual", std::to_string(run_n_virtual));
            run_args.flag_overrides.set("mapper.n_virtual", std::to_string(run_n_virtual));
        }
        if (run_no_blur) {
            run_args.flag_overrides.set("tracker.n_virtual", "1");
            run_args.flag_overrides.set("mapper.n_virtual", "1");
        }
        return guarded([&] { return cmd_run(run_args); });
    }
    if (synth->parsed()) return guarded([&] { return cmd_synth(synth_args); });
    return guarded([&] { return cmd_eval(eval_args); });
}
