#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cract/harness.hpp"
#include "cract/oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> list_frames(const std::string& dir) {
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        if (ext == ".pgm" || ext == ".ppm") paths.push_back(entry.path().string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw std::runtime_error("no .pgm/.ppm frames found in " + dir);
    return paths;
}

cract::Box parse_box_arg(const std::string& s) {
    double v[4];
    if (std::sscanf(s.c_str(), "%lf,%lf,%lf,%lf", &v[0], &v[1], &v[2], &v[3]) != 4) {
        throw std::runtime_error("expected x,y,w,h but got '" + s + "'");
    }
    return cract::Box::from_corner(v[0], v[1], v[2], v[3]);
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    cract::SyntheticSceneSpec spec = cract::SyntheticSceneSpec::from_json_file(spec_path);
    auto [frames, gt] = cract::gen_sequence(spec);

    fs::create_directories(out_dir);
    char name[64];
    for (size_t t = 0; t < frames.size(); ++t) {
        std::snprintf(name, sizeof(name), "frame_%04zu.pgm", t + 1);
        cract::write_image((fs::path(out_dir) / name).string(), frames[t]);
    }
    cract::write_annotations((fs::path(out_dir) / "groundtruth.txt").string(), gt);
    std::printf("wrote %zu frames and groundtruth.txt to %s\n", frames.size(), out_dir.c_str());
    return 0;
}

int cmd_track(const std::string& seq_dir, const std::string& init_str,
              const std::string& config_path, const std::string& out_path,
              const std::string& overlay_dir) {
    cract::Config cfg =
        config_path.empty() ? cract::Config{} : cract::Config::from_file(config_path);
    cract::Box b1 = parse_box_arg(init_str);

    std::vector<std::string> paths = list_frames(seq_dir);
    cract::ImagePatch first = cract::read_image(paths[0]);

    auto t0 = std::chrono::steady_clock::now();
    cract::TrackerState state = cract::init(first, b1, cfg, cract::HeadModels::make(cfg));
    std::vector<cract::Box> pred = {state.current_box};
    for (size_t t = 1; t < paths.size(); ++t) {
        pred.push_back(cract::track_frame(&state, cract::read_image(paths[t])));
    }
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    cract::write_annotations(out_path, pred);
    if (!overlay_dir.empty()) {
        fs::create_directories(overlay_dir);
        char name[64];
        for (size_t t = 0; t < paths.size(); ++t) {
            cract::ImagePatch img = cract::read_image(paths[t]);
            cract::ImagePatch overlay =
                cract::render_overlay(img, {{pred[t], {0.1f, 0.9f, 0.1f}}});
            std::snprintf(name, sizeof(name), "overlay_%04zu.ppm", t + 1);
            cract::write_image((fs::path(overlay_dir) / name).string(), overlay);
        }
    }
    std::printf("tracked %zu frames in %.2f s (%.1f fps), results in %s\n", paths.size(), seconds,
                (paths.size() - 1) / std::max(seconds, 1e-9), out_path.c_str());
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, bool as_json, double fps) {
    std::vector<cract::Box> pred = cract::read_annotations(pred_path);
    std::vector<cract::Box> gt = cract::read_annotations(gt_path);
    cract::EvalResult r = cract::eval_ope(pred, gt);
    r.fps = fps;

    if (as_json) {
        json j;
        j["precision"] = r.precision;
        j["success_auc"] = r.success_auc;
        j["per_frame_iou"] = r.per_frame_iou;
        j["fps"] = r.fps;
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("precision(20px) = %.4f\n", r.precision);
        std::printf("success AUC     = %.4f\n", r.success_auc);
        std::printf("frames          = %zu\n", r.per_frame_iou.size());
    }
    return 0;
}

int cmd_ablate(const std::string& suite, const std::string& tier_name,
               const std::vector<std::string>& arms, bool as_json, int jobs, uint64_t seed) {
    if (suite != "standard") throw std::runtime_error("only --suite standard is available");
    std::vector<cract::SyntheticSceneSpec> specs =
        cract::standard_suite(cract::tier_from_name(tier_name));

    cract::Config base;
    base.seed = seed;
    std::vector<cract::ArmResult> results = cract::run_ablation(specs, base, arms, jobs);

    if (as_json) {
        json j;
        for (const auto& r : results) {
            json a;
            a["precision"] = r.mean_precision;
            a["success_auc"] = r.mean_auc;
            a["fps"] = r.mean_fps;
            a["per_seq_auc"] = r.per_seq_auc;
            a["per_seq_precision"] = r.per_seq_precision;
            j[r.arm] = a;
        }
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("%-20s %-10s %-10s %-8s\n", "arm", "SUC", "PRE", "fps");
        for (const auto& r : results) {
            std::printf("%-20s %-10.4f %-10.4f %-8.1f\n", r.arm.c_str(), r.mean_auc,
                        r.mean_precision, r.mean_fps);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CRACT tracking-by-proposal-selection engine"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic sequence");
    std::string spec_path, out_dir;
    synth->add_option("--spec", spec_path, "scene spec JSON file")->required();
    synth->add_option("--out", out_dir, "output directory")->required();

    auto* track = app.add_subcommand("track", "run the tracker over a sequence directory");
    std::string seq_dir, init_str, config_path, results_path = "results.txt", overlay_dir;
    track->add_option("--seq", seq_dir, "directory of .pgm/.ppm frames")->required();
    track->add_option("--init", init_str, "first-frame box x,y,w,h (top-left corner)")->required();
    track->add_option("--config", config_path, "key=value config file");
    track->add_option("--out", results_path, "output annotation file");
    track->add_option("--overlay", overlay_dir, "directory for overlay PPM frames");

    auto* eval = app.add_subcommand("eval", "OPE metrics for predictions vs ground truth");
    std::string pred_path, gt_path;
    bool eval_json = false;
    double eval_fps = 0.0;
    eval->add_option("--pred", pred_path, "predicted annotation file")->required();
    eval->add_option("--gt", gt_path, "ground-truth annotation file")->required();
    eval->add_flag("--json", eval_json, "print JSON");
    eval->add_option("--fps", eval_fps, "tracking fps to report in the output");

    auto* ablate = app.add_subcommand("ablate", "run ablation arms on the standard suite");
    std::string suite = "standard", tier = "high";
    std::string arms_csv = "cascaded,parallel,identifier_only,discriminator_only,roialign";
    bool ablate_json = false;
    int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    uint64_t seed = 1;
    ablate->add_option("--suite", suite, "suite name (standard)");
    ablate->add_option("--tier", tier, "distractor tier: none|mid|high");
    ablate->add_option("--arms", arms_csv, "comma-separated arm list");
    ablate->add_flag("--json", ablate_json, "print JSON");
    ablate->add_option("--jobs", jobs, "worker threads");
    ablate->add_option("--seed", seed, "tracker config seed");

    auto* oracle = app.add_subcommand("oracle", "run all brute-force oracle comparisons");
    uint64_t oracle_seed = 1;
    oracle->add_option("--seed", oracle_seed, "oracle RNG seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(spec_path, out_dir);
        if (track->parsed()) {
            return cmd_track(seq_dir, init_str, config_path, results_path, overlay_dir);
        }
        if (eval->parsed()) return cmd_eval(pred_path, gt_path, eval_json, eval_fps);
        if (ablate->parsed()) {
            std::vector<std::string> arms;
            std::stringstream ss(arms_csv);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (!item.empty()) arms.push_back(item);
            }
            return cmd_ablate(suite, tier, arms, ablate_json, jobs, seed);
        }
        if (oracle->parsed()) {
            int failures = cract::oracle::run_all(oracle_seed, true);
            std::printf(failures == 0 ? "all oracle checks passed\n"
                                      : "%d oracle check(s) FAILED\n",
                        failures);
            return failures == 0 ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
