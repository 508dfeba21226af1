// tubeloc: sample-tube localization toolkit command line.
//
// Subcommands: detect, pose, localize, quantize, transplant, eval, bench.
// Exit codes: 0 success (including empty results), 1 usage error,
// 2 unreadable or malformed input data, 3 pipeline-stage failure.

#include "tubeloc/darknet.hpp"
#include "tubeloc/errors.hpp"
#include "tubeloc/evalbench.hpp"
#include "tubeloc/imgcore.hpp"
#include "tubeloc/nnexec.hpp"
#include "tubeloc/posecv.hpp"
#include "tubeloc/stereo3d.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

using json = nlohmann::ordered_json;
using namespace tubeloc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitPipeline = 3;

struct RunConfig {
    std::string cfg;
    std::string weights;
    std::string calibration; // optional; switches detection to the int8 path
    std::string rig;
    double conf_threshold = 0.75;
    double nms_iou = 0.45;
    double match_iou = 0.5;
    int pose_block = 15;
    double pose_offset = 5;
    double dem_cell_m = 0.02;
    std::string out_dir = "out";
    int jobs = 1;
    bool debug = false;
};

void apply_config_line(RunConfig& config, const std::string& key,
                       const std::string& value, const std::string& where) {
    try {
        if (key == "cfg") config.cfg = value;
        else if (key == "weights") config.weights = value;
        else if (key == "calibration") config.calibration = value;
        else if (key == "rig") config.rig = value;
        else if (key == "conf_threshold") config.conf_threshold = std::stod(value);
        else if (key == "nms_iou") config.nms_iou = std::stod(value);
        else if (key == "match_iou") config.match_iou = std::stod(value);
        else if (key == "pose_block") config.pose_block = std::stoi(value);
        else if (key == "pose_offset") config.pose_offset = std::stod(value);
        else if (key == "dem_cell_m") config.dem_cell_m = std::stod(value);
        else if (key == "out_dir") config.out_dir = value;
        else if (key == "jobs") config.jobs = std::stoi(value);
        else if (key == "debug") config.debug = value != "0" && value != "false";
        else throw ParseError(where + ": unknown config key \"" + key + "\"");
    } catch (const std::invalid_argument&) {
        throw ParseError(where + ": bad value for \"" + key + "\"");
    }
}

RunConfig load_run_config(const std::string& explicit_path) {
    RunConfig config;
    std::string path = explicit_path;
    if (path.empty()) {
        const char* env = std::getenv("TUBELOC_CONFIG");
        if (env != nullptr)
            path = env;
    }
    if (path.empty())
        return config;
    std::ifstream in(path);
    if (!in)
        throw ParseError("config: cannot open " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            continue;
        auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos)
                return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        const std::string key = strip(line.substr(0, eq));
        if (key.empty())
            continue;
        apply_config_line(config, key, strip(line.substr(eq + 1)),
                          path + " line " + std::to_string(line_no));
    }
    return config;
}

Detector load_detector(const RunConfig& config) {
    if (config.cfg.empty())
        throw ParseError("no network cfg configured (set cfg= or --cfg)");
    if (config.weights.empty())
        throw ParseError("no weights configured (set weights= or --weights)");
    NetworkDef net = load_cfg(config.cfg);
    WeightStore weights = load_weights(config.weights, net);
    if (!config.calibration.empty()) {
        Calibration calib = Calibration::load(config.calibration, net);
        return Detector::quantized_model(std::move(net), std::move(weights),
                                         std::move(calib));
    }
    return Detector::float_model(std::move(net), std::move(weights));
}

StereoRig load_rig_or_default(const RunConfig& config, int width, int height) {
    if (!config.rig.empty())
        return load_rig(config.rig);
    StereoRig rig;
    rig.intrinsics = intrinsics_from_hfov(width, height, 66.0);
    return rig;
}

json detection_to_json(const std::string& image, const Detection& det) {
    return json{{"image", image},
                {"class_id", det.class_id},
                {"confidence", det.confidence},
                {"box", {det.box.x, det.box.y, det.box.w, det.box.h}}};
}

json pose_to_json(const std::string& image, const TubePoseImage& pose) {
    return json{{"image", image},
                {"endpoints_px",
                 {{pose.endpoints[0].x, pose.endpoints[0].y},
                  {pose.endpoints[1].x, pose.endpoints[1].y}}},
                {"centroid_px", {pose.centroid.x, pose.centroid.y}},
                {"orientation_deg", pose.orientation_deg},
                {"degraded", pose.degraded}};
}

json pose3d_to_json(const TubePose3D& pose) {
    return json{{"endpoints_m",
                 {{pose.endpoints[0].x, pose.endpoints[0].y, pose.endpoints[0].z},
                  {pose.endpoints[1].x, pose.endpoints[1].y, pose.endpoints[1].z}}},
                {"centroid_m", {pose.centroid.x, pose.centroid.y, pose.centroid.z}},
                {"yaw_deg", pose.yaw_deg}};
}

// Pose on one crop; the box is in full-image coordinates.
TubePoseImage pose_on_box(const GrayImage& image, const BoundingBox& box,
                          const RunConfig& config, const std::string& debug_stem) {
    const CropResult cropped = crop(image, box);
    const Vec2 centroid{box.center_x() - cropped.offset_x,
                        box.center_y() - cropped.offset_y};
    PoseDebug debug;
    PoseDebug* debug_ptr = config.debug ? &debug : nullptr;
    const TubePoseImage pose =
        estimate_pose_2d(cropped.image, centroid,
                         {config.pose_block, config.pose_offset},
                         cropped.offset_x, cropped.offset_y, debug_ptr);
    if (config.debug) {
        std::filesystem::create_directories(config.out_dir);
        const std::filesystem::path base =
            std::filesystem::path(config.out_dir) / debug_stem;
        save_pgm(cropped.image, base.string() + "_crop.pgm");
        save_pgm(debug.blurred, base.string() + "_blur.pgm");
        save_pgm(debug.sobel, base.string() + "_sobel.pgm");
        save_pgm(debug.equalized, base.string() + "_equalized.pgm");
        GrayImage mask_img(debug.mask.width, debug.mask.height);
        for (std::size_t i = 0; i < debug.mask.fg.size(); ++i)
            mask_img.pixels[i] = debug.mask.fg[i] ? 255 : 0;
        save_pgm(mask_img, base.string() + "_mask.pgm");
    }
    return pose;
}

int cmd_detect(const RunConfig& config, const std::vector<std::string>& images) {
    const Detector detector = load_detector(config);
    std::vector<std::string> lines(images.size());
    std::vector<std::string> errors(images.size());

    auto run_one = [&](std::size_t index) {
        try {
            const GrayImage image = load_pgm(images[index]);
            const auto dets =
                detector.detect(image, config.conf_threshold, config.nms_iou);
            std::string out;
            for (const Detection& det : dets)
                out += detection_to_json(images[index], det).dump() + "\n";
            lines[index] = std::move(out);
        } catch (const Error& e) {
            errors[index] = e.what();
        }
    };

    if (config.jobs <= 1) {
        for (std::size_t i = 0; i < images.size(); ++i)
            run_one(i);
    } else {
        std::atomic<std::size_t> cursor{0};
        std::vector<std::thread> workers;
        for (int t = 0; t < std::min<int>(config.jobs, images.size()); ++t)
            workers.emplace_back([&] {
                for (std::size_t i = cursor.fetch_add(1); i < images.size();
                     i = cursor.fetch_add(1))
                    run_one(i);
            });
        for (auto& worker : workers)
            worker.join();
    }

    bool any_error = false;
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::cout << lines[i];
        if (!errors[i].empty()) {
            any_error = true;
            std::cerr << "error: " << images[i] << ": " << errors[i] << "\n";
        }
    }
    return any_error ? kExitData : kExitOk;
}

int cmd_pose(const RunConfig& config, const std::string& image_path,
             const std::string& box_spec, bool auto_box) {
    const GrayImage image = load_pgm(image_path);
    BoundingBox box;
    if (auto_box) {
        const Detector detector = load_detector(config);
        const auto dets = detector.detect(image, config.conf_threshold, config.nms_iou);
        if (dets.empty())
            throw PipelineError("detect", "no detection above threshold " +
                                              std::to_string(config.conf_threshold));
        box = dets.front().box;
    } else {
        double x, y, w, h;
        if (std::sscanf(box_spec.c_str(), "%lf,%lf,%lf,%lf", &x, &y, &w, &h) != 4)
            throw ParseError("--box expects x,y,w,h");
        box = BoundingBox{x, y, w, h};
    }
    const TubePoseImage pose = pose_on_box(
        image, box, config, std::filesystem::path(image_path).stem().string());
    std::cout << pose_to_json(image_path, pose).dump() << "\n";
    return kExitOk;
}

int cmd_localize(const RunConfig& config, const std::string& image_path,
                 const std::string& disparity_path, const std::string& dem_out) {
    const GrayImage image = load_pgm(image_path);
    const PfmLoadResult pfm = load_pfm(disparity_path);
    if (pfm.disparity.width != image.width || pfm.disparity.height != image.height)
        throw ParseError("disparity dims do not match the image");

    const Detector detector = load_detector(config);
    const auto dets = detector.detect(image, config.conf_threshold, config.nms_iou);
    if (dets.empty())
        throw PipelineError("detect", "no detection above threshold");
    const Detection best = dets.front();

    const TubePoseImage pose2d = pose_on_box(
        image, best.box, config, std::filesystem::path(image_path).stem().string());

    const StereoRig rig = load_rig_or_default(config, image.width, image.height);
    const TubePose3D pose3d = lift_pose_to_3d(pose2d, pfm.disparity, rig);

    json out{{"image", image_path},
             {"disparity", disparity_path},
             {"detection", detection_to_json(image_path, best)},
             {"pose2d", pose_to_json(image_path, pose2d)},
             {"pose3d", pose3d_to_json(pose3d)}};

    if (!dem_out.empty()) {
        const Dem dem = build_dem(pfm.disparity, image, rig, config.dem_cell_m);
        save_dem_csv(dem, dem_out + ".csv");
        save_dem_pgm(dem, dem_out + ".pgm", dem_out + ".txt");
        out["dem"] = json{{"csv", dem_out + ".csv"},
                          {"pgm", dem_out + ".pgm"},
                          {"cell_m", config.dem_cell_m},
                          {"filled_cells", dem.filled_cells()}};
    }
    std::cout << out.dump() << "\n";
    return kExitOk;
}

int cmd_quantize(const RunConfig& config, const std::string& images_dir,
                 const std::string& out_weights, const std::string& out_calibration) {
    if (config.cfg.empty() || config.weights.empty())
        throw ParseError("quantize needs --cfg and --weights");
    const NetworkDef net = load_cfg(config.cfg);
    const WeightStore weights = load_weights(config.weights, net);

    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(images_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".pgm")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<GrayImage> images;
    for (const auto& file : files)
        images.push_back(load_pgm(file));
    if (images.empty())
        throw ParseError("no .pgm calibration images under " + images_dir);

    const Calibration calib = calibrate(net, weights, images);
    save_weights(weights, out_weights);
    calib.save(out_calibration);

    std::cout << "calibrated " << net.layers.size() << " layers over "
              << images.size() << " images\n";
    for (std::size_t i = 0; i < calib.layers.size(); ++i)
        std::cout << "layer_" << i << " scale=" << calib.layers[i].scale
                  << " zero_point=" << calib.layers[i].zero_point << "\n";
    return kExitOk;
}

int cmd_transplant(const std::string& cfg_path, const std::string& source_path,
                   const std::string& dest_path, int cutoff,
                   const std::string& out_path) {
    const NetworkDef net = load_cfg(cfg_path);
    const WeightStore source = load_weights(source_path, net);
    const WeightStore dest = load_weights(dest_path, net);
    TransplantPlan plan;
    plan.cutoff = cutoff >= 0 ? cutoff : default_transplant_cutoff(net);
    plan.source_id = source_path;
    plan.dest_id = dest_path;
    const WeightStore out = transplant_backbone(source, dest, plan);
    save_weights(out, out_path);
    std::cout << "transplanted layers [0, " << plan.cutoff << ") from "
              << source_path << " into " << dest_path << " -> " << out_path << "\n";
    return kExitOk;
}

int cmd_eval(const RunConfig& config, const std::string& dataset_dir) {
    const Detector detector = load_detector(config);
    const Dataset dataset = load_dataset(dataset_dir);
    const EvalResult result =
        run_eval(detector, dataset, config.conf_threshold, config.match_iou,
                 config.jobs, {config.pose_block, config.pose_offset});

    json images = json::array();
    for (const auto& record : result.images) {
        json r{{"image", record.image_id},
               {"tp", record.tp},
               {"fn", record.fn},
               {"fp", record.fp}};
        if (!record.error.empty())
            r["error"] = record.error;
        images.push_back(std::move(r));
    }
    json out{{"dataset", dataset_dir},
             {"conf_threshold", config.conf_threshold},
             {"match_iou", config.match_iou},
             {"true_positives", result.metrics.tp},
             {"false_negatives", result.metrics.fn},
             {"false_positives", result.metrics.fp},
             {"images", images}};
    if (result.orientation) {
        const OrientationStats& stats = *result.orientation;
        out["orientation"] = json{
            {"samples", static_cast<long>(stats.errors.size())},
            {"mean_deg", stats.mean},
            {"stddev_pop_deg", stats.stddev_pop},
            {"stddev_sample_deg", stats.stddev_sample},
            {"fraction_under_5deg", stats.fraction_under_5deg},
            {"histogram_5deg", stats.histogram}};
    }

    std::string table =
        format_metrics_table("Detection metrics (" + dataset_dir + ")", result.metrics);
    if (result.orientation) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "Orientation error: %.2f +/- %.2f deg over %zu frames, "
                      "%.1f%% under 5 deg\n",
                      result.orientation->mean, result.orientation->stddev_pop,
                      result.orientation->errors.size(),
                      100.0 * result.orientation->fraction_under_5deg);
        table += buf;
    }
    std::cout << table;

    std::filesystem::create_directories(config.out_dir);
    std::ofstream json_out(std::filesystem::path(config.out_dir) / "eval.json");
    json_out << out.dump(2) << "\n";
    std::ofstream text_out(std::filesystem::path(config.out_dir) / "eval.txt");
    text_out << table;

    bool any_error = false;
    for (const auto& record : result.images)
        if (!record.error.empty()) {
            any_error = true;
            std::cerr << "error: " << record.image_id << ": " << record.error << "\n";
        }
    return any_error ? kExitData : kExitOk;
}

struct BenchModelSpec {
    std::string name;
    std::string cfg;
    std::string weights;
    std::string calibration;
};

BenchModelSpec parse_bench_model(const std::string& spec) {
    BenchModelSpec model;
    std::vector<std::string> parts;
    std::string token;
    std::istringstream ss(spec);
    while (std::getline(ss, token, ','))
        parts.push_back(token);
    if (parts.size() < 3 || parts.size() > 4)
        throw ParseError("--model expects name,cfg,weights[,calibration]");
    model.name = parts[0];
    model.cfg = parts[1];
    model.weights = parts[2];
    if (parts.size() == 4)
        model.calibration = parts[3];
    return model;
}

int cmd_bench(const RunConfig& config, const std::vector<std::string>& model_specs,
              const std::string& images_dir, int warmup, int iters) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(images_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".pgm")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<GrayImage> images;
    for (const auto& file : files)
        images.push_back(load_pgm(file));
    if (images.empty())
        throw ParseError("no .pgm images under " + images_dir);

    BenchReport report;
    for (const std::string& spec : model_specs) {
        const BenchModelSpec model = parse_bench_model(spec);
        RunConfig model_config = config;
        model_config.cfg = model.cfg;
        model_config.weights = model.weights;
        model_config.calibration = model.calibration;
        const Detector detector = load_detector(model_config);
        report.rows.push_back(
            bench_inference(detector, images, model.name, warmup, iters));
    }

    const std::string table = format_bench_table(report);
    std::cout << table;

    json rows = json::array();
    for (const BenchRow& row : report.rows)
        rows.push_back(json{{"model", row.model_name},
                            {"path", row.exec_path},
                            {"mean_ms", row.mean_ms},
                            {"std_ms", row.std_ms},
                            {"iterations", row.iterations},
                            {"warmup", row.warmup}});
    std::filesystem::create_directories(config.out_dir);
    std::ofstream json_out(std::filesystem::path(config.out_dir) / "bench.json");
    json_out << json{{"rows", rows}}.dump(2) << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sample-tube localization toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path,
                   "key=value run configuration (default: $TUBELOC_CONFIG)");

    RunConfig overrides;
    bool have_conf = false, have_nms = false, have_match = false, have_block = false,
         have_offset = false, have_jobs = false, have_debug = false,
         have_out_dir = false;

    auto add_model_flags = [&](CLI::App* cmd) {
        cmd->add_option("--cfg", overrides.cfg, "network definition file");
        cmd->add_option("--weights", overrides.weights, "weight container");
        cmd->add_option("--calibration", overrides.calibration,
                        "calibration sidecar (enables the int8 path)");
    };
    auto add_threshold_flags = [&](CLI::App* cmd) {
        cmd->add_option_function<double>(
            "--conf", [&](double v) { overrides.conf_threshold = v; have_conf = true; },
            "confidence threshold");
        cmd->add_option_function<double>(
            "--nms-iou", [&](double v) { overrides.nms_iou = v; have_nms = true; },
            "suppression IoU threshold");
    };

    auto* detect_cmd = app.add_subcommand("detect", "detect tubes in PGM images");
    std::vector<std::string> detect_images;
    detect_cmd->add_option("images", detect_images, "PGM images")->required();
    add_model_flags(detect_cmd);
    add_threshold_flags(detect_cmd);
    detect_cmd->add_option_function<int>(
        "--jobs", [&](int v) { overrides.jobs = v; have_jobs = true; },
        "parallel image workers");

    auto* pose_cmd = app.add_subcommand("pose", "estimate the image-plane pose");
    std::string pose_image, pose_box;
    bool pose_auto = false;
    pose_cmd->add_option("image", pose_image, "PGM image")->required();
    pose_cmd->add_option("--box", pose_box, "detection box as x,y,w,h");
    pose_cmd->add_flag("--auto", pose_auto, "run the detector to find the box");
    add_model_flags(pose_cmd);
    add_threshold_flags(pose_cmd);
    pose_cmd->add_option_function<int>(
        "--pose-block", [&](int v) { overrides.pose_block = v; have_block = true; },
        "adaptive threshold window");
    pose_cmd->add_option_function<double>(
        "--pose-offset", [&](double v) { overrides.pose_offset = v; have_offset = true; },
        "adaptive threshold offset");
    pose_cmd->add_flag_function(
        "--debug", [&](std::int64_t) { overrides.debug = true; have_debug = true; },
        "write stage images to the output directory");
    pose_cmd->add_option_function<std::string>(
        "--out-dir",
        [&](const std::string& v) { overrides.out_dir = v; have_out_dir = true; },
        "output directory");

    auto* localize_cmd =
        app.add_subcommand("localize", "detect, estimate pose, lift to 3D");
    std::string localize_image, localize_disparity, localize_dem_out;
    double localize_dem_cell = -1;
    localize_cmd->add_option("image", localize_image, "PGM image")->required();
    localize_cmd->add_option("disparity", localize_disparity, "PFM disparity")
        ->required();
    add_model_flags(localize_cmd);
    add_threshold_flags(localize_cmd);
    localize_cmd->add_option("--rig", overrides.rig, "stereo rig configuration");
    localize_cmd->add_option("--dem-out", localize_dem_out,
                             "also rasterize a DEM, writing <prefix>.{csv,pgm,txt}");
    localize_cmd->add_option("--dem-cell", localize_dem_cell,
                             "DEM cell size in meters");

    auto* quantize_cmd =
        app.add_subcommand("quantize", "calibrate the int8 deployment path");
    std::string quantize_images, quantize_out_weights, quantize_out_calib;
    quantize_cmd->add_option("--cfg", overrides.cfg, "network definition")->required();
    quantize_cmd->add_option("--weights", overrides.weights, "weight container")
        ->required();
    quantize_cmd->add_option("--images", quantize_images, "calibration image dir")
        ->required();
    quantize_cmd
        ->add_option("--out-weights", quantize_out_weights, "output weight container")
        ->required();
    quantize_cmd
        ->add_option("--out-calibration", quantize_out_calib, "output sidecar")
        ->required();

    auto* transplant_cmd =
        app.add_subcommand("transplant", "copy backbone weights between models");
    std::string transplant_cfg, transplant_source, transplant_dest, transplant_out;
    int transplant_cutoff = -1;
    transplant_cmd->add_option("--cfg", transplant_cfg, "network definition")
        ->required();
    transplant_cmd->add_option("--source", transplant_source, "source weights")
        ->required();
    transplant_cmd->add_option("--dest", transplant_dest, "destination weights")
        ->required();
    transplant_cmd->add_option("--cutoff", transplant_cutoff,
                               "first layer NOT copied (default: first route)");
    transplant_cmd->add_option("--out", transplant_out, "output weights")->required();

    auto* eval_cmd = app.add_subcommand("eval", "detection metrics over a dataset");
    std::string eval_dataset;
    eval_cmd->add_option("dataset", eval_dataset, "dataset directory")->required();
    add_model_flags(eval_cmd);
    add_threshold_flags(eval_cmd);
    eval_cmd->add_option_function<double>(
        "--match-iou", [&](double v) { overrides.match_iou = v; have_match = true; },
        "true-positive IoU threshold");
    eval_cmd->add_option_function<int>(
        "--jobs", [&](int v) { overrides.jobs = v; have_jobs = true; },
        "parallel image workers");
    eval_cmd->add_option_function<std::string>(
        "--out-dir",
        [&](const std::string& v) { overrides.out_dir = v; have_out_dir = true; },
        "output directory");

    auto* bench_cmd = app.add_subcommand("bench", "single-image inference timing");
    std::vector<std::string> bench_models;
    std::string bench_images;
    int bench_warmup = 5, bench_iters = 50;
    bench_cmd
        ->add_option("--model", bench_models, "model as name,cfg,weights[,calibration]")
        ->required();
    bench_cmd->add_option("--images", bench_images, "image directory")->required();
    bench_cmd->add_option("--warmup", bench_warmup, "warmup iterations");
    bench_cmd->add_option("--iters", bench_iters, "timed iterations");
    bench_cmd->add_option_function<std::string>(
        "--out-dir",
        [&](const std::string& v) { overrides.out_dir = v; have_out_dir = true; },
        "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // help exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        RunConfig config = load_run_config(config_path);
        // Flags override file values where given.
        if (!overrides.cfg.empty()) config.cfg = overrides.cfg;
        if (!overrides.weights.empty()) config.weights = overrides.weights;
        if (!overrides.calibration.empty()) config.calibration = overrides.calibration;
        if (!overrides.rig.empty()) config.rig = overrides.rig;
        if (have_out_dir) config.out_dir = overrides.out_dir;
        if (have_conf) config.conf_threshold = overrides.conf_threshold;
        if (have_nms) config.nms_iou = overrides.nms_iou;
        if (have_match) config.match_iou = overrides.match_iou;
        if (have_block) config.pose_block = overrides.pose_block;
        if (have_offset) config.pose_offset = overrides.pose_offset;
        if (have_jobs) config.jobs = overrides.jobs;
        if (have_debug) config.debug = overrides.debug;

        if (detect_cmd->parsed())
            return cmd_detect(config, detect_images);
        if (pose_cmd->parsed()) {
            if (pose_box.empty() && !pose_auto) {
                std::cerr << "error: pose needs --box or --auto\n";
                return kExitUsage;
            }
            return cmd_pose(config, pose_image, pose_box, pose_auto);
        }
        if (localize_cmd->parsed()) {
            if (localize_dem_cell > 0)
                config.dem_cell_m = localize_dem_cell;
            return cmd_localize(config, localize_image, localize_disparity,
                                localize_dem_out);
        }
        if (quantize_cmd->parsed())
            return cmd_quantize(config, quantize_images, quantize_out_weights,
                                quantize_out_calib);
        if (transplant_cmd->parsed())
            return cmd_transplant(transplant_cfg, transplant_source, transplant_dest,
                                  transplant_cutoff, transplant_out);
        if (eval_cmd->parsed())
            return cmd_eval(config, eval_dataset);
        if (bench_cmd->parsed())
            return cmd_bench(config, bench_models, bench_images, bench_warmup,
                             bench_iters);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const UnsupportedError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const PipelineError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitPipeline;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitPipeline;
    }
    return kExitUsage;
}
