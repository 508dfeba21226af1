#include "tubeloc/evalbench.hpp"
#include "tubeloc/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace tubeloc {

std::vector<GroundTruthLabel> parse_label_file(const std::filesystem::path& path,
                                               const std::string& image_id) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("labels: cannot open " + path.string());
    std::vector<GroundTruthLabel> labels;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        std::istringstream ss(line);
        GroundTruthLabel label;
        label.image_id = image_id;
        if (!(ss >> label.class_id >> label.cx >> label.cy >> label.w >> label.h))
            throw ParseError(path.string() + " line " + std::to_string(line_no) +
                             ": expected \"class cx cy w h\"");
        double orientation;
        if (ss >> orientation)
            label.orientation_deg = orientation;
        if (label.cx < 0 || label.cx > 1 || label.cy < 0 || label.cy > 1 ||
            label.w <= 0 || label.w > 1 || label.h <= 0 || label.h > 1)
            throw ParseError(path.string() + " line " + std::to_string(line_no) +
                             ": normalized coordinates out of [0,1]");
        labels.push_back(label);
    }
    return labels;
}

std::filesystem::path Dataset::image_path(const std::string& stem) const {
    return root / "images" / (stem + ".pgm");
}

std::filesystem::path Dataset::disparity_path(const std::string& stem) const {
    return root / "disparity" / (stem + ".pfm");
}

std::size_t Dataset::total_instances() const {
    std::size_t n = 0;
    for (const auto& [stem, list] : labels)
        n += list.size();
    return n;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset dataset;
    dataset.root = dir;
    const std::filesystem::path images_dir = dir / "images";
    if (!std::filesystem::is_directory(images_dir))
        throw ParseError("dataset: missing images/ under " + dir.string());
    for (const auto& entry : std::filesystem::directory_iterator(images_dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".pgm")
            continue;
        dataset.stems.push_back(entry.path().stem().string());
    }
    std::sort(dataset.stems.begin(), dataset.stems.end());
    if (dataset.stems.empty())
        throw ParseError("dataset: no .pgm images under " + images_dir.string());

    const std::filesystem::path labels_dir = dir / "labels";
    const std::filesystem::path poses_dir = dir / "poses";
    for (const std::string& stem : dataset.stems) {
        std::vector<GroundTruthLabel> labels;
        const std::filesystem::path label_path = labels_dir / (stem + ".txt");
        if (std::filesystem::exists(label_path))
            labels = parse_label_file(label_path, stem);
        dataset.labels[stem] = std::move(labels);
        // Optional pose ground truth: "orientation_deg cx cy".
        const std::filesystem::path pose_path = poses_dir / (stem + ".txt");
        if (std::filesystem::exists(pose_path)) {
            std::ifstream pin(pose_path);
            PoseGroundTruth gt;
            if (pin >> gt.orientation_deg >> gt.centroid.x >> gt.centroid.y)
                dataset.poses[stem] = gt;
            else
                throw ParseError(pose_path.string() +
                                 ": expected \"orientation_deg cx cy\"");
        }
    }
    return dataset;
}

void DetectionMetrics::accumulate(const DetectionMetrics& other) {
    tp += other.tp;
    fn += other.fn;
    fp += other.fp;
    matches.insert(matches.end(), other.matches.begin(), other.matches.end());
}

DetectionMetrics match_detections(std::span<const Detection> detections,
                                  std::span<const BoundingBox> labels,
                                  double iou_threshold) {
    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detections[a].confidence > detections[b].confidence;
    });

    DetectionMetrics metrics;
    std::vector<bool> label_taken(labels.size(), false);
    for (std::size_t idx : order) {
        double best_iou = 0;
        int best_label = -1;
        for (std::size_t l = 0; l < labels.size(); ++l) {
            if (label_taken[l])
                continue;
            const double iou = box_iou(detections[idx].box, labels[l]);
            if (iou > best_iou) {
                best_iou = iou;
                best_label = static_cast<int>(l);
            }
        }
        if (best_label >= 0 && best_iou >= iou_threshold) {
            label_taken[best_label] = true;
            ++metrics.tp;
            metrics.matches.push_back(
                {static_cast<int>(idx), best_label, best_iou});
        } else {
            ++metrics.fp;
            metrics.matches.push_back({static_cast<int>(idx), -1, best_iou});
        }
    }
    metrics.fn = static_cast<long>(labels.size()) - metrics.tp;
    return metrics;
}

double orientation_error_deg(double est_deg, double gt_deg) {
    const double diff = std::fabs(est_deg - gt_deg);
    return std::min(diff, 180.0 - diff);
}

OrientationStats aggregate_orientation(std::span<const double> errors) {
    if (errors.empty())
        throw Error("aggregate_orientation: empty error set");
    OrientationStats stats;
    stats.errors.assign(errors.begin(), errors.end());
    double sum = 0;
    for (double e : errors)
        sum += e;
    stats.mean = sum / static_cast<double>(errors.size());
    double var = 0;
    for (double e : errors)
        var += (e - stats.mean) * (e - stats.mean);
    stats.stddev_pop = std::sqrt(var / static_cast<double>(errors.size()));
    stats.stddev_sample = errors.size() > 1
                              ? std::sqrt(var / static_cast<double>(errors.size() - 1))
                              : 0.0;
    long under5 = 0;
    for (double e : errors) {
        const int bin = std::min(static_cast<int>(e / 5.0), 17);
        ++stats.histogram[bin];
        if (e < 5.0)
            ++under5;
    }
    stats.fraction_under_5deg =
        static_cast<double>(under5) / static_cast<double>(errors.size());
    return stats;
}

BenchRow bench_inference(const Detector& detector, std::span<const GrayImage> images,
                         const std::string& model_name, int warmup, int iters) {
    if (images.empty())
        throw Error("bench_inference: no images");
    if (iters < 1)
        throw Error("bench_inference: iters must be >= 1");

    using clock = std::chrono::steady_clock;
    auto run_one = [&](const GrayImage& image) {
        const auto start = clock::now();
        volatile std::size_t sink = detector.detect(image).size();
        (void)sink;
        const auto stop = clock::now();
        return std::chrono::duration<double, std::milli>(stop - start).count();
    };

    for (int i = 0; i < warmup; ++i)
        run_one(images[i % images.size()]);

    std::vector<double> samples;
    samples.reserve(iters);
    for (int i = 0; i < iters; ++i)
        samples.push_back(run_one(images[i % images.size()]));

    BenchRow row;
    row.model_name = model_name;
    row.exec_path = detector.quantized() ? "int8" : "float";
    row.iterations = iters;
    row.warmup = warmup;
    row.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / iters;
    double var = 0;
    for (double s : samples)
        var += (s - row.mean_ms) * (s - row.mean_ms);
    row.std_ms = std::sqrt(var / iters);
    return row;
}

EvalResult run_eval(const Detector& detector, const Dataset& dataset,
                    double conf_threshold, double match_iou, int jobs,
                    const PoseParams& pose_params) {
    EvalResult result;
    result.images.resize(dataset.stems.size());

    auto eval_one = [&](std::size_t index) {
        const std::string& stem = dataset.stems[index];
        EvalImageRecord& record = result.images[index];
        record.image_id = stem;
        try {
            const GrayImage image = load_pgm(dataset.image_path(stem));
            record.detections = detector.detect(image, conf_threshold);
            std::vector<BoundingBox> boxes;
            auto it = dataset.labels.find(stem);
            if (it != dataset.labels.end())
                for (const GroundTruthLabel& label : it->second)
                    boxes.push_back(label.to_pixels(image.width, image.height));
            const DetectionMetrics m =
                match_detections(record.detections, boxes, match_iou);
            record.tp = m.tp;
            record.fn = m.fn;
            record.fp = m.fp;

            // Pose protocol: when ground truth ships an orientation and
            // centroid, the pose pipeline runs from that centroid (such
            // frames are pre-cropped to the tube area).
            auto pose_it = dataset.poses.find(stem);
            if (pose_it != dataset.poses.end()) {
                const PoseGroundTruth& gt = pose_it->second;
                const TubePoseImage pose =
                    estimate_pose_2d(image, gt.centroid, pose_params);
                record.orientation_error =
                    orientation_error_deg(pose.orientation_deg, gt.orientation_deg);
            }
        } catch (const Error& e) {
            record.error = e.what();
            auto it = dataset.labels.find(stem);
            record.fn = it != dataset.labels.end()
                            ? static_cast<long>(it->second.size())
                            : 0;
        }
    };

    if (jobs <= 1) {
        for (std::size_t i = 0; i < dataset.stems.size(); ++i)
            eval_one(i);
    } else {
        std::atomic<std::size_t> cursor{0};
        std::vector<std::thread> workers;
        const int n = std::min<int>(jobs, static_cast<int>(dataset.stems.size()));
        for (int t = 0; t < n; ++t)
            workers.emplace_back([&] {
                for (std::size_t i = cursor.fetch_add(1); i < dataset.stems.size();
                     i = cursor.fetch_add(1))
                    eval_one(i);
            });
        for (std::thread& worker : workers)
            worker.join();
    }

    std::vector<double> orientation_errors;
    for (const EvalImageRecord& record : result.images) {
        result.metrics.tp += record.tp;
        result.metrics.fn += record.fn;
        result.metrics.fp += record.fp;
        if (record.orientation_error)
            orientation_errors.push_back(*record.orientation_error);
    }
    if (!orientation_errors.empty())
        result.orientation = aggregate_orientation(orientation_errors);
    return result;
}

std::string format_metrics_table(const std::string& title,
                                 const DetectionMetrics& metrics) {
    char buf[96];
    std::string out = title + "\n";
    std::snprintf(buf, sizeof buf, "%-17s %8ld\n", "True Positives", metrics.tp);
    out += buf;
    std::snprintf(buf, sizeof buf, "%-17s %8ld\n", "False Negatives", metrics.fn);
    out += buf;
    std::snprintf(buf, sizeof buf, "%-17s %8ld\n", "False Positives", metrics.fp);
    out += buf;
    return out;
}

std::string format_bench_table(const BenchReport& report) {
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-24s %-6s %12s %10s %6s %7s\n", "Model", "Path",
                  "Mean (ms)", "Std (ms)", "Iters", "Warmup");
    out += buf;
    for (const BenchRow& row : report.rows) {
        std::snprintf(buf, sizeof buf, "%-24s %-6s %12.2f %10.2f %6d %7d\n",
                      row.model_name.c_str(), row.exec_path.c_str(), row.mean_ms,
                      row.std_ms, row.iterations, row.warmup);
        out += buf;
    }
    if (report.rows.size() == 2 && report.rows[1].mean_ms > 0) {
        std::snprintf(buf, sizeof buf, "ratio %s/%s = %.2fx\n",
                      report.rows[1].model_name.c_str(),
                      report.rows[0].model_name.c_str(),
                      report.rows[1].mean_ms / report.rows[0].mean_ms);
        out += buf;
    }
    return out;
}

} // namespace tubeloc
