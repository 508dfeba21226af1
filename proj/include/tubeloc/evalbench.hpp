#ifndef TUBELOC_EVALBENCH_HPP
#define TUBELOC_EVALBENCH_HPP

#include "tubeloc/imgcore.hpp"
#include "tubeloc/nnexec.hpp"
#include "tubeloc/posecv.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tubeloc {

// One labeled instance, YOLO-normalized box, optionally extended with the
// ground-truth orientation and centroid for pose evaluation.
struct GroundTruthLabel {
    std::string image_id; // filename stem
    int class_id = 0;
    double cx = 0, cy = 0, w = 0, h = 0; // fractions of image dims
    std::optional<double> orientation_deg;
    std::optional<Vec2> centroid_px;

    BoundingBox to_pixels(int image_w, int image_h) const {
        return BoundingBox{(cx - w / 2.0) * image_w, (cy - h / 2.0) * image_h,
                           w * image_w, h * image_h};
    }
};

// Parse one label file ("class cx cy w h" per line, optional 6th column:
// orientation in degrees).
std::vector<GroundTruthLabel> parse_label_file(const std::filesystem::path& path,
                                               const std::string& image_id);

struct PoseGroundTruth {
    double orientation_deg = 0;
    Vec2 centroid;
};

// Dataset layout: images/ (PGM) + labels/ (same stem .txt) + optional
// disparity/ (PFM) + optional poses/ (stem.txt: orientation_deg cx cy).
struct Dataset {
    std::filesystem::path root;
    std::vector<std::string> stems; // sorted
    std::map<std::string, std::vector<GroundTruthLabel>> labels;
    std::map<std::string, PoseGroundTruth> poses;

    std::filesystem::path image_path(const std::string& stem) const;
    std::filesystem::path disparity_path(const std::string& stem) const;
    std::size_t total_instances() const;
};

Dataset load_dataset(const std::filesystem::path& dir);

struct MatchRecord {
    int detection_index = -1;
    int label_index = -1;
    double iou = 0;
};

struct DetectionMetrics {
    long tp = 0;
    long fn = 0;
    long fp = 0;
    std::vector<MatchRecord> matches;

    void accumulate(const DetectionMetrics& other);
};

// Greedy confidence-ordered matching at the given IoU threshold; detections
// must already be confidence-thresholded.
DetectionMetrics match_detections(std::span<const Detection> detections,
                                  std::span<const BoundingBox> labels,
                                  double iou_threshold = 0.5);

// min(|a-b|, 180-|a-b|), both inputs in [0,180).
double orientation_error_deg(double est_deg, double gt_deg);

struct OrientationStats {
    std::vector<double> errors;
    double mean = 0;
    double stddev_pop = 0;
    double stddev_sample = 0;
    std::array<long, 18> histogram{}; // 5-degree bins over [0, 90]
    double fraction_under_5deg = 0;
};

OrientationStats aggregate_orientation(std::span<const double> errors);

struct BenchRow {
    std::string model_name;
    std::string exec_path; // "float" or "int8"
    double mean_ms = 0;
    double std_ms = 0;
    int iterations = 0;
    int warmup = 0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
};

// Wall-clock per single-image forward + decode on the monotonic clock,
// warmup excluded, strictly single-threaded.
BenchRow bench_inference(const Detector& detector, std::span<const GrayImage> images,
                         const std::string& model_name, int warmup = 5, int iters = 50);

struct EvalImageRecord {
    std::string image_id;
    long tp = 0, fn = 0, fp = 0;
    std::vector<Detection> detections;
    std::optional<double> orientation_error;
    std::string error; // empty when the image evaluated cleanly
};

struct EvalResult {
    DetectionMetrics metrics;
    std::vector<EvalImageRecord> images;
    // Present when the dataset ships pose ground truth: the pose pipeline is
    // run from each given centroid and its orientation errors aggregated.
    std::optional<OrientationStats> orientation;
};

EvalResult run_eval(const Detector& detector, const Dataset& dataset,
                    double conf_threshold = 0.75, double match_iou = 0.5,
                    int jobs = 1, const PoseParams& pose_params = {});

// Aligned text table, counts per row (true positives / false negatives /
// false positives).
std::string format_metrics_table(const std::string& title,
                                 const DetectionMetrics& metrics);
std::string format_bench_table(const BenchReport& report);

} // namespace tubeloc

#endif
