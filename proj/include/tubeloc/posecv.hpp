#ifndef TUBELOC_POSECV_HPP
#define TUBELOC_POSECV_HPP

#include "tubeloc/imgcore.hpp"

#include <span>
#include <vector>

namespace tubeloc {

struct Vec2 {
    double x = 0;
    double y = 0;
};

struct PixelCoord {
    int x = 0;
    int y = 0;
    bool operator==(const PixelCoord&) const = default;
};

// Foreground/background raster aligned with its source crop.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> fg; // 0 or 1
    int offset_x = 0;             // crop origin in the full image
    int offset_y = 0;

    BinaryMask() = default;
    BinaryMask(int w, int h) : width(w), height(h),
        fg(static_cast<std::size_t>(w) * h, 0) {}
    std::uint8_t at(int x, int y) const {
        return fg[static_cast<std::size_t>(y) * width + x];
    }
    std::uint8_t& at(int x, int y) {
        return fg[static_cast<std::size_t>(y) * width + x];
    }
};

struct Moments {
    double m00 = 0, m10 = 0, m01 = 0;
    double mu20 = 0, mu11 = 0, mu02 = 0; // central second moments
    double cx() const { return m10 / m00; }
    double cy() const { return m01 / m00; }
};

// Closed 8-connected outer boundary of one foreground component, with the
// pixels it encloses (component plus interior holes) and their moments.
struct Contour {
    std::vector<PixelCoord> points;
    std::vector<PixelCoord> enclosed;
    Moments moments;
};

struct BlurResult {
    GrayImage image;
    bool too_small = false; // crop smaller than the kernel, returned unchanged
};

// 5x5 Gaussian, sigma 1.0, edge-replicated borders.
BlurResult gaussian_blur(const GrayImage& crop);

// |Gx| + |Gy| with the standard 3x3 kernels, clamped to [0,255],
// edge-replicated borders. Throws on images smaller than 3x3.
GrayImage sobel_magnitude(const GrayImage& image);

// CDF remap; a constant image maps to 0.
GrayImage equalize_hist(const GrayImage& image);

// Foreground where value > mean(block x block window, edge-replicated) + offset.
BinaryMask adaptive_mean_threshold(const GrayImage& image, int block = 15,
                                   double offset = 5);

// blur -> sobel -> equalize -> adaptive threshold.
BinaryMask binarize_tube_region(const GrayImage& crop, int block = 15,
                                double offset = 5);

std::vector<Contour> find_contours(const BinaryMask& mask);

bool point_in_polygon(const std::vector<PixelCoord>& polygon, Vec2 point);

struct ContourSelection {
    std::size_t index = 0;
    bool degraded = false; // no contour enclosed the centroid, nearest used
};

// Contours enclosing the detection centroid win; ties broken by moment
// centroid distance. Falls back to the globally nearest moment centroid.
ContourSelection select_tube_contour(const std::vector<Contour>& contours,
                                     Vec2 detection_centroid);

struct LineFit {
    double dx = 1;          // unit direction, dx >= 0 (tie: dy >= 0)
    double dy = 0;
    Vec2 point;             // anchor: the detection centroid
    double anisotropy = 0;  // major/minor eigenvalue ratio
    bool low_anisotropy = false;
};

// Principal axis of the point cloud (total least squares), anchored at the
// detection centroid.
LineFit fit_line_least_squares(std::span<const PixelCoord> points, Vec2 anchor);

struct TubePoseImage {
    Vec2 endpoints[2]; // full-image pixel coordinates
    Vec2 centroid;
    double orientation_deg = 0; // [0, 180)
    bool degraded = false;
};

// Intersect the anchored line with the contour; the extreme intersections
// along the line direction become the endpoints. Coordinates shifted into the
// full-image frame by the crop offset.
TubePoseImage endpoints_from_contour(const Contour& contour, const LineFit& line,
                                     int offset_x = 0, int offset_y = 0);

struct PoseParams {
    int block = 15;
    double offset = 5;
};

// Intermediate stage images for --debug dumps.
struct PoseDebug {
    GrayImage blurred;
    GrayImage sobel;
    GrayImage equalized;
    BinaryMask mask;
};

// Full pipeline on one detection crop. The centroid is in crop coordinates;
// returned coordinates are in the full-image frame via the crop offset.
TubePoseImage estimate_pose_2d(const GrayImage& crop, Vec2 detection_centroid,
                               const PoseParams& params = {}, int offset_x = 0,
                               int offset_y = 0, PoseDebug* debug = nullptr);

double fold_orientation_deg(double degrees); // into [0, 180)

} // namespace tubeloc

#endif
