#ifndef TUBELOC_IMGCORE_HPP
#define TUBELOC_IMGCORE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace tubeloc {

// Single-channel 8-bit raster, row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // size = width*height

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t at(int x, int y) const {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
    std::uint8_t& at(int x, int y) {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
    bool empty() const { return width <= 0 || height <= 0; }

    bool operator==(const GrayImage&) const = default;
};

// Row-major 32-bit disparity raster (pixels). Non-positive values mark
// invalid measurements.
struct DisparityImage {
    int width = 0;
    int height = 0;
    std::vector<float> values;

    static constexpr float kInvalid = 0.0f;

    DisparityImage() = default;
    DisparityImage(int w, int h, float fill = kInvalid)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    float at(int x, int y) const {
        return values[static_cast<std::size_t>(y) * width + x];
    }
    float& at(int x, int y) {
        return values[static_cast<std::size_t>(y) * width + x];
    }
    bool valid_at(int x, int y) const { return at(x, y) > 0.0f; }
};

// Axis-aligned box, top-left corner + extent, original-image pixel coords.
struct BoundingBox {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    double right() const { return x + w; }
    double bottom() const { return y + h; }
    double center_x() const { return x + w / 2.0; }
    double center_y() const { return y + h / 2.0; }
    double area() const { return w * h; }
};

double box_iou(const BoundingBox& a, const BoundingBox& b);

// Aspect-preserving rescale-with-zero-padding geometry. pad_x/pad_y are the
// left/top bands; the right/bottom bands are whatever remains.
struct LetterboxTransform {
    double scale = 1.0;
    int pad_x = 0;
    int pad_y = 0;
    int content_w = 0;
    int content_h = 0;
    int source_w = 0;
    int source_h = 0;
    int target_w = 0;
    int target_h = 0;
};

struct LetterboxResult {
    GrayImage image;
    LetterboxTransform transform;
};

struct CropResult {
    GrayImage image;
    int offset_x = 0; // position of crop (0,0) in the full image
    int offset_y = 0;
};

struct PfmLoadResult {
    DisparityImage disparity;
    std::size_t nonfinite_replaced = 0;
};

// Binary PGM (P5, maxval <= 255), bit-exact payload.
GrayImage load_pgm(const std::filesystem::path& path);
void save_pgm(const GrayImage& image, const std::filesystem::path& path);

// Grayscale PFM ("Pf"); scale-line sign encodes endianness, rows are
// bottom-up on disk and flipped to top-down here. Non-finite values are
// replaced by the invalid marker and counted.
PfmLoadResult load_pfm(const std::filesystem::path& path);
void save_pfm(const DisparityImage& disparity, const std::filesystem::path& path);

// Bilinear min-ratio rescale into a target x target frame, zero bands on the
// short axis, content centered.
LetterboxResult letterbox(const GrayImage& image, int target = 416);

// Map a box from letterboxed network coordinates back into the source image.
// Throws PipelineError if the box lies entirely inside the padding bands.
BoundingBox unletterbox_box(const BoundingBox& network_box,
                            const LetterboxTransform& transform);

// Intersection of box and image, with the offset of the crop recorded so
// crop-local coordinates can be mapped back. Throws on empty intersection.
CropResult crop(const GrayImage& image, const BoundingBox& box);

} // namespace tubeloc

#endif
