#include "tubeloc/imgcore.hpp"
#include "tubeloc/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tubeloc {

double box_iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0)
        return 0.0;
    return inter / uni;
}

namespace {

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open file: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    return bytes;
}

// Skips whitespace and '#' comments, then reads one unsigned decimal token.
// The offset is advanced past the token; parse failures report it.
long next_pnm_int(const std::vector<char>& bytes, std::size_t& offset,
                  const std::filesystem::path& path) {
    while (offset < bytes.size()) {
        char c = bytes[offset];
        if (c == '#') {
            while (offset < bytes.size() && bytes[offset] != '\n')
                ++offset;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++offset;
        } else {
            break;
        }
    }
    if (offset >= bytes.size())
        throw ParseError(path.string() + ": truncated header at byte offset " +
                         std::to_string(offset));
    if (!std::isdigit(static_cast<unsigned char>(bytes[offset])))
        throw ParseError(path.string() + ": expected integer at byte offset " +
                         std::to_string(offset));
    long value = 0;
    while (offset < bytes.size() &&
           std::isdigit(static_cast<unsigned char>(bytes[offset]))) {
        value = value * 10 + (bytes[offset] - '0');
        if (value > 1'000'000'000L)
            throw ParseError(path.string() + ": integer overflow at byte offset " +
                             std::to_string(offset));
        ++offset;
    }
    return value;
}

float le_bytes_to_float(const char* p, bool file_little_endian) {
    std::uint32_t u = 0;
    if (file_little_endian) {
        u = (static_cast<std::uint32_t>(static_cast<unsigned char>(p[0]))) |
            (static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 8) |
            (static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 16) |
            (static_cast<std::uint32_t>(static_cast<unsigned char>(p[3])) << 24);
    } else {
        u = (static_cast<std::uint32_t>(static_cast<unsigned char>(p[3]))) |
            (static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 8) |
            (static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 16) |
            (static_cast<std::uint32_t>(static_cast<unsigned char>(p[0])) << 24);
    }
    return std::bit_cast<float>(u);
}

void float_to_le_bytes(float f, char* p) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(f);
    p[0] = static_cast<char>(u & 0xff);
    p[1] = static_cast<char>((u >> 8) & 0xff);
    p[2] = static_cast<char>((u >> 16) & 0xff);
    p[3] = static_cast<char>((u >> 24) & 0xff);
}

} // namespace

GrayImage load_pgm(const std::filesystem::path& path) {
    const std::vector<char> bytes = read_file_bytes(path);
    if (bytes.size() < 2)
        throw ParseError(path.string() + ": file too short for a PNM magic");
    if (bytes[0] != 'P' || bytes[1] != '5') {
        std::string magic(bytes.begin(), bytes.begin() + 2);
        if (bytes[0] == 'P')
            throw UnsupportedError(path.string() + ": unsupported PNM variant \"" +
                                   magic + "\" (only binary P5 is accepted)");
        throw ParseError(path.string() + ": bad magic at byte offset 0");
    }
    std::size_t offset = 2;
    const long w = next_pnm_int(bytes, offset, path);
    const long h = next_pnm_int(bytes, offset, path);
    const long maxval = next_pnm_int(bytes, offset, path);
    if (w < 1 || h < 1)
        throw ParseError(path.string() + ": non-positive dimensions " +
                         std::to_string(w) + "x" + std::to_string(h));
    if (maxval > 255)
        throw UnsupportedError(path.string() + ": maxval " + std::to_string(maxval) +
                               " exceeds 255 (16-bit PGM not supported)");
    if (maxval < 1)
        throw ParseError(path.string() + ": invalid maxval " + std::to_string(maxval));
    // Single whitespace byte separates header from payload.
    if (offset >= bytes.size() ||
        !std::isspace(static_cast<unsigned char>(bytes[offset])))
        throw ParseError(path.string() + ": missing header terminator at byte offset " +
                         std::to_string(offset));
    ++offset;
    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() - offset < need)
        throw ParseError(path.string() + ": payload truncated, need " +
                         std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - offset));
    GrayImage image(static_cast<int>(w), static_cast<int>(h));
    std::memcpy(image.pixels.data(), bytes.data() + offset, need);
    return image;
}

void save_pgm(const GrayImage& image, const std::filesystem::path& path) {
    if (image.empty())
        throw Error("save_pgm: refusing to write an empty image");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("save_pgm: cannot open for writing: " + path.string());
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out)
        throw Error("save_pgm: write failed: " + path.string());
}

PfmLoadResult load_pfm(const std::filesystem::path& path) {
    const std::vector<char> bytes = read_file_bytes(path);
    if (bytes.size() < 2)
        throw ParseError(path.string() + ": file too short for a PFM magic");
    if (bytes[0] == 'P' && bytes[1] == 'F')
        throw UnsupportedError(path.string() +
                               ": color \"PF\" floatmap not supported, expected grayscale \"Pf\"");
    if (bytes[0] != 'P' || bytes[1] != 'f')
        throw ParseError(path.string() + ": bad magic at byte offset 0");

    // Header: magic line, "w h" line, scale line; tokens separated by
    // whitespace. Reuse the PNM tokenizer for the dims, then read the scale.
    std::size_t offset = 2;
    const long w = next_pnm_int(bytes, offset, path);
    const long h = next_pnm_int(bytes, offset, path);
    if (w < 1 || h < 1)
        throw ParseError(path.string() + ": non-positive dimensions");
    while (offset < bytes.size() &&
           std::isspace(static_cast<unsigned char>(bytes[offset])))
        ++offset;
    std::size_t scale_end = offset;
    while (scale_end < bytes.size() &&
           !std::isspace(static_cast<unsigned char>(bytes[scale_end])))
        ++scale_end;
    if (scale_end == offset || scale_end >= bytes.size())
        throw ParseError(path.string() + ": missing scale line at byte offset " +
                         std::to_string(offset));
    double scale = 0.0;
    try {
        scale = std::stod(std::string(bytes.begin() + static_cast<long>(offset),
                                      bytes.begin() + static_cast<long>(scale_end)));
    } catch (const std::exception&) {
        throw ParseError(path.string() + ": unparsable scale at byte offset " +
                         std::to_string(offset));
    }
    if (scale == 0.0)
        throw ParseError(path.string() + ": zero scale is invalid");
    const bool file_little_endian = scale < 0.0;
    offset = scale_end + 1; // single whitespace terminator

    const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() - offset < count * 4)
        throw ParseError(path.string() + ": payload truncated, need " +
                         std::to_string(count * 4) + " bytes, have " +
                         std::to_string(bytes.size() - offset));

    PfmLoadResult result;
    result.disparity = DisparityImage(static_cast<int>(w), static_cast<int>(h));
    // PFM stores rows bottom-up; flip to top-down.
    for (long row = 0; row < h; ++row) {
        const long src_row = h - 1 - row;
        for (long col = 0; col < w; ++col) {
            const char* p = bytes.data() + offset +
                            (static_cast<std::size_t>(src_row) * w + col) * 4;
            float v = le_bytes_to_float(p, file_little_endian);
            if (!std::isfinite(v)) {
                v = DisparityImage::kInvalid;
                ++result.nonfinite_replaced;
            }
            result.disparity.at(static_cast<int>(col), static_cast<int>(row)) = v;
        }
    }
    return result;
}

void save_pfm(const DisparityImage& disparity, const std::filesystem::path& path) {
    if (disparity.width <= 0 || disparity.height <= 0)
        throw Error("save_pfm: refusing to write an empty raster");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("save_pfm: cannot open for writing: " + path.string());
    out << "Pf\n" << disparity.width << " " << disparity.height << "\n-1.0\n";
    std::vector<char> row_bytes(static_cast<std::size_t>(disparity.width) * 4);
    for (int row = disparity.height - 1; row >= 0; --row) {
        for (int col = 0; col < disparity.width; ++col)
            float_to_le_bytes(disparity.at(col, row), row_bytes.data() + col * 4);
        out.write(row_bytes.data(), static_cast<std::streamsize>(row_bytes.size()));
    }
    if (!out)
        throw Error("save_pfm: write failed: " + path.string());
}

namespace {

// Bilinear sample with half-pixel centers; coordinates clamped to the image.
double sample_bilinear(const GrayImage& image, double sx, double sy) {
    sx = std::clamp(sx, 0.0, static_cast<double>(image.width - 1));
    sy = std::clamp(sy, 0.0, static_cast<double>(image.height - 1));
    const int x0 = static_cast<int>(sx);
    const int y0 = static_cast<int>(sy);
    const int x1 = std::min(x0 + 1, image.width - 1);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double fx = sx - x0;
    const double fy = sy - y0;
    const double top = image.at(x0, y0) * (1.0 - fx) + image.at(x1, y0) * fx;
    const double bot = image.at(x0, y1) * (1.0 - fx) + image.at(x1, y1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

} // namespace

LetterboxResult letterbox(const GrayImage& image, int target) {
    if (image.empty())
        throw Error("letterbox: empty input image");
    if (target < 1)
        throw Error("letterbox: target must be positive");

    LetterboxTransform t;
    t.source_w = image.width;
    t.source_h = image.height;
    t.target_w = target;
    t.target_h = target;
    t.scale = std::min(static_cast<double>(target) / image.width,
                       static_cast<double>(target) / image.height);
    t.content_w = std::clamp(static_cast<int>(std::lround(image.width * t.scale)), 1, target);
    t.content_h = std::clamp(static_cast<int>(std::lround(image.height * t.scale)), 1, target);
    t.pad_x = (target - t.content_w) / 2;
    t.pad_y = (target - t.content_h) / 2;

    LetterboxResult result;
    result.transform = t;
    result.image = GrayImage(target, target, 0);
    for (int y = 0; y < t.content_h; ++y) {
        const double sy = (y + 0.5) / t.scale - 0.5;
        for (int x = 0; x < t.content_w; ++x) {
            const double sx = (x + 0.5) / t.scale - 0.5;
            const double v = sample_bilinear(image, sx, sy);
            result.image.at(t.pad_x + x, t.pad_y + y) =
                static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
    }
    return result;
}

BoundingBox unletterbox_box(const BoundingBox& network_box,
                            const LetterboxTransform& t) {
    BoundingBox b;
    b.x = (network_box.x - t.pad_x) / t.scale;
    b.y = (network_box.y - t.pad_y) / t.scale;
    b.w = network_box.w / t.scale;
    b.h = network_box.h / t.scale;

    const double x0 = std::clamp(b.x, 0.0, static_cast<double>(t.source_w));
    const double y0 = std::clamp(b.y, 0.0, static_cast<double>(t.source_h));
    const double x1 = std::clamp(b.right(), 0.0, static_cast<double>(t.source_w));
    const double y1 = std::clamp(b.bottom(), 0.0, static_cast<double>(t.source_h));
    if (x1 - x0 <= 0.0 || y1 - y0 <= 0.0)
        throw PipelineError("unletterbox",
                            "box lies entirely inside the padding region");
    return BoundingBox{x0, y0, x1 - x0, y1 - y0};
}

CropResult crop(const GrayImage& image, const BoundingBox& box) {
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x)));
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y)));
    const int x1 = std::min(image.width, static_cast<int>(std::ceil(box.right())));
    const int y1 = std::min(image.height, static_cast<int>(std::ceil(box.bottom())));
    if (x1 <= x0 || y1 <= y0)
        throw PipelineError("crop", "box does not intersect the image");

    CropResult result;
    result.offset_x = x0;
    result.offset_y = y0;
    result.image = GrayImage(x1 - x0, y1 - y0);
    for (int y = y0; y < y1; ++y)
        std::memcpy(result.image.pixels.data() +
                        static_cast<std::size_t>(y - y0) * result.image.width,
                    image.pixels.data() + static_cast<std::size_t>(y) * image.width + x0,
                    static_cast<std::size_t>(x1 - x0));
    return result;
}

} // namespace tubeloc
