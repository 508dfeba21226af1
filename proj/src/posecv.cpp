#include "tubeloc/posecv.hpp"
#include "tubeloc/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

namespace tubeloc {

double fold_orientation_deg(double degrees) {
    double folded = std::fmod(degrees, 180.0);
    if (folded < 0)
        folded += 180.0;
    return folded == 180.0 ? 0.0 : folded;
}

namespace {

int clamp_coord(int v, int lo, int hi) { return std::clamp(v, lo, hi); }

} // namespace

BlurResult gaussian_blur(const GrayImage& crop) {
    constexpr int kSize = 5;
    constexpr int kRadius = 2;
    constexpr double kSigma = 1.0;

    BlurResult result;
    if (crop.width < kSize || crop.height < kSize) {
        result.image = crop;
        result.too_small = true;
        return result;
    }

    std::array<double, kSize> kernel{};
    double sum = 0;
    for (int i = 0; i < kSize; ++i) {
        const double d = i - kRadius;
        kernel[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        sum += kernel[i];
    }
    for (double& k : kernel)
        k /= sum;

    // Separable passes, float intermediate, edge-replicated borders.
    std::vector<double> horizontal(crop.pixels.size());
    for (int y = 0; y < crop.height; ++y) {
        for (int x = 0; x < crop.width; ++x) {
            double acc = 0;
            for (int i = -kRadius; i <= kRadius; ++i)
                acc += kernel[i + kRadius] *
                       crop.at(clamp_coord(x + i, 0, crop.width - 1), y);
            horizontal[static_cast<std::size_t>(y) * crop.width + x] = acc;
        }
    }
    result.image = GrayImage(crop.width, crop.height);
    for (int y = 0; y < crop.height; ++y) {
        for (int x = 0; x < crop.width; ++x) {
            double acc = 0;
            for (int i = -kRadius; i <= kRadius; ++i)
                acc += kernel[i + kRadius] *
                       horizontal[static_cast<std::size_t>(
                                      clamp_coord(y + i, 0, crop.height - 1)) *
                                      crop.width +
                                  x];
            result.image.at(x, y) =
                static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
        }
    }
    return result;
}

GrayImage sobel_magnitude(const GrayImage& image) {
    if (image.width < 3 || image.height < 3)
        throw Error("sobel: image smaller than 3x3");
    static constexpr int kGx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static constexpr int kGy[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    GrayImage out(image.width, image.height);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            int gx = 0, gy = 0;
            for (int ky = -1; ky <= 1; ++ky) {
                for (int kx = -1; kx <= 1; ++kx) {
                    const int v = image.at(clamp_coord(x + kx, 0, image.width - 1),
                                           clamp_coord(y + ky, 0, image.height - 1));
                    gx += kGx[ky + 1][kx + 1] * v;
                    gy += kGy[ky + 1][kx + 1] * v;
                }
            }
            out.at(x, y) = static_cast<std::uint8_t>(
                std::min(std::abs(gx) + std::abs(gy), 255));
        }
    }
    return out;
}

GrayImage equalize_hist(const GrayImage& image) {
    if (image.empty())
        throw Error("equalize_hist: empty image");
    std::array<long, 256> histogram{};
    for (std::uint8_t v : image.pixels)
        ++histogram[v];
    std::array<long, 256> cdf{};
    long running = 0;
    long cdf_min = 0;
    for (int v = 0; v < 256; ++v) {
        running += histogram[v];
        cdf[v] = running;
        if (cdf_min == 0 && histogram[v] > 0)
            cdf_min = cdf[v];
    }
    const long total = static_cast<long>(image.pixels.size());
    std::array<std::uint8_t, 256> lut{};
    if (total == cdf_min) {
        // Constant image: degenerate CDF maps to 0.
        lut.fill(0);
    } else {
        for (int v = 0; v < 256; ++v) {
            const double remapped =
                255.0 * static_cast<double>(cdf[v] - cdf_min) /
                static_cast<double>(total - cdf_min);
            lut[v] = static_cast<std::uint8_t>(std::clamp(std::lround(remapped), 0L, 255L));
        }
    }
    GrayImage out(image.width, image.height);
    for (std::size_t i = 0; i < image.pixels.size(); ++i)
        out.pixels[i] = lut[image.pixels[i]];
    return out;
}

BinaryMask adaptive_mean_threshold(const GrayImage& image, int block, double offset) {
    if (block < 3 || block % 2 == 0)
        throw Error("adaptive_mean_threshold: block must be odd and >= 3, got " +
                    std::to_string(block));
    const int r = block / 2;
    const int pw = image.width + 2 * r;
    const int ph = image.height + 2 * r;

    // Edge-replicated integral image; (pw+1) x (ph+1), zero first row/col.
    std::vector<std::int64_t> integral(static_cast<std::size_t>(pw + 1) * (ph + 1), 0);
    for (int y = 0; y < ph; ++y) {
        std::int64_t row = 0;
        for (int x = 0; x < pw; ++x) {
            row += image.at(clamp_coord(x - r, 0, image.width - 1),
                            clamp_coord(y - r, 0, image.height - 1));
            integral[static_cast<std::size_t>(y + 1) * (pw + 1) + (x + 1)] =
                integral[static_cast<std::size_t>(y) * (pw + 1) + (x + 1)] + row;
        }
    }
    auto window_sum = [&](int x, int y) {
        // Window of size block x block centered at image pixel (x,y), i.e.
        // padded coords [x, x+block) x [y, y+block).
        const std::size_t stride = pw + 1;
        return integral[static_cast<std::size_t>(y + block) * stride + (x + block)] -
               integral[static_cast<std::size_t>(y) * stride + (x + block)] -
               integral[static_cast<std::size_t>(y + block) * stride + x] +
               integral[static_cast<std::size_t>(y) * stride + x];
    };

    BinaryMask mask(image.width, image.height);
    const double area = static_cast<double>(block) * block;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            mask.at(x, y) =
                image.at(x, y) > static_cast<double>(window_sum(x, y)) / area + offset
                    ? 1
                    : 0;
    return mask;
}

BinaryMask binarize_tube_region(const GrayImage& crop, int block, double offset) {
    const BlurResult blurred = gaussian_blur(crop);
    const GrayImage edges = sobel_magnitude(blurred.image);
    const GrayImage equalized = equalize_hist(edges);
    return adaptive_mean_threshold(equalized, block, offset);
}

namespace {

// Counterclockwise neighbor table in image coordinates (y grows downward):
// E, NE, N, NW, W, SW, S, SE.
constexpr int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
constexpr int kDy[8] = {0, -1, -1, -1, 0, 1, 1, 1};

int direction_index(PixelCoord from, PixelCoord to) {
    for (int d = 0; d < 8; ++d)
        if (from.x + kDx[d] == to.x && from.y + kDy[d] == to.y)
            return d;
    return -1;
}

// Border following around one labeled component, outer boundary only.
std::vector<PixelCoord> trace_outer_border(const std::vector<int>& labels, int width,
                                           int height, int label, PixelCoord start) {
    auto is_fg = [&](int x, int y) {
        return x >= 0 && x < width && y >= 0 && y < height &&
               labels[static_cast<std::size_t>(y) * width + x] == label;
    };

    // First foreground neighbor scanning clockwise from the west neighbor
    // (which is background for a raster-order start pixel).
    int first_dir = -1;
    for (int k = 0; k < 8; ++k) {
        const int d = ((4 - k) % 8 + 8) % 8;
        if (is_fg(start.x + kDx[d], start.y + kDy[d])) {
            first_dir = d;
            break;
        }
    }
    if (first_dir < 0)
        return {start}; // isolated pixel

    const PixelCoord p1{start.x + kDx[first_dir], start.y + kDy[first_dir]};
    PixelCoord prev = p1;
    PixelCoord cur = start;
    std::vector<PixelCoord> border;

    while (true) {
        const int back = direction_index(cur, prev);
        PixelCoord next{};
        for (int k = 1; k <= 8; ++k) {
            const int d = (back + k) % 8;
            const PixelCoord cand{cur.x + kDx[d], cur.y + kDy[d]};
            if (is_fg(cand.x, cand.y)) {
                next = cand;
                break;
            }
        }
        border.push_back(cur);
        if (next.x == start.x && next.y == start.y && cur == p1)
            break;
        prev = cur;
        cur = next;
        if (border.size() > static_cast<std::size_t>(width) * height * 4)
            throw Error("contour tracing failed to close");
    }
    return border;
}

} // namespace

std::vector<Contour> find_contours(const BinaryMask& mask) {
    std::vector<Contour> contours;
    if (mask.width <= 0 || mask.height <= 0)
        return contours;

    const int w = mask.width;
    const int h = mask.height;
    std::vector<int> labels(static_cast<std::size_t>(w) * h, 0);
    int next_label = 0;

    std::vector<PixelCoord> stack;
    std::vector<std::vector<PixelCoord>> component_pixels;
    std::vector<PixelCoord> component_start;

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask.at(x, y) || labels[static_cast<std::size_t>(y) * w + x] != 0)
                continue;
            ++next_label;
            component_start.push_back({x, y});
            component_pixels.emplace_back();
            std::vector<PixelCoord>& pixels = component_pixels.back();
            stack.clear();
            stack.push_back({x, y});
            labels[static_cast<std::size_t>(y) * w + x] = next_label;
            while (!stack.empty()) {
                const PixelCoord p = stack.back();
                stack.pop_back();
                pixels.push_back(p);
                for (int d = 0; d < 8; ++d) {
                    const int nx = p.x + kDx[d];
                    const int ny = p.y + kDy[d];
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h)
                        continue;
                    if (!mask.at(nx, ny) ||
                        labels[static_cast<std::size_t>(ny) * w + nx] != 0)
                        continue;
                    labels[static_cast<std::size_t>(ny) * w + nx] = next_label;
                    stack.push_back({nx, ny});
                }
            }
        }
    }

    for (int label = 1; label <= next_label; ++label) {
        const std::vector<PixelCoord>& pixels = component_pixels[label - 1];

        std::vector<PixelCoord> border =
            trace_outer_border(labels, w, h, label, component_start[label - 1]);
        if (border.size() < 3)
            continue; // one- and two-pixel specks cannot form a usable contour

        // Enclosed region: component pixels plus anything the outer border
        // walls off. Flood the padded bounding box from its rim across cells
        // that do not belong to this component; unreached cells are inside.
        int min_x = pixels[0].x, max_x = pixels[0].x;
        int min_y = pixels[0].y, max_y = pixels[0].y;
        for (const PixelCoord& p : pixels) {
            min_x = std::min(min_x, p.x);
            max_x = std::max(max_x, p.x);
            min_y = std::min(min_y, p.y);
            max_y = std::max(max_y, p.y);
        }
        const int bx0 = min_x - 1, by0 = min_y - 1;
        const int bw = max_x - min_x + 3, bh = max_y - min_y + 3;
        std::vector<std::uint8_t> outside(static_cast<std::size_t>(bw) * bh, 0);
        auto box_index = [&](int x, int y) {
            return static_cast<std::size_t>(y - by0) * bw + (x - bx0);
        };
        auto is_mine = [&](int x, int y) {
            return x >= 0 && x < w && y >= 0 && y < h &&
                   labels[static_cast<std::size_t>(y) * w + x] == label;
        };
        std::deque<PixelCoord> queue;
        for (int x = bx0; x < bx0 + bw; ++x) {
            queue.push_back({x, by0});
            queue.push_back({x, by0 + bh - 1});
        }
        for (int y = by0; y < by0 + bh; ++y) {
            queue.push_back({bx0, y});
            queue.push_back({bx0 + bw - 1, y});
        }
        for (const PixelCoord& p : queue)
            outside[box_index(p.x, p.y)] = 1;
        while (!queue.empty()) {
            const PixelCoord p = queue.front();
            queue.pop_front();
            static constexpr int fx[4] = {1, -1, 0, 0};
            static constexpr int fy[4] = {0, 0, 1, -1};
            for (int d = 0; d < 4; ++d) {
                const int nx = p.x + fx[d];
                const int ny = p.y + fy[d];
                if (nx < bx0 || nx >= bx0 + bw || ny < by0 || ny >= by0 + bh)
                    continue;
                if (outside[box_index(nx, ny)] || is_mine(nx, ny))
                    continue;
                outside[box_index(nx, ny)] = 1;
                queue.push_back({nx, ny});
            }
        }

        Contour contour;
        contour.points = std::move(border);
        for (int y = min_y; y <= max_y; ++y)
            for (int x = min_x; x <= max_x; ++x)
                if (is_mine(x, y) || !outside[box_index(x, y)])
                    contour.enclosed.push_back({x, y});

        Moments& m = contour.moments;
        m.m00 = static_cast<double>(contour.enclosed.size());
        for (const PixelCoord& p : contour.enclosed) {
            m.m10 += p.x;
            m.m01 += p.y;
        }
        const double cx = m.cx();
        const double cy = m.cy();
        for (const PixelCoord& p : contour.enclosed) {
            m.mu20 += (p.x - cx) * (p.x - cx);
            m.mu11 += (p.x - cx) * (p.y - cy);
            m.mu02 += (p.y - cy) * (p.y - cy);
        }
        if (m.m00 == 0)
            continue;
        contours.push_back(std::move(contour));
    }
    return contours;
}

bool point_in_polygon(const std::vector<PixelCoord>& polygon, Vec2 point) {
    bool inside = false;
    const std::size_t n = polygon.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double yi = polygon[i].y, yj = polygon[j].y;
        const double xi = polygon[i].x, xj = polygon[j].x;
        if ((yi > point.y) != (yj > point.y)) {
            const double x_cross = xj + (point.y - yj) * (xi - xj) / (yi - yj);
            if (point.x < x_cross)
                inside = !inside;
        }
    }
    return inside;
}

ContourSelection select_tube_contour(const std::vector<Contour>& contours,
                                     Vec2 detection_centroid) {
    if (contours.empty())
        throw PipelineError("select_contour", "no contour found in mask");

    auto centroid_distance = [&](const Contour& c) {
        const double dx = c.moments.cx() - detection_centroid.x;
        const double dy = c.moments.cy() - detection_centroid.y;
        return std::hypot(dx, dy);
    };

    ContourSelection best;
    double best_dist = std::numeric_limits<double>::infinity();
    bool found_enclosing = false;
    for (std::size_t i = 0; i < contours.size(); ++i) {
        if (!point_in_polygon(contours[i].points, detection_centroid))
            continue;
        const double d = centroid_distance(contours[i]);
        if (d < best_dist) {
            best_dist = d;
            best.index = i;
            found_enclosing = true;
        }
    }
    if (found_enclosing) {
        best.degraded = false;
        return best;
    }

    for (std::size_t i = 0; i < contours.size(); ++i) {
        const double d = centroid_distance(contours[i]);
        if (d < best_dist) {
            best_dist = d;
            best.index = i;
        }
    }
    best.degraded = true;
    return best;
}

LineFit fit_line_least_squares(std::span<const PixelCoord> points, Vec2 anchor) {
    if (points.size() < 2)
        throw PipelineError("fit_line", "need at least 2 points");

    double mx = 0, my = 0;
    for (const PixelCoord& p : points) {
        mx += p.x;
        my += p.y;
    }
    mx /= static_cast<double>(points.size());
    my /= static_cast<double>(points.size());

    double sxx = 0, sxy = 0, syy = 0;
    for (const PixelCoord& p : points) {
        const double dx = p.x - mx;
        const double dy = p.y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0 && syy == 0)
        throw PipelineError("fit_line", "all points identical, fit is degenerate");

    // Principal axis of the covariance: total least squares, stable for
    // vertical tubes.
    const double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    double dx = std::cos(theta);
    double dy = std::sin(theta);
    if (dx < 0 || (dx == 0 && dy < 0)) {
        dx = -dx;
        dy = -dy;
    }

    const double tr = sxx + syy;
    const double det = std::sqrt((sxx - syy) * (sxx - syy) + 4.0 * sxy * sxy);
    const double lambda_major = (tr + det) / 2.0;
    const double lambda_minor = (tr - det) / 2.0;

    LineFit fit;
    fit.dx = dx;
    fit.dy = dy;
    fit.point = anchor;
    fit.anisotropy = lambda_minor > 1e-12
                         ? lambda_major / lambda_minor
                         : std::numeric_limits<double>::infinity();
    fit.low_anisotropy = fit.anisotropy < 2.0;
    return fit;
}

TubePoseImage endpoints_from_contour(const Contour& contour, const LineFit& line,
                                     int offset_x, int offset_y) {
    const std::size_t n = contour.points.size();
    if (n < 3)
        throw PipelineError("endpoints", "contour too small to intersect");

    struct Hit {
        double t;
        Vec2 p;
    };
    std::vector<Hit> hits;
    const Vec2 a = line.point;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2 p0{static_cast<double>(contour.points[j].x),
                      static_cast<double>(contour.points[j].y)};
        const Vec2 p1{static_cast<double>(contour.points[i].x),
                      static_cast<double>(contour.points[i].y)};
        const double ex = p1.x - p0.x;
        const double ey = p1.y - p0.y;
        const double denom = ex * line.dy - ey * line.dx;
        const double off = (a.x - p0.x) * line.dy - (a.y - p0.y) * line.dx;
        if (std::fabs(denom) < 1e-12) {
            // Segment parallel to the line; if collinear, both ends intersect.
            if (std::fabs(off) < 1e-9) {
                hits.push_back({(p0.x - a.x) * line.dx + (p0.y - a.y) * line.dy, p0});
                hits.push_back({(p1.x - a.x) * line.dx + (p1.y - a.y) * line.dy, p1});
            }
            continue;
        }
        const double u = off / denom;
        if (u < -1e-9 || u > 1.0 + 1e-9)
            continue;
        const Vec2 q{p0.x + u * ex, p0.y + u * ey};
        hits.push_back({(q.x - a.x) * line.dx + (q.y - a.y) * line.dy, q});
    }

    if (hits.size() < 2)
        throw PipelineError("endpoints",
                            "line intersects contour fewer than 2 times (mask failure)");
    auto [lo, hi] = std::minmax_element(
        hits.begin(), hits.end(), [](const Hit& x, const Hit& y) { return x.t < y.t; });
    if (hi->t - lo->t < 1e-9)
        throw PipelineError("endpoints", "degenerate intersection span");

    TubePoseImage pose;
    pose.endpoints[0] = {lo->p.x + offset_x, lo->p.y + offset_y};
    pose.endpoints[1] = {hi->p.x + offset_x, hi->p.y + offset_y};
    pose.centroid = {a.x + offset_x, a.y + offset_y};
    pose.orientation_deg = fold_orientation_deg(
        std::atan2(line.dy, line.dx) * 180.0 / std::numbers::pi);
    return pose;
}

TubePoseImage estimate_pose_2d(const GrayImage& crop, Vec2 detection_centroid,
                               const PoseParams& params, int offset_x, int offset_y,
                               PoseDebug* debug) {
    BinaryMask mask;
    try {
        const BlurResult blurred = gaussian_blur(crop);
        const GrayImage edges = sobel_magnitude(blurred.image);
        const GrayImage equalized = equalize_hist(edges);
        mask = adaptive_mean_threshold(equalized, params.block, params.offset);
        if (debug != nullptr) {
            debug->blurred = blurred.image;
            debug->sobel = edges;
            debug->equalized = equalized;
            debug->mask = mask;
        }
    } catch (const PipelineError&) {
        throw;
    } catch (const Error& e) {
        throw PipelineError("binarize", e.what());
    }

    const std::vector<Contour> contours = find_contours(mask);
    const ContourSelection selection = select_tube_contour(contours, detection_centroid);
    const Contour& contour = contours[selection.index];
    const LineFit line = fit_line_least_squares(contour.enclosed, detection_centroid);
    TubePoseImage pose = endpoints_from_contour(contour, line, offset_x, offset_y);
    pose.degraded = selection.degraded;
    return pose;
}

} // namespace tubeloc
