#include "tubeloc/stereo3d.hpp"
#include "tubeloc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace tubeloc {

bool Mat3::orthonormal(double tolerance) const {
    // || R^T R - I || max-entry norm.
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double dot = 0;
            for (int k = 0; k < 3; ++k)
                dot += m[k * 3 + i] * m[k * 3 + j];
            const double expected = i == j ? 1.0 : 0.0;
            if (std::fabs(dot - expected) > tolerance)
                return false;
        }
    }
    return true;
}

CameraIntrinsics intrinsics_from_hfov(int width, int height, double hfov_deg) {
    if (hfov_deg <= 0.0 || hfov_deg >= 180.0)
        throw Error("intrinsics_from_hfov: hfov must be in (0, 180), got " +
                    std::to_string(hfov_deg));
    if (width < 1 || height < 1)
        throw Error("intrinsics_from_hfov: non-positive image dims");
    CameraIntrinsics k;
    k.width = width;
    k.height = height;
    const double half = hfov_deg * std::numbers::pi / 360.0;
    k.fx = (width / 2.0) / std::tan(half);
    k.fy = k.fx;
    k.cx = width / 2.0;
    k.cy = height / 2.0;
    return k;
}

StereoRig load_rig(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("rig config: cannot open " + path.string());
    StereoRig rig;
    double hfov = 0, fx = 0, fy = 0, cx = -1, cy = -1;
    int width = 0, height = 0;
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
        const std::string value = strip(line.substr(eq + 1));
        if (key.empty())
            continue;
        try {
            std::istringstream vs(value);
            if (key == "hfov_deg") vs >> hfov;
            else if (key == "fx") vs >> fx;
            else if (key == "fy") vs >> fy;
            else if (key == "cx") vs >> cx;
            else if (key == "cy") vs >> cy;
            else if (key == "width") vs >> width;
            else if (key == "height") vs >> height;
            else if (key == "baseline_m") vs >> rig.baseline_m;
            else if (key == "tube_length_m") vs >> rig.tube_length_m;
            else if (key == "mount_rotation") {
                for (double& e : rig.mount.rotation.m)
                    if (!(vs >> e))
                        throw ParseError("expected 9 numbers");
            } else if (key == "mount_translation") {
                if (!(vs >> rig.mount.translation.x >> rig.mount.translation.y >>
                      rig.mount.translation.z))
                    throw ParseError("expected 3 numbers");
            } else {
                throw ParseError("unknown key \"" + key + "\"");
            }
        } catch (const std::exception& e) {
            throw ParseError("rig config " + path.string() + " line " +
                             std::to_string(line_no) + ": " + e.what());
        }
    }
    if (width < 1 || height < 1)
        throw ParseError("rig config: width/height required");
    if (fx > 0) {
        rig.intrinsics.fx = fx;
        rig.intrinsics.fy = fy > 0 ? fy : fx;
        rig.intrinsics.cx = cx >= 0 ? cx : width / 2.0;
        rig.intrinsics.cy = cy >= 0 ? cy : height / 2.0;
        rig.intrinsics.width = width;
        rig.intrinsics.height = height;
    } else if (hfov > 0) {
        rig.intrinsics = intrinsics_from_hfov(width, height, hfov);
        if (cx >= 0) rig.intrinsics.cx = cx;
        if (cy >= 0) rig.intrinsics.cy = cy;
    } else {
        throw ParseError("rig config: either fx or hfov_deg required");
    }
    if (rig.baseline_m <= 0)
        throw ParseError("rig config: baseline_m must be positive");
    if (!rig.mount.rotation.orthonormal())
        throw ParseError("rig config: mount_rotation is not orthonormal");
    return rig;
}

Vec3 disparity_to_point(double u, double v, double d, const StereoRig& rig) {
    if (d <= 0.0)
        throw PipelineError("disparity_to_point",
                            "invalid (non-positive) disparity " + std::to_string(d));
    const CameraIntrinsics& k = rig.intrinsics;
    const double z = k.fx * rig.baseline_m / d;
    return {(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z};
}

namespace {

// Median disparity over the valid pixels of the 5x5 neighborhood.
double sample_disparity(const DisparityImage& disparity, double u, double v) {
    const int cx = static_cast<int>(std::lround(u));
    const int cy = static_cast<int>(std::lround(v));
    std::vector<float> samples;
    samples.reserve(25);
    for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
            const int x = cx + dx;
            const int y = cy + dy;
            if (x < 0 || x >= disparity.width || y < 0 || y >= disparity.height)
                continue;
            const float d = disparity.at(x, y);
            if (d > 0.0f && std::isfinite(d))
                samples.push_back(d);
        }
    }
    if (samples.empty())
        throw PipelineError("lift_pose",
                            "no valid disparity in the 5x5 neighborhood of (" +
                                std::to_string(u) + ", " + std::to_string(v) + ")");
    std::nth_element(samples.begin(), samples.begin() + samples.size() / 2,
                     samples.end());
    const float upper = samples[samples.size() / 2];
    if (samples.size() % 2 == 1)
        return upper;
    const float lower =
        *std::max_element(samples.begin(), samples.begin() + samples.size() / 2);
    return (static_cast<double>(lower) + upper) / 2.0;
}

} // namespace

TubePose3D lift_pose_to_3d(const TubePoseImage& pose, const DisparityImage& disparity,
                           const StereoRig& rig) {
    auto lift = [&](const Vec2& p) {
        const double d = sample_disparity(disparity, p.x, p.y);
        return rig.mount.apply(disparity_to_point(p.x, p.y, d, rig));
    };
    TubePose3D out;
    out.endpoints[0] = lift(pose.endpoints[0]);
    out.endpoints[1] = lift(pose.endpoints[1]);
    out.centroid = lift(pose.centroid);
    const double dx = out.endpoints[1].x - out.endpoints[0].x;
    const double dy = out.endpoints[1].y - out.endpoints[0].y;
    out.yaw_deg = fold_orientation_deg(std::atan2(dy, dx) * 180.0 / std::numbers::pi);
    return out;
}

bool Dem::empty_at(int col, int row) const { return std::isnan(at(col, row)); }

std::size_t Dem::filled_cells() const {
    std::size_t n = 0;
    for (float e : elevation)
        if (!std::isnan(e))
            ++n;
    return n;
}

Dem build_dem(const DisparityImage& disparity, const GrayImage& image,
              const StereoRig& rig, double cell_m) {
    if (disparity.width != image.width || disparity.height != image.height)
        throw Error("build_dem: disparity and image dims differ");
    if (cell_m <= 0)
        throw Error("build_dem: cell size must be positive");

    std::vector<Vec3> points;
    points.reserve(static_cast<std::size_t>(disparity.width) * disparity.height / 4);
    for (int y = 0; y < disparity.height; ++y) {
        for (int x = 0; x < disparity.width; ++x) {
            const float d = disparity.at(x, y);
            if (d <= 0.0f || !std::isfinite(d))
                continue;
            points.push_back(rig.mount.apply(disparity_to_point(x, y, d, rig)));
        }
    }

    Dem dem;
    dem.cell_m = cell_m;
    if (points.empty()) {
        dem.cols = 1;
        dem.rows = 1;
        dem.elevation.assign(1, std::numeric_limits<float>::quiet_NaN());
        return dem;
    }

    double min_x = points[0].x, max_x = points[0].x;
    double min_y = points[0].y, max_y = points[0].y;
    for (const Vec3& p : points) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    dem.origin_x = std::floor(min_x / cell_m) * cell_m;
    dem.origin_y = std::floor(min_y / cell_m) * cell_m;
    dem.cols = static_cast<int>(std::floor((max_x - dem.origin_x) / cell_m)) + 1;
    dem.rows = static_cast<int>(std::floor((max_y - dem.origin_y) / cell_m)) + 1;
    dem.elevation.assign(static_cast<std::size_t>(dem.cols) * dem.rows,
                         std::numeric_limits<float>::quiet_NaN());

    for (const Vec3& p : points) {
        const int col = static_cast<int>(std::floor((p.x - dem.origin_x) / cell_m));
        const int row = static_cast<int>(std::floor((p.y - dem.origin_y) / cell_m));
        if (col < 0 || col >= dem.cols || row < 0 || row >= dem.rows)
            continue;
        float& cell = dem.elevation[static_cast<std::size_t>(row) * dem.cols + col];
        const float z = static_cast<float>(p.z);
        if (std::isnan(cell) || z > cell)
            cell = z;
    }
    return dem;
}

void save_dem_csv(const Dem& dem, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw Error("save_dem_csv: cannot open " + path.string());
    out << "x,y,elevation\n";
    char buf[96];
    for (int row = 0; row < dem.rows; ++row) {
        for (int col = 0; col < dem.cols; ++col) {
            if (dem.empty_at(col, row))
                continue;
            std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n",
                          dem.origin_x + (col + 0.5) * dem.cell_m,
                          dem.origin_y + (row + 0.5) * dem.cell_m,
                          static_cast<double>(dem.at(col, row)));
            out << buf;
        }
    }
    if (!out)
        throw Error("save_dem_csv: write failed: " + path.string());
}

void save_dem_pgm(const Dem& dem, const std::filesystem::path& image_path,
                  const std::filesystem::path& sidecar_path) {
    float min_e = std::numeric_limits<float>::infinity();
    float max_e = -std::numeric_limits<float>::infinity();
    for (float e : dem.elevation) {
        if (std::isnan(e))
            continue;
        min_e = std::min(min_e, e);
        max_e = std::max(max_e, e);
    }
    const bool any = min_e <= max_e;
    const float range = any && max_e > min_e ? max_e - min_e : 1.0f;

    // Empty cells render as 0; filled cells scale into [1, 255].
    GrayImage preview(dem.cols, dem.rows);
    for (int row = 0; row < dem.rows; ++row) {
        for (int col = 0; col < dem.cols; ++col) {
            if (dem.empty_at(col, row))
                continue;
            const double t = (dem.at(col, row) - min_e) / range;
            preview.at(col, row) =
                static_cast<std::uint8_t>(std::clamp(std::lround(1 + t * 254), 1L, 255L));
        }
    }
    save_pgm(preview, image_path);

    std::ofstream sidecar(sidecar_path);
    if (!sidecar)
        throw Error("save_dem_pgm: cannot open " + sidecar_path.string());
    sidecar << "origin_x " << dem.origin_x << "\norigin_y " << dem.origin_y
            << "\ncell_m " << dem.cell_m << "\nmin_elevation "
            << (any ? min_e : 0.0f) << "\nmax_elevation " << (any ? max_e : 0.0f)
            << "\nempty_value 0\n";
}

} // namespace tubeloc
