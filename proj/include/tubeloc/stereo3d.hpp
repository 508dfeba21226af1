#ifndef TUBELOC_STEREO3D_HPP
#define TUBELOC_STEREO3D_HPP

#include "tubeloc/imgcore.hpp"
#include "tubeloc/posecv.hpp"

#include <array>
#include <filesystem>

namespace tubeloc {

struct Vec3 {
    double x = 0;
    double y = 0;
    double z = 0;
};

struct Mat3 {
    // Row-major.
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    Vec3 apply(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    bool orthonormal(double tolerance = 1e-9) const;
};

struct CameraIntrinsics {
    double fx = 0;
    double fy = 0;
    double cx = 0;
    double cy = 0;
    int width = 0;
    int height = 0;
};

// fx = fy = (width/2) / tan(hfov/2), principal point at the image center.
CameraIntrinsics intrinsics_from_hfov(int width, int height, double hfov_deg);

struct MountPose {
    Mat3 rotation;     // camera frame -> world frame
    Vec3 translation;

    Vec3 apply(const Vec3& camera_point) const {
        const Vec3 r = rotation.apply(camera_point);
        return {r.x + translation.x, r.y + translation.y, r.z + translation.z};
    }
};

struct StereoRig {
    CameraIntrinsics intrinsics;
    double baseline_m = 0.12;
    MountPose mount;
    double tube_length_m = 0.15;
};

// Key/value text: fx or hfov_deg, fy, cx, cy, width, height, baseline_m,
// mount_rotation (9 row-major), mount_translation (3), tube_length_m.
StereoRig load_rig(const std::filesystem::path& path);

// Z = fx*B/d, X = (u-cx)*Z/fx, Y = (v-cy)*Z/fy; camera frame.
Vec3 disparity_to_point(double u, double v, double d, const StereoRig& rig);

struct TubePose3D {
    Vec3 endpoints[2]; // world frame, meters
    Vec3 centroid;
    double yaw_deg = 0; // ground-plane (world x-y) orientation, [0, 180)
};

// Each image point sampled with the median disparity of the valid pixels in
// its 5x5 neighborhood, lifted to camera frame, then through the mount pose.
TubePose3D lift_pose_to_3d(const TubePoseImage& pose, const DisparityImage& disparity,
                           const StereoRig& rig);

struct Dem {
    double origin_x = 0; // world coords of cell (0,0) corner
    double origin_y = 0;
    double cell_m = 0.02;
    int cols = 0;
    int rows = 0;
    std::vector<float> elevation; // row-major, NaN marks empty cells

    float at(int col, int row) const {
        return elevation[static_cast<std::size_t>(row) * cols + col];
    }
    bool empty_at(int col, int row) const;
    std::size_t filled_cells() const;
};

// Every valid disparity pixel lifted to the world frame; per ground cell the
// elevation is the maximum point height (the upper surface).
Dem build_dem(const DisparityImage& disparity, const GrayImage& image,
              const StereoRig& rig, double cell_m = 0.02);

void save_dem_csv(const Dem& dem, const std::filesystem::path& path);
// 8-bit preview scaled over [min,max]; the sidecar records the scaling.
void save_dem_pgm(const Dem& dem, const std::filesystem::path& image_path,
                  const std::filesystem::path& sidecar_path);

} // namespace tubeloc

#endif
