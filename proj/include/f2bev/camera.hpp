#pragma once

#include "f2bev/error.hpp"
#include "f2bev/image_io.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace f2bev::camera {

// Points with s_z + xi at or below this value are treated as behind the
// projection center of the unified model.
inline constexpr double kFrontEpsilon = 1e-6;

inline constexpr int kUndistortMaxIterations = 50;
inline constexpr double kUndistortStepTolerance = 1e-12;
inline constexpr double kUndistortResidualTolerance = 1e-9;

// The point handed to project() coincides with the camera center.
class DegeneratePoint : public Error {
public:
    using Error::Error;
};

// Fixed-point undistortion did not meet its residual tolerance.
class NonConvergent : public Error {
public:
    using Error::Error;
};

// The normalized point has no preimage on the forward part of the sphere.
class NoPreimage : public Error {
public:
    using Error::Error;
};

enum class ProjectionStatus { Ok, BehindCamera, OutsideImage, MaskedOut };

const char* to_string(ProjectionStatus status);

struct Projection {
    double u = 0.0;
    double v = 0.0;
    bool valid = false;
    ProjectionStatus reason = ProjectionStatus::Ok;
};

struct Intrinsics {
    double gamma1 = 1.0;
    double gamma2 = 1.0;
    double alpha = 0.0;  // skew
    double c1 = 0.0;
    double c2 = 0.0;
    double xi = 0.0;  // mirror parameter
};

// k1, k2 radial; k3, k4 tangential.
struct Distortion {
    double k1 = 0.0;
    double k2 = 0.0;
    double k3 = 0.0;
    double k4 = 0.0;
};

// Usable-pixel raster: true where the lens sees the scene, false where the
// image is covered by the ego car or lies outside the lens circle.
class ValidMask {
public:
    ValidMask() = default;
    ValidMask(int width, int height, bool fill = true);

    static ValidMask from_image(const Image8& image);
    Image8 to_image() const;

    int width() const { return width_; }
    int height() const { return height_; }
    bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int x, int y, bool value) {
        bits_[static_cast<std::size_t>(y) * width_ + x] = value ? 1 : 0;
    }
    std::size_t count() const;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

struct Normalized {
    double x = 0.0;
    double y = 0.0;
};

// Unified projection (unit sphere shifted by xi along z) followed by
// radial-tangential distortion and the intrinsic matrix
//
//     [g1  a*g1  c1]
// K = [0   g2    c2]
//     [0   0     1 ]
//
// Immutable after construction; every member function is pure.
class FisheyeCamera {
public:
    FisheyeCamera(Intrinsics intrinsics, Distortion distortion, int width, int height,
                  const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation,
                  ValidMask mask);

    // Same as above with an all-valid mask.
    FisheyeCamera(Intrinsics intrinsics, Distortion distortion, int width, int height,
                  const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

    // Calibration text format, see README. The mask path is resolved relative
    // to the calibration file; a missing `mask` key means every pixel is valid.
    static FisheyeCamera load(const std::filesystem::path& path);
    // Writes the calibration and, when mask_file is non-empty, the mask PGM
    // next to it.
    void save(const std::filesystem::path& path, const std::string& mask_file) const;

    const Intrinsics& intrinsics() const { return intrinsics_; }
    const Distortion& distortion() const { return distortion_; }
    int width() const { return width_; }
    int height() const { return height_; }
    const Eigen::Matrix3d& rotation() const { return rotation_; }
    const Eigen::Vector3d& translation() const { return translation_; }
    const ValidMask& mask() const { return mask_; }
    // Camera center expressed in the world (BEV) frame.
    Eigen::Vector3d center() const { return -rotation_.transpose() * translation_; }

    Eigen::Vector3d world_to_camera(const Eigen::Vector3d& p_world) const;

    // Throws DegeneratePoint when the point sits on the camera center.
    Projection project(const Eigen::Vector3d& p_world) const;
    // Projection of a point already expressed in the camera frame.
    Projection project_camera_point(const Eigen::Vector3d& p_cam) const;

    Normalized apply_distortion(double x, double y) const;
    Normalized undistort(double x_d, double y_d) const;

    // Unit ray in the camera frame. Requires 0 <= u < width, 0 <= v < height.
    Eigen::Vector3d unproject(double u, double v) const;

    bool pixel_valid(double u, double v) const;

    // Same camera with a different mask (used to build rigs before masks are known).
    FisheyeCamera with_mask(ValidMask mask) const;

private:
    Intrinsics intrinsics_;
    Distortion distortion_;
    int width_;
    int height_;
    Eigen::Matrix3d rotation_;
    Eigen::Vector3d translation_;
    ValidMask mask_;
};

// Standalone distortion for callers without a camera (tests, tools).
Normalized apply_distortion(const Distortion& k, double x, double y);
Normalized undistort(const Distortion& k, double x_d, double y_d);

struct RoundTripStats {
    std::size_t rays = 0;
    std::size_t pixels = 0;
    double min_ray_agreement = 1.0;  // min over rays of unproject(project(r)) . r
    double max_pixel_error = 0.0;    // max over pixels of |project(unproject(p)) - p|
};

// Seeded round trips over `samples` random unit rays that project onto valid
// pixels and `samples` random valid pixels.
RoundTripStats round_trip(const FisheyeCamera& cam, std::size_t samples, std::uint64_t seed);

}  // namespace f2bev::camera
