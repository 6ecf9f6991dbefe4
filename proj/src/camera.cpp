#include "f2bev/camera.hpp"

#include "f2bev/keyvalue.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace f2bev::camera {

const char* to_string(ProjectionStatus status) {
    switch (status) {
        case ProjectionStatus::Ok: return "OK";
        case ProjectionStatus::BehindCamera: return "BehindCamera";
        case ProjectionStatus::OutsideImage: return "OutsideImage";
        case ProjectionStatus::MaskedOut: return "MaskedOut";
    }
    return "unknown";
}

ValidMask::ValidMask(int width, int height, bool fill)
    : width_(width), height_(height),
      bits_(static_cast<std::size_t>(width) * height, fill ? 1 : 0) {
    if (width <= 0 || height <= 0) throw PreconditionError("mask dimensions must be positive");
}

ValidMask ValidMask::from_image(const Image8& image) {
    if (image.channels != 1) throw PreconditionError("mask image must be single channel");
    ValidMask mask(image.width, image.height, false);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) mask.set(x, y, image.at(x, y) >= 128);
    }
    return mask;
}

Image8 ValidMask::to_image() const {
    Image8 image(width_, height_, 1);
    for (std::size_t i = 0; i < bits_.size(); ++i) image.pixels[i] = bits_[i] ? 255 : 0;
    return image;
}

std::size_t ValidMask::count() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
}

Normalized apply_distortion(const Distortion& k, double x, double y) {
    const double rho2 = x * x + y * y;
    const double radial = k.k1 * rho2 + k.k2 * rho2 * rho2;
    return {x + x * radial + 2.0 * k.k3 * x * y + k.k4 * (rho2 + 2.0 * x * x),
            y + y * radial + k.k3 * (rho2 + 2.0 * y * y) + 2.0 * k.k4 * x * y};
}

Normalized undistort(const Distortion& k, double x_d, double y_d) {
    double x = x_d;
    double y = y_d;
    for (int it = 0; it < kUndistortMaxIterations; ++it) {
        const Normalized d = apply_distortion(k, x, y);
        // d - (x, y) is the additive distortion at the current estimate.
        const double nx = x_d - (d.x - x);
        const double ny = y_d - (d.y - y);
        const double step = std::max(std::abs(nx - x), std::abs(ny - y));
        x = nx;
        y = ny;
        if (!std::isfinite(x) || !std::isfinite(y)) break;
        if (step < kUndistortStepTolerance) break;
    }
    const Normalized check = apply_distortion(k, x, y);
    const double residual = std::max(std::abs(check.x - x_d), std::abs(check.y - y_d));
    if (!(residual < kUndistortResidualTolerance)) {
        std::ostringstream msg;
        msg << "undistortion did not converge at (" << x_d << ", " << y_d
            << "), residual " << residual;
        throw NonConvergent(msg.str());
    }
    return {x, y};
}

namespace {

void check_rotation(const Eigen::Matrix3d& r) {
    const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho < 1e-9) || !(r.determinant() > 0.0)) {
        throw PreconditionError("camera rotation must be orthonormal with determinant +1");
    }
}

}  // namespace

FisheyeCamera::FisheyeCamera(Intrinsics intrinsics, Distortion distortion, int width, int height,
                             const Eigen::Matrix3d& rotation,
                             const Eigen::Vector3d& translation, ValidMask mask)
    : intrinsics_(intrinsics), distortion_(distortion), width_(width), height_(height),
      rotation_(rotation), translation_(translation), mask_(std::move(mask)) {
    if (!(intrinsics_.gamma1 > 0.0) || !(intrinsics_.gamma2 > 0.0)) {
        throw PreconditionError("focal lengths must be positive");
    }
    if (!(intrinsics_.xi >= 0.0)) throw PreconditionError("mirror parameter xi must be >= 0");
    if (width_ <= 0 || height_ <= 0) throw PreconditionError("image size must be positive");
    if (mask_.width() != width_ || mask_.height() != height_) {
        throw PreconditionError("valid mask dimensions differ from image size");
    }
    check_rotation(rotation_);
}

FisheyeCamera::FisheyeCamera(Intrinsics intrinsics, Distortion distortion, int width, int height,
                             const Eigen::Matrix3d& rotation,
                             const Eigen::Vector3d& translation)
    : FisheyeCamera(intrinsics, distortion, width, height, rotation, translation,
                    ValidMask(width, height, true)) {}

FisheyeCamera FisheyeCamera::with_mask(ValidMask mask) const {
    return FisheyeCamera(intrinsics_, distortion_, width_, height_, rotation_, translation_,
                         std::move(mask));
}

Eigen::Vector3d FisheyeCamera::world_to_camera(const Eigen::Vector3d& p_world) const {
    return rotation_ * p_world + translation_;
}

Projection FisheyeCamera::project(const Eigen::Vector3d& p_world) const {
    return project_camera_point(world_to_camera(p_world));
}

Projection FisheyeCamera::project_camera_point(const Eigen::Vector3d& p_cam) const {
    const double norm = p_cam.norm();
    if (!(norm > 1e-12)) throw DegeneratePoint("point coincides with the camera center");
    const Eigen::Vector3d s = p_cam / norm;
    const double denom = s.z() + intrinsics_.xi;
    Projection out;
    if (denom <= kFrontEpsilon) {
        out.u = out.v = std::numeric_limits<double>::quiet_NaN();
        out.reason = ProjectionStatus::BehindCamera;
        return out;
    }
    const Normalized d = apply_distortion(s.x() / denom, s.y() / denom);
    out.u = intrinsics_.gamma1 * d.x + intrinsics_.alpha * intrinsics_.gamma1 * d.y + intrinsics_.c1;
    out.v = intrinsics_.gamma2 * d.y + intrinsics_.c2;
    if (!(out.u >= 0.0 && out.u < width_ && out.v >= 0.0 && out.v < height_)) {
        out.reason = ProjectionStatus::OutsideImage;
    } else if (!mask_.at(static_cast<int>(std::floor(out.u)), static_cast<int>(std::floor(out.v)))) {
        out.reason = ProjectionStatus::MaskedOut;
    } else {
        out.valid = true;
        out.reason = ProjectionStatus::Ok;
    }
    return out;
}

Normalized FisheyeCamera::apply_distortion(double x, double y) const {
    return camera::apply_distortion(distortion_, x, y);
}

Normalized FisheyeCamera::undistort(double x_d, double y_d) const {
    return camera::undistort(distortion_, x_d, y_d);
}

Eigen::Vector3d FisheyeCamera::unproject(double u, double v) const {
    if (!(u >= 0.0 && u < width_ && v >= 0.0 && v < height_)) {
        std::ostringstream msg;
        msg << "unproject: pixel (" << u << ", " << v << ") outside " << width_ << "x" << height_;
        throw PreconditionError(msg.str());
    }
    const auto& k = intrinsics_;
    const double y_d = (v - k.c2) / k.gamma2;
    const double x_d = (u - k.c1 - k.alpha * k.gamma1 * y_d) / k.gamma1;
    const Normalized n = undistort(x_d, y_d);
    const double r2 = n.x * n.x + n.y * n.y;
    const double disc = 1.0 + (1.0 - k.xi * k.xi) * r2;
    if (disc < 0.0) throw NoPreimage("normalized point outside the image of the unit sphere");
    // eta = s_z + xi, the larger root of |s| = 1.
    const double eta = (k.xi + std::sqrt(disc)) / (1.0 + r2);
    if (!(eta > kFrontEpsilon)) throw NoPreimage("normalized point maps behind the camera");
    Eigen::Vector3d s(eta * n.x, eta * n.y, eta - k.xi);
    return s.normalized();
}

bool FisheyeCamera::pixel_valid(double u, double v) const {
    if (!std::isfinite(u) || !std::isfinite(v)) return false;
    const double fu = std::floor(u);
    const double fv = std::floor(v);
    if (fu < 0.0 || fu >= width_ || fv < 0.0 || fv >= height_) return false;
    return mask_.at(static_cast<int>(fu), static_cast<int>(fv));
}

FisheyeCamera FisheyeCamera::load(const std::filesystem::path& path) {
    const KeyValueFile kv = KeyValueFile::load(path);
    Intrinsics in;
    in.gamma1 = kv.number("gamma1");
    in.gamma2 = kv.number("gamma2");
    in.alpha = kv.number("alpha");
    in.c1 = kv.number("c1");
    in.c2 = kv.number("c2");
    in.xi = kv.number("xi");
    Distortion dist{kv.number("k1"), kv.number("k2"), kv.number("k3"), kv.number("k4")};
    const int width = kv.integer("width");
    const int height = kv.integer("height");
    const auto r = kv.numbers("R");
    const auto t = kv.numbers("T");
    if (r.size() != 9) throw ParseError(path.string() + ": R needs 9 values");
    if (t.size() != 3) throw ParseError(path.string() + ": T needs 3 values");
    Eigen::Matrix3d rotation;
    for (int i = 0; i < 9; ++i) rotation(i / 3, i % 3) = r[static_cast<std::size_t>(i)];
    const Eigen::Vector3d translation(t[0], t[1], t[2]);
    ValidMask mask(width, height, true);
    if (kv.has("mask")) {
        mask = ValidMask::from_image(read_pgm(path.parent_path() / kv.str("mask")));
    }
    return FisheyeCamera(in, dist, width, height, rotation, translation, std::move(mask));
}

void FisheyeCamera::save(const std::filesystem::path& path, const std::string& mask_file) const {
    KeyValueFile kv;
    auto num = [](double v) {
        std::ostringstream s;
        s.precision(17);
        s << v;
        return s.str();
    };
    kv.set("gamma1", num(intrinsics_.gamma1));
    kv.set("gamma2", num(intrinsics_.gamma2));
    kv.set("alpha", num(intrinsics_.alpha));
    kv.set("c1", num(intrinsics_.c1));
    kv.set("c2", num(intrinsics_.c2));
    kv.set("xi", num(intrinsics_.xi));
    kv.set("k1", num(distortion_.k1));
    kv.set("k2", num(distortion_.k2));
    kv.set("k3", num(distortion_.k3));
    kv.set("k4", num(distortion_.k4));
    kv.set("width", std::to_string(width_));
    kv.set("height", std::to_string(height_));
    std::string r;
    for (int i = 0; i < 9; ++i) r += (i ? " " : "") + num(rotation_(i / 3, i % 3));
    kv.set("R", r);
    kv.set("T", num(translation_.x()) + " " + num(translation_.y()) + " " + num(translation_.z()));
    if (!mask_file.empty()) {
        kv.set("mask", mask_file);
        write_pgm(path.parent_path() / mask_file, mask_.to_image());
    }
    kv.save(path);
}

RoundTripStats round_trip(const FisheyeCamera& cam, std::size_t samples, std::uint64_t seed) {
    if (cam.mask().count() == 0) throw PreconditionError("round_trip: camera has no valid pixel");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> uu(0.0, cam.width()), uv(0.0, cam.height());
    RoundTripStats stats;
    while (stats.rays < samples) {
        const Eigen::Vector3d r = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
        const auto p = cam.project_camera_point(r);
        if (!p.valid) continue;
        stats.min_ray_agreement = std::min(stats.min_ray_agreement, cam.unproject(p.u, p.v).dot(r));
        ++stats.rays;
    }
    while (stats.pixels < samples) {
        const double u = uu(rng), v = uv(rng);
        if (!cam.pixel_valid(u, v)) continue;
        const auto p = cam.project_camera_point(cam.unproject(u, v));
        const double err = p.valid || p.reason == ProjectionStatus::MaskedOut ? std::hypot(p.u - u, p.v - v)
                                                                              : std::numeric_limits<double>::infinity();
        stats.max_pixel_error = std::max(stats.max_pixel_error, err);
        ++stats.pixels;
    }
    return stats;
}

}  // namespace f2bev::camera
