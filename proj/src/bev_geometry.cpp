#include "f2bev/bev_geometry.hpp"

#include "f2bev/parallel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <ostream>

namespace f2bev::bev {

Pose Pose::planar(double yaw, double x, double y) {
    Pose p;
    p.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    p.translation = Eigen::Vector3d(x, y, 0.0);
    return p;
}

Pose Pose::inverse() const {
    Pose p;
    p.rotation = rotation.transpose();
    p.translation = -(p.rotation * translation);
    return p;
}

Pose Pose::operator*(const Pose& other) const {
    Pose p;
    p.rotation = rotation * other.rotation;
    p.translation = rotation * other.translation + translation;
    return p;
}

double Pose::yaw() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }

EgoMotion EgoMotion::between(const Pose& previous, const Pose& current) {
    const Pose rel = previous.inverse() * current;
    return {rel.rotation, rel.translation};
}

EgoMotion EgoMotion::chain(const EgoMotion& earlier, const EgoMotion& later) {
    return {earlier.rotation * later.rotation, earlier.rotation * later.translation + earlier.translation};
}

double EgoMotion::yaw() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }

void EgoMotion::validate() const {
    const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho < 1e-9) || !(rotation.determinant() > 0.0)) {
        throw PreconditionError("ego-motion rotation must be orthonormal with determinant +1");
    }
}

BevGrid::BevGrid(int h, int w, double cell_size, std::vector<double> anchors, int feature_dim)
    : h_(h), w_(w), l_(cell_size), anchors_(std::move(anchors)), d_(feature_dim) {
    if (h_ < 1 || w_ < 1) throw PreconditionError("BEV grid needs h, w >= 1");
    if (!(l_ > 0.0)) throw PreconditionError("BEV cell size must be positive");
    if (anchors_.empty()) throw PreconditionError("BEV grid needs at least one height anchor");
    for (std::size_t i = 1; i < anchors_.size(); ++i) {
        if (!(anchors_[i] > anchors_[i - 1])) {
            throw PreconditionError("height anchors must be strictly increasing");
        }
    }
    if (d_ < 0) throw PreconditionError("feature dimension must be non-negative");
}

BevGrid BevGrid::paper_default(int feature_dim) {
    return BevGrid(50, 50, 0.33, {0.0, 0.25, 1.8}, feature_dim);
}

WorldXY BevGrid::cell_to_world(int x, int y) const {
    if (x < 0 || x >= w_ || y < 0 || y >= h_) {
        throw PreconditionError("cell (" + std::to_string(x) + ", " + std::to_string(y) +
                                ") outside " + std::to_string(w_) + "x" + std::to_string(h_) +
                                " grid");
    }
    return {(x - w_ / 2.0) * l_, (y - h_ / 2.0) * l_};
}

WorldXY BevGrid::cell_to_world(double x, double y) const {
    return {(x - w_ / 2.0) * l_, (y - h_ / 2.0) * l_};
}

std::vector<Eigen::Vector3d> BevGrid::anchor_points(int x, int y) const {
    const WorldXY r = cell_to_world(x, y);
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(anchors_.size());
    for (double z : anchors_) pts.emplace_back(r.x, r.y, z);
    return pts;
}

ReferencePointTable::ReferencePointTable(const BevGrid& grid,
                                         std::span<const camera::FisheyeCamera> cameras)
    : grid_(grid), n_cam_(static_cast<int>(cameras.size())) {
    if (cameras.empty()) throw PreconditionError("reference table needs at least one camera");
    const int n_cells = grid_.n_cells();
    const int n_a = grid_.n_anchors();
    entries_.resize(static_cast<std::size_t>(n_cells) * n_a * n_cam_);
    parallel_for(static_cast<std::size_t>(n_cells), [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            const int x = static_cast<int>(p) % grid_.w();
            const int y = static_cast<int>(p) / grid_.w();
            const auto pts = grid_.anchor_points(x, y);
            for (int j = 0; j < n_a; ++j) {
                for (int i = 0; i < n_cam_; ++i) {
                    ReferenceEntry& e = entries_[(p * n_a + j) * n_cam_ + i];
                    const auto& cam = cameras[static_cast<std::size_t>(i)];
                    if ((cam.center() - pts[static_cast<std::size_t>(j)]).norm() <= 1e-12) {
                        e.valid = false;
                        continue;
                    }
                    const camera::Projection proj = cam.project(pts[static_cast<std::size_t>(j)]);
                    e.u = proj.u;
                    e.v = proj.v;
                    e.valid = proj.valid;
                }
            }
        }
    });
    view_offsets_.reserve(static_cast<std::size_t>(n_cells) + 1);
    view_offsets_.push_back(0);
    for (int p = 0; p < n_cells; ++p) {
        for (int i = 0; i < n_cam_; ++i) {
            bool any = false;
            for (int j = 0; j < n_a && !any; ++j) any = entry(p, j, i).valid;
            if (any) views_.push_back(i);
        }
        view_offsets_.push_back(static_cast<int>(views_.size()));
    }
}

std::span<const int> ReferencePointTable::valid_views(int cell) const {
    const auto begin = static_cast<std::size_t>(view_offsets_[static_cast<std::size_t>(cell)]);
    const auto end = static_cast<std::size_t>(view_offsets_[static_cast<std::size_t>(cell) + 1]);
    return std::span<const int>(views_).subspan(begin, end - begin);
}

void ReferencePointTable::write_csv(std::ostream& out) const {
    out << "cell_x,cell_y,anchor_index,camera_index,u,v,valid\n";
    const auto old_precision = out.precision(10);
    for (int p = 0; p < grid_.n_cells(); ++p) {
        for (int j = 0; j < grid_.n_anchors(); ++j) {
            for (int i = 0; i < n_cam_; ++i) {
                const ReferenceEntry& e = entry(p, j, i);
                out << p % grid_.w() << ',' << p / grid_.w() << ',' << j << ',' << i << ',';
                if (std::isfinite(e.u)) out << e.u; else out << "nan";
                out << ',';
                if (std::isfinite(e.v)) out << e.v; else out << "nan";
                out << ',' << (e.valid ? 1 : 0) << '\n';
            }
        }
    }
    out.precision(old_precision);
}

ReferencePointTable build_reference_table(const BevGrid& grid,
                                          std::span<const camera::FisheyeCamera> cameras) {
    return ReferencePointTable(grid, cameras);
}

namespace {

// Snaps coordinates that sit within rounding noise of the grid boundary.
double snap_to_range(double v, double hi) {
    constexpr double tol = 1e-9;
    if (v < 0.0 && v > -tol) return 0.0;
    if (v > hi && v < hi + tol) return hi;
    return v;
}

}  // namespace

template <typename T>
AlignedFeatures<T> align_previous(std::span<const T> previous, int d, const EgoMotion& motion,
                                  const BevGrid& grid) {
    const int h = grid.h();
    const int w = grid.w();
    if (d <= 0 || previous.size() != static_cast<std::size_t>(h) * w * d) {
        throw ShapeError("align_previous: previous features do not match the grid");
    }
    motion.validate();
    const double yaw = motion.yaw();
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    const double tx = motion.translation.x() / grid.cell_size();
    const double ty = motion.translation.y() / grid.cell_size();
    const double half_w = w / 2.0;
    const double half_h = h / 2.0;

    AlignedFeatures<T> out;
    out.features.assign(previous.size(), T(0));
    out.valid.assign(static_cast<std::size_t>(h) * w, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // Everything in cell units: X = x_r / l.
            const double xr = x - half_w;
            const double yr = y - half_h;
            double px = c * xr - s * yr + tx + half_w;
            double py = s * xr + c * yr + ty + half_h;
            px = snap_to_range(px, w - 1);
            py = snap_to_range(py, h - 1);
            if (!(px >= 0.0 && px <= w - 1 && py >= 0.0 && py <= h - 1)) continue;
            const int x0 = static_cast<int>(std::floor(px));
            const int y0 = static_cast<int>(std::floor(py));
            const double fx = px - x0;
            const double fy = py - y0;
            const std::size_t dst = (static_cast<std::size_t>(y) * w + x) * d;
            const struct {
                int cx, cy;
                double weight;
            } corners[4] = {{x0, y0, (1 - fx) * (1 - fy)},
                            {x0 + 1, y0, fx * (1 - fy)},
                            {x0, y0 + 1, (1 - fx) * fy},
                            {x0 + 1, y0 + 1, fx * fy}};
            for (const auto& k : corners) {
                if (k.weight == 0.0) continue;
                const std::size_t src = (static_cast<std::size_t>(k.cy) * w + k.cx) * d;
                const T wk = static_cast<T>(k.weight);
                for (int ch = 0; ch < d; ++ch) out.features[dst + ch] += wk * previous[src + ch];
            }
            out.valid[static_cast<std::size_t>(y) * w + x] = 1;
        }
    }
    return out;
}

template AlignedFeatures<float> align_previous<float>(std::span<const float>, int,
                                                      const EgoMotion&, const BevGrid&);
template AlignedFeatures<double> align_previous<double>(std::span<const double>, int,
                                                        const EgoMotion&, const BevGrid&);

}  // namespace f2bev::bev
