#pragma once

#include "f2bev/camera.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

namespace f2bev::bev {

// Rigid transform mapping ego-frame points into the world frame.
struct Pose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static Pose planar(double yaw, double x, double y);

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
    Pose inverse() const;
    // (*this) after other: x -> this(other(x)).
    Pose operator*(const Pose& other) const;
    double yaw() const;
};

// Pose change between consecutive frames: maps points expressed in the ego
// frame at t into the ego frame at t-1.
struct EgoMotion {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static EgoMotion identity() { return {}; }
    static EgoMotion between(const Pose& previous, const Pose& current);

    // Motion across two steps: `earlier` maps t-1 -> t-2, `later` maps t -> t-1;
    // the result maps t -> t-2.
    static EgoMotion chain(const EgoMotion& earlier, const EgoMotion& later);

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
    double yaw() const;
    void validate() const;
};

struct WorldXY {
    double x = 0.0;
    double y = 0.0;
};

// Square-celled BEV lattice centered on the ego car. Cell (x, y) has flat
// index y * w + x and sits at ((x - w/2) l, (y - h/2) l) in the ego frame.
class BevGrid {
public:
    BevGrid(int h, int w, double cell_size, std::vector<double> anchors, int feature_dim = 0);

    // Paper-scale defaults: 50 x 50 cells of 0.33 m, anchors 0 / 0.25 / 1.8 m.
    static BevGrid paper_default(int feature_dim = 0);

    int h() const { return h_; }
    int w() const { return w_; }
    double cell_size() const { return l_; }
    const std::vector<double>& anchors() const { return anchors_; }
    int n_anchors() const { return static_cast<int>(anchors_.size()); }
    int feature_dim() const { return d_; }
    int n_cells() const { return h_ * w_; }
    int index(int x, int y) const { return y * w_ + x; }

    WorldXY cell_to_world(int x, int y) const;
    // Fractional cell coordinates, used for supersampled rasters.
    WorldXY cell_to_world(double x, double y) const;
    std::vector<Eigen::Vector3d> anchor_points(int x, int y) const;

    bool operator==(const BevGrid&) const = default;

private:
    int h_;
    int w_;
    double l_;
    std::vector<double> anchors_;
    int d_;
};

struct ReferenceEntry {
    double u = 0.0;
    double v = 0.0;
    bool valid = false;
};

// Per cell, anchor and camera projection of the cell's reference points,
// plus the set of cameras with at least one valid projection per cell.
class ReferencePointTable {
public:
    ReferencePointTable(const BevGrid& grid, std::span<const camera::FisheyeCamera> cameras);

    const BevGrid& grid() const { return grid_; }
    int n_cameras() const { return n_cam_; }
    const ReferenceEntry& entry(int cell, int anchor, int cam) const {
        return entries_[(static_cast<std::size_t>(cell) * grid_.n_anchors() + anchor) * n_cam_ + cam];
    }
    std::span<const int> valid_views(int cell) const;

    // Rows for the CSV dump: cell_x, cell_y, anchor_index, camera_index, u, v, valid.
    void write_csv(std::ostream& out) const;

private:
    BevGrid grid_;
    int n_cam_;
    std::vector<ReferenceEntry> entries_;
    std::vector<int> view_offsets_;
    std::vector<int> views_;
};

ReferencePointTable build_reference_table(const BevGrid& grid,
                                          std::span<const camera::FisheyeCamera> cameras);

template <typename T>
struct AlignedFeatures {
    std::vector<T> features;             // [h*w, d]
    std::vector<std::uint8_t> valid;     // [h*w], 0 where history fell outside the grid
};

// Resamples previous-frame BEV features [h*w, d] into the current ego frame.
// Motion is reduced to yaw plus planar translation; samples outside the
// previous grid are zero and flagged invalid.
template <typename T>
AlignedFeatures<T> align_previous(std::span<const T> previous, int d, const EgoMotion& motion,
                                  const BevGrid& grid);

}  // namespace f2bev::bev
