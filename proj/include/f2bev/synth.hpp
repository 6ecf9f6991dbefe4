#pragma once

#include "f2bev/bev_geometry.hpp"
#include "f2bev/camera.hpp"
#include "f2bev/error.hpp"
#include "f2bev/image_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace f2bev::synth {

// Segmentation classes (BEV and image).
inline constexpr std::uint8_t kGround = 0;
inline constexpr std::uint8_t kCar = 1;
inline constexpr std::uint8_t kBus = 2;
inline constexpr std::uint8_t kEvCharger = 3;
inline constexpr std::uint8_t kNonDriveable = 4;
// Image-only classes.
inline constexpr std::uint8_t kSky = 5;
inline constexpr std::uint8_t kVoid = 6;  // masked pixels (ego body, lens rim)
inline constexpr int kImageClasses = 7;

// Height classes.
inline constexpr std::uint8_t kBelowCar = 0;
inline constexpr std::uint8_t kAtCar = 1;
inline constexpr std::uint8_t kAboveCar = 2;

using Rgb = std::array<std::uint8_t, 3>;
Rgb palette(std::uint8_t image_class);

class PlacementFailure : public Error {
public:
    using Error::Error;
};

class PathFailure : public Error {
public:
    using Error::Error;
};

// Axis-aligned box standing on the ground, world frame.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double sx = 1.0;
    double sy = 1.0;
    double height = 1.0;
    std::uint8_t cls = kCar;

    bool contains_xy(double x, double y) const {
        return std::abs(x - cx) <= 0.5 * sx && std::abs(y - cy) <= 0.5 * sy;
    }
    bool operator==(const Box&) const = default;
};

struct EgoBody {
    double length = 4.5;
    double width = 1.9;
    double height = 1.5;
    bool operator==(const EgoBody&) const = default;
};

struct HeightBand {
    double z_lo = 0.25;
    double z_hi = 1.8;
    bool operator==(const HeightBand&) const = default;
};

struct Scene {
    double extent = 30.0;  // ground square [-extent/2, extent/2]^2
    std::vector<Box> boxes;
    bev::Pose ego_pose;    // spawn pose
    EgoBody ego;
    HeightBand band;

    bool operator==(const Scene& other) const;
};

struct SceneConfig {
    double extent = 30.0;
    int n_cars = 12;
    int n_buses = 1;
    int n_chargers = 2;
    int n_planters = 2;        // low non-driveable islands
    bool boundary_containers = true;
    double aisle_half_width = 2.5;  // drive corridor |y| < aisle_half_width kept free
    double gap = 0.3;               // minimum clearance between boxes
};

// Deterministic per seed. Throws PlacementFailure when a box cannot be placed
// within 10,000 rejected samples.
Scene build_scene(std::uint64_t seed, const SceneConfig& config);

// True when the boxes' footprints overlap (touching counts as overlap when
// the clearance is positive).
bool boxes_overlap(const Box& a, const Box& b, double clearance = 0.0);

struct RigConfig {
    int image_size = 128;
    double max_angle_deg = 95.0;  // rays further from the optical axis are masked
};

// Four outward cameras (front, left, rear, right) on the ego body, extrinsics
// mapping ego coordinates into the camera frames. Masks exclude the ego body
// and the rim beyond max_angle_deg.
std::vector<camera::FisheyeCamera> default_rig(const RigConfig& config, const EgoBody& ego = {});

struct Hit {
    double distance = 0.0;
    std::uint8_t cls = kSky;
    int box = -1;  // index into scene.boxes, -1 for ground or sky
};

// Nearest intersection of a world-frame ray with ground and boxes.
Hit cast_ray(const Scene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& direction);

struct RenderedView {
    Image8 semantic;  // 1 channel, image classes
    Image8 rgb;       // palette shaded by hit distance
};

// Renders one camera of the rig mounted on the ego at `ego_pose`.
RenderedView render_view(const Scene& scene, const camera::FisheyeCamera& cam, const bev::Pose& ego_pose);

struct BevMaps {
    Image8 segmentation;  // 5 classes
    Image8 height;        // 3 classes
};

// Top-down truth sampled at `scale` points per cell side: sample (X, Y) sits
// at the center of its sub-cell, cell coordinates ((X + 0.5) / scale - 0.5,
// (Y + 0.5) / scale - 0.5), matching bilinear 2x upsampling geometry. scale = 1
// samples each cell at its own cell_to_world location.
BevMaps ground_truth_bev(const Scene& scene, const bev::BevGrid& grid, const bev::Pose& ego_pose, int scale = 1);

struct FrameRecord {
    int index = 0;
    bev::Pose pose;  // ego -> world
    std::vector<Image8> rgb;
    std::vector<Image8> semantic;
    BevMaps bev;
};

struct SequenceConfig {
    int n_frames = 16;
    double speed = 0.35;  // m/s
    double dt = 0.5;      // s
    int bev_scale = 8;
    double max_turn_rate = 0.15;  // rad/s
};

struct Sequence {
    std::uint64_t seed = 0;
    Scene scene;
    bev::BevGrid grid;
    std::vector<camera::FisheyeCamera> cameras;
    SequenceConfig config;
    std::vector<FrameRecord> frames;
};

// Ego drives along the aisle with gentle seeded turns while keeping clear of
// all boxes; the path is resampled up to 10 times before PathFailure.
std::vector<bev::Pose> plan_path(const Scene& scene, std::uint64_t seed, const SequenceConfig& config);

Sequence generate_sequence(std::uint64_t seed, const SceneConfig& scene_config,
                           const SequenceConfig& sequence_config, const bev::BevGrid& grid,
                           const std::vector<camera::FisheyeCamera>& cameras);

// Dataset layout:
//   seq_<id>/meta.txt
//   seq_<id>/calib/cam<i>.txt, cam<i>_mask.pgm
//   seq_<id>/frame_<05d>/cam<i>.ppm, cam<i>_seg.pgm, bev_seg.pgm, bev_height.pgm, ego.txt
std::filesystem::path sequence_dir(const std::filesystem::path& root, int id);
void write_sequence(const std::filesystem::path& root, int id, const Sequence& sequence);

struct LoadedFrame {
    int index = 0;
    bev::Pose pose;
    std::vector<Image8> rgb;
    BevMaps bev;
};

struct LoadedSequence {
    std::filesystem::path dir;
    bev::BevGrid grid;
    int bev_scale = 1;
    std::vector<camera::FisheyeCamera> cameras;
    std::vector<LoadedFrame> frames;
};

LoadedSequence load_sequence(const std::filesystem::path& dir);
// All seq_* directories under root, in id order.
std::vector<std::filesystem::path> list_sequences(const std::filesystem::path& root);

void write_pose(const std::filesystem::path& path, const bev::Pose& pose);
bev::Pose read_pose(const std::filesystem::path& path);

struct ConsistencyStats {
    std::size_t cells = 0;    // unoccluded box-class cells
    std::size_t matched = 0;  // of those, projecting onto a same-class pixel
    double ratio() const { return cells == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(cells); }
};

// For every BEV cell whose truth is a box class, projects the cell point at
// the box's mid-height into each camera where that box is the first thing
// the camera ray hits, and checks the rendered class there.
ConsistencyStats geometric_consistency(const Scene& scene, const bev::BevGrid& grid, const bev::Pose& ego_pose,
                                       const std::vector<camera::FisheyeCamera>& cameras,
                                       const std::vector<Image8>& semantic);

}  // namespace f2bev::synth
