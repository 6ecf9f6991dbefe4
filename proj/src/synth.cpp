#include "f2bev/synth.hpp"

#include "f2bev/keyvalue.hpp"
#include "f2bev/parallel.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace f2bev::synth {
namespace {

constexpr int kMaxPlacementTries = 10000;
constexpr int kMaxPathAttempts = 10;

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::string format_double(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

std::string join(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ", ";
        out += format_double(values[i]);
    }
    return out;
}

// Slab test of a ray against an axis-aligned box; returns the entry distance.
std::optional<double> ray_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& lo,
                              const Eigen::Vector3d& hi) {
    double t0 = 0.0;
    double t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
            if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
            continue;
        }
        double ta = (lo[a] - o[a]) / d[a];
        double tb = (hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
    }
    return t0;
}

// Oriented ego footprint against an axis-aligned box (separating axes).
bool footprint_hits(const bev::Pose& pose, const EgoBody& ego, const Box& box, double clearance) {
    const double yaw = pose.yaw();
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    const double hl = 0.5 * ego.length + clearance;
    const double hw = 0.5 * ego.width + clearance;
    const Eigen::Vector2d center(pose.translation.x(), pose.translation.y());
    const Eigen::Vector2d ax(c, s);
    const Eigen::Vector2d ay(-s, c);
    const Eigen::Vector2d bc(box.cx, box.cy);
    const double bx = 0.5 * box.sx;
    const double by = 0.5 * box.sy;
    const Eigen::Vector2d delta = bc - center;
    const Eigen::Vector2d axes[4] = {{1, 0}, {0, 1}, ax, ay};
    for (const auto& n : axes) {
        const double r_ego = hl * std::abs(ax.dot(n)) + hw * std::abs(ay.dot(n));
        const double r_box = bx * std::abs(n.x()) + by * std::abs(n.y());
        if (std::abs(delta.dot(n)) > r_ego + r_box) return false;
    }
    return true;
}

Eigen::Matrix3d camera_rotation(double yaw, double pitch) {
    const Eigen::Vector3d zc(std::cos(yaw) * std::cos(pitch), std::sin(yaw) * std::cos(pitch), -std::sin(pitch));
    const Eigen::Vector3d xc(std::sin(yaw), -std::cos(yaw), 0.0);
    const Eigen::Vector3d yc = zc.cross(xc);
    Eigen::Matrix3d r;
    r.row(0) = xc;
    r.row(1) = yc;
    r.row(2) = zc;
    return r;
}

Rgb shade(const Rgb& base, double factor) {
    Rgb out;
    for (int i = 0; i < 3; ++i) out[i] = static_cast<std::uint8_t>(std::lround(base[i] * factor));
    return out;
}

std::string frame_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05d", index);
    return buf;
}

}  // namespace

Rgb palette(std::uint8_t image_class) {
    switch (image_class) {
        case kGround: return {110, 110, 110};
        case kCar: return {220, 40, 40};
        case kBus: return {240, 200, 30};
        case kEvCharger: return {40, 200, 60};
        case kNonDriveable: return {60, 90, 230};
        case kSky: return {150, 210, 250};
        default: return {0, 0, 0};
    }
}

bool Scene::operator==(const Scene& other) const {
    return extent == other.extent && boxes == other.boxes && ego_pose.rotation == other.ego_pose.rotation &&
           ego_pose.translation == other.ego_pose.translation && ego == other.ego && band == other.band;
}

bool boxes_overlap(const Box& a, const Box& b, double clearance) {
    return std::abs(a.cx - b.cx) < 0.5 * (a.sx + b.sx) + clearance &&
           std::abs(a.cy - b.cy) < 0.5 * (a.sy + b.sy) + clearance;
}

Scene build_scene(std::uint64_t seed, const SceneConfig& config) {
    if (!(config.extent > 0.0) || config.n_cars < 0 || config.n_buses < 0 || config.n_chargers < 0 ||
        config.n_planters < 0) {
        throw PreconditionError("scene config: invalid counts or extent");
    }
    std::mt19937_64 rng(seed);
    Scene scene;
    scene.extent = config.extent;
    scene.ego_pose = bev::Pose::planar(0.0, -1.5, 0.0);
    const double half = 0.5 * config.extent;
    constexpr double kDepth = 2.5;
    constexpr double kLength = 6.0;
    constexpr double kSpacing = 0.5;

    if (config.boundary_containers) {
        auto tile = [&](bool along_x, double fixed) {
            const double lo = -half + (along_x ? 0.0 : kDepth + kSpacing);
            const double hi = half - (along_x ? 0.0 : kDepth + kSpacing);
            const int n = static_cast<int>(std::floor((hi - lo + kSpacing) / (kLength + kSpacing)));
            const double used = n * kLength + (n - 1) * kSpacing;
            double pos = lo + 0.5 * (hi - lo - used) + 0.5 * kLength;
            for (int i = 0; i < n; ++i, pos += kLength + kSpacing) {
                Box b;
                b.cls = kNonDriveable;
                b.height = uniform(rng, 2.5, 3.5);
                if (along_x) {
                    b.cx = pos;
                    b.cy = fixed;
                    b.sx = kLength;
                    b.sy = kDepth;
                } else {
                    b.cx = fixed;
                    b.cy = pos;
                    b.sx = kDepth;
                    b.sy = kLength;
                }
                scene.boxes.push_back(b);
            }
        };
        tile(true, -half + 0.5 * kDepth);
        tile(true, half - 0.5 * kDepth);
        tile(false, -half + 0.5 * kDepth);
        tile(false, half - 0.5 * kDepth);
    }
    const double inner = half - (config.boundary_containers ? kDepth + config.gap : 0.0);

    auto place = [&](std::uint8_t cls, double len_lo, double len_hi, double wid_lo, double wid_hi, double h_lo,
                     double h_hi) {
        for (int tries = 0; tries < kMaxPlacementTries; ++tries) {
            Box b;
            b.cls = cls;
            const double len = uniform(rng, len_lo, len_hi);
            const double wid = uniform(rng, wid_lo, wid_hi);
            b.height = uniform(rng, h_lo, h_hi);
            const bool rotated = uniform(rng, 0.0, 1.0) < 0.5;
            b.sx = rotated ? wid : len;
            b.sy = rotated ? len : wid;
            const double mx = inner - 0.5 * b.sx;
            const double my = inner - 0.5 * b.sy;
            if (mx <= 0.0 || my <= 0.0) continue;
            b.cx = uniform(rng, -mx, mx);
            b.cy = uniform(rng, -my, my);
            if (std::abs(b.cy) - 0.5 * b.sy < config.aisle_half_width) continue;
            bool clear = true;
            for (const auto& other : scene.boxes) {
                if (boxes_overlap(b, other, config.gap)) {
                    clear = false;
                    break;
                }
            }
            if (!clear) continue;
            scene.boxes.push_back(b);
            return;
        }
        throw PlacementFailure("build_scene: could not place box after " + std::to_string(kMaxPlacementTries) +
                               " attempts");
    };
    for (int i = 0; i < config.n_buses; ++i) place(kBus, 9.0, 11.0, 2.4, 2.6, 2.9, 3.3);
    for (int i = 0; i < config.n_cars; ++i) place(kCar, 4.2, 4.8, 1.75, 1.95, 1.4, 1.7);
    for (int i = 0; i < config.n_chargers; ++i) place(kEvCharger, 0.5, 0.7, 0.4, 0.6, 1.2, 1.5);
    for (int i = 0; i < config.n_planters; ++i) place(kNonDriveable, 1.5, 3.0, 1.5, 3.0, 0.1, 0.2);
    return scene;
}

std::vector<camera::FisheyeCamera> default_rig(const RigConfig& config, const EgoBody& ego) {
    if (config.image_size < 16 || config.image_size % 16 != 0) {
        throw PreconditionError("rig: image size must be a positive multiple of 16");
    }
    const double size = config.image_size;
    camera::Intrinsics in;
    in.gamma1 = 55.0 * size / 128.0;
    in.gamma2 = in.gamma1;
    in.alpha = 0.0;
    in.c1 = 0.5 * size;
    in.c2 = 0.5 * size;
    in.xi = 1.0;
    const camera::Distortion k{-0.02, 0.003, 0.0005, -0.0005};
    const double deg = std::numbers::pi / 180.0;
    struct Mount {
        Eigen::Vector3d center;
        double yaw;
        double pitch;
    };
    const double hl = 0.5 * ego.length + 0.05;
    const double hw = 0.5 * ego.width + 0.05;
    const Mount mounts[4] = {
        {{hl, 0.0, 0.7}, 0.0, 25.0 * deg},
        {{0.5, hw, 1.0}, 90.0 * deg, 40.0 * deg},
        {{-hl, 0.0, 0.9}, 180.0 * deg, 25.0 * deg},
        {{0.5, -hw, 1.0}, -90.0 * deg, 40.0 * deg},
    };
    const double max_angle = config.max_angle_deg * deg;
    const Eigen::Vector3d body_lo(-0.5 * ego.length, -0.5 * ego.width, 0.0);
    const Eigen::Vector3d body_hi(0.5 * ego.length, 0.5 * ego.width, ego.height);

    std::vector<camera::FisheyeCamera> rig;
    for (const auto& m : mounts) {
        const Eigen::Matrix3d r = camera_rotation(m.yaw, m.pitch);
        const Eigen::Vector3d t = -r * m.center;
        const camera::FisheyeCamera bare(in, k, config.image_size, config.image_size, r, t);
        camera::ValidMask mask(config.image_size, config.image_size, false);
        for (int y = 0; y < config.image_size; ++y) {
            for (int x = 0; x < config.image_size; ++x) {
                Eigen::Vector3d s;
                try {
                    s = bare.unproject(x + 0.5, y + 0.5);
                } catch (const Error&) {
                    continue;
                }
                if (std::acos(std::clamp(s.z(), -1.0, 1.0)) > max_angle) continue;
                const Eigen::Vector3d dir = r.transpose() * s;
                if (ray_box(m.center, dir, body_lo, body_hi)) continue;
                mask.set(x, y, true);
            }
        }
        rig.push_back(bare.with_mask(std::move(mask)));
    }
    return rig;
}

Hit cast_ray(const Scene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& direction) {
    Hit hit;
    hit.distance = std::numeric_limits<double>::infinity();
    if (direction.z() < -1e-12) {
        const double t = -origin.z() / direction.z();
        if (t > 0.0) {
            hit.distance = t;
            hit.cls = kGround;
        }
    }
    for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
        const Box& b = scene.boxes[i];
        const Eigen::Vector3d lo(b.cx - 0.5 * b.sx, b.cy - 0.5 * b.sy, 0.0);
        const Eigen::Vector3d hi(b.cx + 0.5 * b.sx, b.cy + 0.5 * b.sy, b.height);
        const auto t = ray_box(origin, direction, lo, hi);
        if (t && *t < hit.distance) {
            hit.distance = *t;
            hit.cls = b.cls;
            hit.box = static_cast<int>(i);
        }
    }
    return hit;
}

RenderedView render_view(const Scene& scene, const camera::FisheyeCamera& cam, const bev::Pose& ego_pose) {
    const int w = cam.width();
    const int h = cam.height();
    RenderedView view{Image8(w, h, 1, kVoid), Image8(w, h, 3, 0)};
    const Eigen::Vector3d origin = ego_pose.apply(cam.center());
    const Eigen::Matrix3d to_world = ego_pose.rotation * cam.rotation().transpose();
    parallel_for(static_cast<std::size_t>(h), [&](std::size_t begin, std::size_t end) {
        for (std::size_t yy = begin; yy < end; ++yy) {
            const int y = static_cast<int>(yy);
            for (int x = 0; x < w; ++x) {
                if (!cam.mask().at(x, y)) continue;
                Eigen::Vector3d s;
                try {
                    s = cam.unproject(x + 0.5, y + 0.5);
                } catch (const Error&) {
                    continue;
                }
                const Hit hit = cast_ray(scene, origin, to_world * s);
                view.semantic.at(x, y) = hit.cls;
                const double factor =
                    hit.cls == kSky ? 1.0 : std::clamp(1.0 - hit.distance / 40.0, 0.4, 1.0);
                const Rgb c = shade(palette(hit.cls), factor);
                for (int ch = 0; ch < 3; ++ch) view.rgb.at(x, y, ch) = c[static_cast<std::size_t>(ch)];
            }
        }
    });
    return view;
}

BevMaps ground_truth_bev(const Scene& scene, const bev::BevGrid& grid, const bev::Pose& ego_pose, int scale) {
    if (scale < 1) throw PreconditionError("ground_truth_bev: scale must be >= 1");
    const int w = grid.w() * scale;
    const int h = grid.h() * scale;
    BevMaps maps{Image8(w, h, 1, kGround), Image8(w, h, 1, kBelowCar)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto e = grid.cell_to_world((x + 0.5) / scale - 0.5, (y + 0.5) / scale - 0.5);
            if (std::abs(e.x) <= 0.5 * scene.ego.length && std::abs(e.y) <= 0.5 * scene.ego.width) {
                maps.segmentation.at(x, y) = kCar;
                maps.height.at(x, y) = kAtCar;
                continue;
            }
            const Eigen::Vector3d p = ego_pose.apply(Eigen::Vector3d(e.x, e.y, 0.0));
            const Box* tallest = nullptr;
            for (const auto& b : scene.boxes) {
                if (b.contains_xy(p.x(), p.y()) && (tallest == nullptr || b.height > tallest->height)) tallest = &b;
            }
            if (tallest == nullptr) continue;
            maps.segmentation.at(x, y) = tallest->cls;
            if (tallest->height < scene.band.z_lo) {
                maps.height.at(x, y) = kBelowCar;
            } else if (tallest->height <= scene.band.z_hi) {
                maps.height.at(x, y) = kAtCar;
            } else {
                maps.height.at(x, y) = kAboveCar;
            }
        }
    }
    return maps;
}

std::vector<bev::Pose> plan_path(const Scene& scene, std::uint64_t seed, const SequenceConfig& config) {
    if (config.n_frames < 1) throw PreconditionError("plan_path: n_frames must be >= 1");
    const double step = config.speed * config.dt;
    const double limit = 0.5 * scene.extent;
    for (int attempt = 0; attempt < kMaxPathAttempts; ++attempt) {
        std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(attempt) + 1);
        std::vector<bev::Pose> poses{scene.ego_pose};
        double yaw = scene.ego_pose.yaw();
        double x = scene.ego_pose.translation.x();
        double y = scene.ego_pose.translation.y();
        double rate = 0.0;
        bool ok = true;
        for (int f = 1; f < config.n_frames && ok; ++f) {
            if ((f - 1) % 4 == 0) {
                rate = uniform(rng, 0.0, 1.0) < 0.5 ? 0.0 : uniform(rng, -config.max_turn_rate, config.max_turn_rate);
            }
            const double mid = yaw + 0.5 * rate * config.dt;
            x += step * std::cos(mid);
            y += step * std::sin(mid);
            yaw += rate * config.dt;
            const bev::Pose pose = bev::Pose::planar(yaw, x, y);
            if (std::abs(x) > limit || std::abs(y) > limit) ok = false;
            for (const auto& b : scene.boxes) {
                if (ok && footprint_hits(pose, scene.ego, b, 0.1)) ok = false;
            }
            poses.push_back(pose);
        }
        if (ok) return poses;
    }
    throw PathFailure("plan_path: no collision-free path after " + std::to_string(kMaxPathAttempts) + " attempts");
}

Sequence generate_sequence(std::uint64_t seed, const SceneConfig& scene_config,
                           const SequenceConfig& sequence_config, const bev::BevGrid& grid,
                           const std::vector<camera::FisheyeCamera>& cameras) {
    if (cameras.empty()) throw PreconditionError("generate_sequence: no cameras");
    Sequence seq{seed, build_scene(seed, scene_config), grid, cameras, sequence_config, {}};
    const auto poses = plan_path(seq.scene, seed, sequence_config);
    for (int f = 0; f < sequence_config.n_frames; ++f) {
        FrameRecord rec;
        rec.index = f;
        rec.pose = poses[static_cast<std::size_t>(f)];
        for (const auto& cam : cameras) {
            auto view = render_view(seq.scene, cam, rec.pose);
            rec.rgb.push_back(std::move(view.rgb));
            rec.semantic.push_back(std::move(view.semantic));
        }
        rec.bev = ground_truth_bev(seq.scene, grid, rec.pose, sequence_config.bev_scale);
        seq.frames.push_back(std::move(rec));
    }
    return seq;
}

std::filesystem::path sequence_dir(const std::filesystem::path& root, int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "seq_%03d", id);
    return root / buf;
}

void write_pose(const std::filesystem::path& path, const bev::Pose& pose) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) out << pose.rotation(r, c) << (r == 2 && c == 2 ? '\n' : ' ');
    }
    out << pose.translation.x() << ' ' << pose.translation.y() << ' ' << pose.translation.z() << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

bev::Pose read_pose(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream text;
    text << in.rdbuf();
    const auto v = parse_number_list(text.str());
    if (v.size() != 12) throw ParseError(path.string() + ": expected 12 numbers, got " + std::to_string(v.size()));
    bev::Pose pose;
    for (int i = 0; i < 9; ++i) pose.rotation(i / 3, i % 3) = v[static_cast<std::size_t>(i)];
    pose.translation = Eigen::Vector3d(v[9], v[10], v[11]);
    return pose;
}

void write_sequence(const std::filesystem::path& root, int id, const Sequence& sequence) {
    namespace fs = std::filesystem;
    const fs::path dir = sequence_dir(root, id);
    fs::create_directories(dir / "calib");
    for (std::size_t i = 0; i < sequence.cameras.size(); ++i) {
        const std::string name = "cam" + std::to_string(i);
        sequence.cameras[i].save(dir / "calib" / (name + ".txt"), name + "_mask.pgm");
    }
    KeyValueFile meta;
    meta.set("seed", std::to_string(sequence.seed));
    meta.set("frames", std::to_string(sequence.frames.size()));
    meta.set("cameras", std::to_string(sequence.cameras.size()));
    meta.set("grid_h", std::to_string(sequence.grid.h()));
    meta.set("grid_w", std::to_string(sequence.grid.w()));
    meta.set("cell", format_double(sequence.grid.cell_size()));
    meta.set("anchors", join(sequence.grid.anchors()));
    meta.set("bev_scale", std::to_string(sequence.config.bev_scale));
    meta.set("speed", format_double(sequence.config.speed));
    meta.set("dt", format_double(sequence.config.dt));
    meta.set("band", join({sequence.scene.band.z_lo, sequence.scene.band.z_hi}));
    meta.set("boxes", std::to_string(sequence.scene.boxes.size()));
    meta.save(dir / "meta.txt");
    for (const auto& f : sequence.frames) {
        const fs::path fdir = dir / frame_name(f.index);
        fs::create_directories(fdir);
        for (std::size_t i = 0; i < f.rgb.size(); ++i) {
            const std::string name = "cam" + std::to_string(i);
            write_ppm(fdir / (name + ".ppm"), f.rgb[i]);
            write_pgm(fdir / (name + "_seg.pgm"), f.semantic[i]);
        }
        write_pgm(fdir / "bev_seg.pgm", f.bev.segmentation);
        write_pgm(fdir / "bev_height.pgm", f.bev.height);
        write_pose(fdir / "ego.txt", f.pose);
    }
}

LoadedSequence load_sequence(const std::filesystem::path& dir) {
    const KeyValueFile meta = KeyValueFile::load(dir / "meta.txt");
    LoadedSequence seq{dir,
                       bev::BevGrid(meta.integer("grid_h"), meta.integer("grid_w"), meta.number("cell"),
                                    meta.numbers("anchors")),
                       meta.integer_or("bev_scale", 1),
                       {},
                       {}};
    if (seq.bev_scale < 1) throw ParseError(dir.string() + ": bev_scale must be >= 1");
    const int n_cam = meta.integer_or("cameras", 4);
    for (int i = 0; i < n_cam; ++i) {
        seq.cameras.push_back(camera::FisheyeCamera::load(dir / "calib" / ("cam" + std::to_string(i) + ".txt")));
    }
    const int n_frames = meta.integer("frames");
    for (int f = 0; f < n_frames; ++f) {
        const auto fdir = dir / frame_name(f);
        if (!std::filesystem::is_directory(fdir)) throw IoError("missing frame directory " + fdir.string());
        LoadedFrame frame;
        frame.index = f;
        frame.pose = read_pose(fdir / "ego.txt");
        for (int i = 0; i < n_cam; ++i) {
            Image8 img = read_ppm(fdir / ("cam" + std::to_string(i) + ".ppm"));
            const auto& cam = seq.cameras[static_cast<std::size_t>(i)];
            if (img.width != cam.width() || img.height != cam.height()) {
                throw ShapeError(fdir.string() + ": image size does not match calibration");
            }
            frame.rgb.push_back(std::move(img));
        }
        frame.bev.segmentation = read_pgm(fdir / "bev_seg.pgm");
        frame.bev.height = read_pgm(fdir / "bev_height.pgm");
        const int bw = seq.grid.w() * seq.bev_scale;
        const int bh = seq.grid.h() * seq.bev_scale;
        for (const Image8* m : {&frame.bev.segmentation, &frame.bev.height}) {
            if (m->width != bw || m->height != bh) throw ShapeError(fdir.string() + ": BEV map size mismatch");
        }
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

std::vector<std::filesystem::path> list_sequences(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
    std::vector<std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        const auto name = entry.path().filename().string();
        if (entry.is_directory() && name.rfind("seq_", 0) == 0) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw IoError("no seq_* directories in " + root.string());
    return out;
}

ConsistencyStats geometric_consistency(const Scene& scene, const bev::BevGrid& grid, const bev::Pose& ego_pose,
                                       const std::vector<camera::FisheyeCamera>& cameras,
                                       const std::vector<Image8>& semantic) {
    if (semantic.size() != cameras.size()) throw ShapeError("geometric_consistency: one image per camera");
    ConsistencyStats stats;
    for (int y = 0; y < grid.h(); ++y) {
        for (int x = 0; x < grid.w(); ++x) {
            const auto e = grid.cell_to_world(x, y);
            if (std::abs(e.x) <= 0.5 * scene.ego.length && std::abs(e.y) <= 0.5 * scene.ego.width) continue;
            const Eigen::Vector3d ground = ego_pose.apply(Eigen::Vector3d(e.x, e.y, 0.0));
            int owner = -1;
            for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
                const auto& b = scene.boxes[i];
                if (b.contains_xy(ground.x(), ground.y()) &&
                    (owner < 0 || b.height > scene.boxes[static_cast<std::size_t>(owner)].height)) {
                    owner = static_cast<int>(i);
                }
            }
            if (owner < 0) continue;
            const Box& box = scene.boxes[static_cast<std::size_t>(owner)];
            const Eigen::Vector3d anchor(e.x, e.y, 0.5 * box.height);
            const Eigen::Vector3d anchor_world = ego_pose.apply(anchor);
            bool visible = false;
            bool matched = false;
            for (std::size_t i = 0; i < cameras.size(); ++i) {
                const auto proj = cameras[i].project(anchor);
                if (!proj.valid) continue;
                const Eigen::Vector3d origin = ego_pose.apply(cameras[i].center());
                const Hit hit = cast_ray(scene, origin, (anchor_world - origin).normalized());
                if (hit.box != owner) continue;
                visible = true;
                const int px = static_cast<int>(std::floor(proj.u));
                const int py = static_cast<int>(std::floor(proj.v));
                if (semantic[i].at(px, py) == box.cls) matched = true;
            }
            if (visible) {
                ++stats.cells;
                if (matched) ++stats.matched;
            }
        }
    }
    return stats;
}

}  // namespace f2bev::synth
