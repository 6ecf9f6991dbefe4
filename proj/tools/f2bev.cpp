#include "f2bev/camera.hpp"
#include "f2bev/pipeline.hpp"
#include "f2bev/synth.hpp"
#include "f2bev/verify.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace f2bev;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct GridFlags {
    int grid = 50;
    double cell = 0.33;
    std::vector<double> anchors{0.0, 0.25, 1.8};

    void add(CLI::App* app) {
        app->add_option("--grid", grid, "BEV grid side (cells)")->capture_default_str()->check(CLI::PositiveNumber);
        app->add_option("--cell", cell, "BEV cell size in meters")->capture_default_str()->check(CLI::PositiveNumber);
        app->add_option("--anchors", anchors, "Anchor heights in meters, comma separated")
            ->delimiter(',')
            ->capture_default_str();
    }
    bev::BevGrid make() const { return bev::BevGrid(grid, grid, cell, anchors); }
};

// ---------------------------------------------------------------- render

struct RenderArgs {
    std::uint64_t seed = 1;
    int sequences = 1;
    fs::path out;
    GridFlags grid;
    synth::RigConfig rig;
    synth::SceneConfig scene;
    synth::SequenceConfig sequence;
};

int run_render(const RenderArgs& a) {
    const auto cameras = synth::default_rig(a.rig);
    const auto grid = a.grid.make();
    for (int i = 0; i < a.sequences; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(i);
        const auto seq = synth::generate_sequence(seed, a.scene, a.sequence, grid, cameras);
        synth::write_sequence(a.out, i, seq);
        std::printf("%s: %zu frames, %zu boxes, seed %llu (%.1f s)\n", synth::sequence_dir(a.out, i).string().c_str(),
                    seq.frames.size(), seq.scene.boxes.size(), static_cast<unsigned long long>(seed), seconds_since(t0));
    }
    return 0;
}

// ---------------------------------------------------------------- calib-check

struct CalibArgs {
    std::vector<fs::path> calib;
    std::size_t samples = 10000;
    std::uint64_t seed = 1;
    double max_pixel_error = 1e-6;
    double max_ray_error = 1e-12;
};

int run_calib_check(const CalibArgs& a) {
    bool ok = true;
    for (const auto& path : a.calib) {
        const auto cam = camera::FisheyeCamera::load(path);
        const auto t0 = std::chrono::steady_clock::now();
        const auto s = camera::round_trip(cam, a.samples, a.seed);
        const double ray_err = 1.0 - s.min_ray_agreement;
        const bool pass = ray_err < a.max_ray_error && s.max_pixel_error < a.max_pixel_error;
        ok = ok && pass;
        std::printf("%s: %zu rays, max ray error %.3e; %zu pixels, max pixel error %.3e px; %.3f s  %s\n",
                    path.string().c_str(), s.rays, ray_err, s.pixels, s.max_pixel_error, seconds_since(t0),
                    pass ? "PASS" : "FAIL");
    }
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------- refpoints

struct RefArgs {
    std::vector<fs::path> calib;
    fs::path data;
    fs::path out;
    GridFlags grid;
};

int run_refpoints(const RefArgs& a) {
    std::vector<camera::FisheyeCamera> cameras;
    if (!a.data.empty()) {
        const auto dirs = synth::list_sequences(a.data);
        if (dirs.empty()) throw IoError(a.data.string() + ": no seq_* directories");
        cameras = synth::load_sequence(dirs.front()).cameras;
    }
    for (const auto& p : a.calib) cameras.push_back(camera::FisheyeCamera::load(p));
    if (cameras.empty()) throw PreconditionError("refpoints: give --calib files or --data");
    const auto table = bev::build_reference_table(a.grid.make(), cameras);
    if (a.out.empty()) {
        table.write_csv(std::cout);
        return 0;
    }
    std::ofstream out(a.out);
    if (!out) throw IoError("cannot write " + a.out.string());
    table.write_csv(out);
    return 0;
}

// ---------------------------------------------------------------- train

struct ModelFlags {
    GridFlags grid;
    fs::path config;
    std::string task = "multitask";
    std::string head = "conv";
    std::size_t d = 32, blocks = 3, ffn = 64, heads = 4, points = 4;
    std::size_t head_heads = 4, head_modules = 3;
    std::vector<std::size_t> conv_channels{32, 16, 16};
    std::vector<std::size_t> backbone{16, 32, 32, 32, 32, 32};
    double conv_dropout = 0.1;
    std::uint64_t init_seed = 1;
    CLI::App* app = nullptr;

    void add(CLI::App* a) {
        app = a;
        grid.add(a);
        a->add_option("--config", config, "Model config file; explicit flags override it")->check(CLI::ExistingFile);
        a->add_option("--task", task, "height, segmentation or multitask")->capture_default_str();
        a->add_option("--head", head, "attn or conv")->capture_default_str();
        a->add_option("--d", d, "Feature width")->capture_default_str();
        a->add_option("--blocks", blocks, "Encoder blocks")->capture_default_str();
        a->add_option("--ffn", ffn, "Encoder feed-forward width")->capture_default_str();
        a->add_option("--heads", heads, "Encoder attention heads")->capture_default_str();
        a->add_option("--points", points, "Sampling points per head and level")->capture_default_str();
        a->add_option("--backbone", backbone, "Six trunk conv widths, comma separated")->delimiter(',')->capture_default_str();
        a->add_option("--head-heads", head_heads, "Heads per attention-head module")->capture_default_str();
        a->add_option("--head-modules", head_modules, "Attention modules per task")->capture_default_str();
        a->add_option("--conv-channels", conv_channels, "Conv head block widths, comma separated")
            ->delimiter(',')
            ->capture_default_str();
        a->add_option("--conv-dropout", conv_dropout, "Conv head dropout")->capture_default_str();
        a->add_option("--init-seed", init_seed, "Parameter initialization seed")->capture_default_str();
    }

    bool given(const char* flag) const { return app->count(flag) > 0; }

    // Grid flags default to the dataset grid when neither the flags nor a
    // config file set them.
    pipeline::ModelConfig make(const synth::LoadedSequence& first) const {
        pipeline::ModelConfig c;
        if (!config.empty()) {
            c = pipeline::ModelConfig::load(config);
        } else {
            c.grid_h = first.grid.h();
            c.grid_w = first.grid.w();
            c.cell = first.grid.cell_size();
            c.anchors = first.grid.anchors();
        }
        if (given("--grid")) c.grid_h = c.grid_w = grid.grid;
        if (given("--cell")) c.cell = grid.cell;
        if (given("--anchors")) c.anchors = grid.anchors;
        if (given("--task") || config.empty()) c.task = pipeline::parse_task_mode(task);
        if (given("--head") || config.empty()) c.head = pipeline::parse_head(head);
        auto set = [&](const char* flag, auto& field, const auto& value) {
            if (given(flag) || config.empty()) field = value;
        };
        set("--d", c.encoder.d, d);
        set("--blocks", c.encoder.n_blocks, blocks);
        set("--ffn", c.encoder.ffn_hidden, ffn);
        set("--heads", c.encoder.n_heads, heads);
        set("--points", c.encoder.n_points, points);
        set("--backbone", c.encoder.backbone_channels, backbone);
        set("--head-heads", c.head_heads, head_heads);
        set("--head-modules", c.head_modules, head_modules);
        set("--conv-channels", c.conv.channels, conv_channels);
        set("--conv-dropout", c.conv.dropout, conv_dropout);
        set("--init-seed", c.init_seed, init_seed);
        c.validate();
        return c;
    }
};

struct TrainArgs {
    fs::path data;
    fs::path out;
    ModelFlags model;
    pipeline::TrainConfig train;
    std::vector<double> split{0.7, 0.15, 0.15};
    bool quiet = false;
};

std::array<double, 3> to_ratios(const std::vector<double>& v) {
    if (v.size() != 3) throw PreconditionError("--split needs three comma separated ratios");
    return {v[0], v[1], v[2]};
}

int run_train(TrainArgs& a) {
    const auto data = pipeline::Dataset::load(a.data);
    if (data.sequences.empty()) throw IoError(a.data.string() + ": no sequences");
    const auto mc = a.model.make(data.sequences.front());
    a.train.split = to_ratios(a.split);
    a.train.verbose = !a.quiet;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = pipeline::train(data, mc, a.train, a.out);
    std::printf("steps %zu, loss %.6g -> %.6g, %.1f s\n", r.steps_run, r.initial_loss, r.final_loss, seconds_since(t0));
    const auto tasks = pipeline::tasks_of(mc.task);
    for (std::size_t t = 0; t < r.train_mean_iou.size() && t < tasks.size(); ++t)
        std::printf("train mean IoU %s: %.4f\n", heads::to_string(tasks[t]).c_str(), r.train_mean_iou[t]);
    std::printf("wrote %s\n", (a.out / "model.ckpt").string().c_str());
    return 0;
}

// ---------------------------------------------------------------- eval / infer

struct ModelDirArgs {
    fs::path model;
    fs::path checkpoint;
    fs::path data;
    std::string precision = "float";
    bool no_history = false;

    void add(CLI::App* a) {
        a->add_option("--model", model, "Training output directory (model.cfg, model.ckpt)")
            ->required()
            ->check(CLI::ExistingDirectory);
        a->add_option("--checkpoint", checkpoint, "Checkpoint file (default <model>/model.ckpt)");
        a->add_option("--data", data, "Dataset root")->required()->check(CLI::ExistingDirectory);
        a->add_option("--precision", precision, "float or double")
            ->capture_default_str()
            ->check(CLI::IsMember({"float", "double"}));
        a->add_flag("--no-history", no_history, "Reset the BEV history every frame");
    }

    template <typename T>
    pipeline::F2BevModel<T> load(const pipeline::Dataset& data_set) const {
        pipeline::F2BevModel<T> m(pipeline::ModelConfig::load(model / "model.cfg"), data_set.sequences.front().cameras);
        m.params().load(checkpoint.empty() ? model / "model.ckpt" : checkpoint);
        return m;
    }
};

struct EvalArgs {
    ModelDirArgs m;
    std::string split = "test";
    std::vector<double> ratios{0.7, 0.15, 0.15};
    std::uint64_t split_seed = 1;
    bool oracle = false;
    fs::path out;
};

void print_reports(const pipeline::EvalResult& r) {
    for (const auto& t : r.reports) {
        std::printf("%-10s %-13s", t.sequence.c_str(), heads::to_string(t.task).c_str());
        for (double v : t.report.per_class) std::printf(" %.4f", v);
        std::printf("  mean %.4f  fw %.4f\n", t.report.mean, t.report.freq_weighted);
    }
}

template <typename T>
int eval_with(const EvalArgs& a) {
    const auto data = pipeline::Dataset::load(a.m.data);
    if (data.sequences.empty()) throw IoError(a.m.data.string() + ": no sequences");
    const auto model = a.m.load<T>(data);
    pipeline::EvalOptions opt;
    opt.split = pipeline::parse_split(a.split);
    opt.ratios = to_ratios(a.ratios);
    opt.split_seed = a.split_seed;
    opt.history = !a.m.no_history;
    opt.oracle = a.oracle;
    const auto r = pipeline::evaluate(model, data, opt);
    print_reports(r);
    if (!a.out.empty()) pipeline::write_eval_csv(a.out, r);
    return 0;
}

struct InferArgs {
    ModelDirArgs m;
    std::vector<int> sequences;
    fs::path out;
};

template <typename T>
int infer_with(const InferArgs& a) {
    const auto data = pipeline::Dataset::load(a.m.data);
    if (data.sequences.empty()) throw IoError(a.m.data.string() + ": no sequences");
    const auto model = a.m.load<T>(data);
    for (std::size_t s = 0; s < data.sequences.size(); ++s) {
        if (!a.sequences.empty() &&
            std::find(a.sequences.begin(), a.sequences.end(), static_cast<int>(s)) == a.sequences.end())
            continue;
        const auto t0 = std::chrono::steady_clock::now();
        pipeline::infer_sequence(model, data.sequences[s], a.out, !a.m.no_history);
        std::printf("%s: %zu frames (%.1f s)\n", data.sequences[s].dir.filename().string().c_str(),
                    data.sequences[s].frames.size(), seconds_since(t0));
    }
    return 0;
}

// ---------------------------------------------------------------- gradcheck

template <typename T>
bool gradcheck_with(std::uint64_t seed, bool verbose) {
    const char* name = std::is_same_v<T, float> ? "float" : "double";
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t failed = 0, total = 0;
    verify::gradient_suite<T>(seed, [&](const verify::CheckResult& r) {
        ++total;
        if (!r.report.passed) ++failed;
        if (verbose || !r.report.passed) {
            std::printf("%-6s %-9s %-28s max err %.3e (tol %.0e) %6.2f s  %s\n", name, r.group.c_str(), r.name.c_str(),
                        r.report.max_error, r.report.tolerance, r.seconds, r.report.passed ? "PASS" : "FAIL");
            if (!r.report.passed)
                for (const auto& e : r.report.entries)
                    if (e.max_error > r.report.tolerance)
                        std::printf("         %s[%zu]: analytic %.9g numeric %.9g\n", e.name.c_str(), e.worst_index,
                                    e.analytic, e.numeric);
        }
        std::fflush(stdout);
    });
    std::printf("%s: %zu/%zu checks passed in %.1f s\n", name, total - failed, total, seconds_since(t0));
    return failed == 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fisheye surround-view to BEV height and segmentation maps"};
    app.require_subcommand(1);

    RenderArgs render;
    auto* r = app.add_subcommand("render", "Generate a synthetic parking-lot dataset");
    r->add_option("--seed", render.seed, "Scene and path seed of the first sequence")->capture_default_str();
    r->add_option("--sequences", render.sequences, "Number of sequences (seeds seed, seed+1, ...)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    r->add_option("--frames", render.sequence.n_frames, "Frames per sequence")->capture_default_str();
    r->add_option("--out", render.out, "Dataset root")->required();
    render.grid.add(r);
    r->add_option("--image-size", render.rig.image_size, "Square fisheye image side in pixels")->capture_default_str();
    r->add_option("--max-angle", render.rig.max_angle_deg, "Lens half field of view in degrees")->capture_default_str();
    r->add_option("--speed", render.sequence.speed, "Ego speed in m/s")->capture_default_str();
    r->add_option("--dt", render.sequence.dt, "Frame interval in seconds")->capture_default_str();
    r->add_option("--bev-scale", render.sequence.bev_scale, "Truth samples per cell side")->capture_default_str();
    r->add_option("--cars", render.scene.n_cars, "Parked cars")->capture_default_str();
    r->add_option("--buses", render.scene.n_buses, "Buses")->capture_default_str();
    r->add_option("--chargers", render.scene.n_chargers, "EV chargers")->capture_default_str();
    r->add_option("--planters", render.scene.n_planters, "Low planters")->capture_default_str();
    r->add_option("--extent", render.scene.extent, "Lot side in meters")->capture_default_str();

    CalibArgs calib;
    auto* c = app.add_subcommand("calib-check", "Projection round-trip report for calibration files");
    c->add_option("--calib", calib.calib, "Calibration file(s)")->required()->check(CLI::ExistingFile);
    c->add_option("--samples", calib.samples, "Rays and pixels sampled per camera")->capture_default_str();
    c->add_option("--seed", calib.seed, "Sampling seed")->capture_default_str();
    c->add_option("--max-pixel-error", calib.max_pixel_error, "Pixel round-trip bound")->capture_default_str();
    c->add_option("--max-ray-error", calib.max_ray_error, "Bound on 1 - ray agreement")->capture_default_str();

    RefArgs ref;
    auto* p = app.add_subcommand("refpoints", "Dump the BEV reference-point table as CSV");
    p->add_option("--calib", ref.calib, "Calibration file(s), in camera order")->check(CLI::ExistingFile);
    p->add_option("--data", ref.data, "Dataset root; uses the first sequence's cameras")->check(CLI::ExistingDirectory);
    p->add_option("--out", ref.out, "CSV path (default stdout)");
    ref.grid.add(p);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a model on a dataset");
    t->add_option("--data", train.data, "Dataset root")->required()->check(CLI::ExistingDirectory);
    t->add_option("--out", train.out, "Output directory")->required();
    train.model.add(t);
    t->add_option("--steps", train.train.steps, "Optimizer steps")->capture_default_str();
    t->add_option("--lr", train.train.learning_rate, "SGD step size")->capture_default_str();
    t->add_option("--momentum", train.train.momentum, "SGD momentum")->capture_default_str();
    t->add_option("--clip", train.train.clip_norm, "Gradient norm clip (0 disables)")->capture_default_str();
    t->add_option("--seed", train.train.seed, "Training seed (split, order, dropout)")->capture_default_str();
    t->add_option("--ce-steps", train.train.ce_steps, "Cross-entropy steps before switching to focal loss")
        ->capture_default_str();
    t->add_option("--gamma", train.train.focal_gamma, "Focal loss gamma")->capture_default_str();
    t->add_option("--split", train.split, "Train,val,test ratios")->delimiter(',')->capture_default_str();
    t->add_option("--checkpoint-every", train.train.checkpoint_every, "Intermediate checkpoint cadence (0: final only)")
        ->capture_default_str();
    t->add_option("--history-dropout", train.train.history_dropout, "Probability of dropping the history frame")
        ->capture_default_str();
    t->add_option("--target-iou", train.train.target_iou, "Stop once every task reaches this train mean IoU")
        ->capture_default_str();
    t->add_option("--eval-every", train.train.eval_every, "Train IoU evaluation cadence")->capture_default_str();
    t->add_flag("--quiet", train.quiet, "Suppress progress lines");

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Sequential evaluation, IoU per class");
    eval.m.add(e);
    e->add_option("--split", eval.split, "train, val or test")
        ->capture_default_str()
        ->check(CLI::IsMember({"train", "val", "test"}));
    e->add_option("--ratios", eval.ratios, "Train,val,test ratios")->delimiter(',')->capture_default_str();
    e->add_option("--split-seed", eval.split_seed, "Split seed")->capture_default_str();
    e->add_flag("--oracle", eval.oracle, "Score the truth against itself");
    e->add_option("--out", eval.out, "CSV report path");

    InferArgs infer;
    auto* i = app.add_subcommand("infer", "Write predicted BEV maps and collages");
    infer.m.add(i);
    i->add_option("--sequence", infer.sequences, "Sequence indices (default all)");
    i->add_option("--out", infer.out, "Output directory")->required();

    std::string precision = "both";
    std::uint64_t gc_seed = 1;
    bool gc_verbose = false;
    auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    g->add_option("--precision", precision, "float, double or both")
        ->capture_default_str()
        ->check(CLI::IsMember({"float", "double", "both"}));
    g->add_option("--seed", gc_seed, "Instance seed")->capture_default_str();
    g->add_flag("--verbose", gc_verbose, "Print every check, not only failures");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*r) return run_render(render);
        if (*c) return run_calib_check(calib);
        if (*p) return run_refpoints(ref);
        if (*t) return run_train(train);
        if (*e) return eval.m.precision == "double" ? eval_with<double>(eval) : eval_with<float>(eval);
        if (*i) return infer.m.precision == "double" ? infer_with<double>(infer) : infer_with<float>(infer);
        if (*g) {
            bool ok = true;
            if (precision != "double") ok = gradcheck_with<float>(gc_seed, gc_verbose) && ok;
            if (precision != "float") ok = gradcheck_with<double>(gc_seed, gc_verbose) && ok;
            return ok ? 0 : 1;
        }
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return 1;
    }
    return 0;
}
