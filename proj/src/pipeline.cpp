#include "f2bev/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace f2bev::pipeline {
namespace {

std::string join_numbers(const std::vector<double>& v) {
    std::ostringstream s;
    s.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) s << (i ? ", " : "") << v[i];
    return s.str();
}

template <typename Int>
std::string join_ints(const std::vector<Int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
    return out;
}

std::vector<std::size_t> to_sizes(const std::vector<double>& v, const std::string& key) {
    std::vector<std::size_t> out;
    for (double x : v) {
        if (!(x >= 1.0) || x != std::floor(x)) throw ParseError(key + ": expected positive integers");
        out.push_back(static_cast<std::size_t>(x));
    }
    return out;
}

std::string frame_label(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05d", index);
    return buf;
}

template <typename T>
std::vector<Tensor<T>> image_tensors(const std::vector<Image8>& images) {
    std::vector<Tensor<T>> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(enc::image_to_tensor<T>(img));
    return out;
}

void check_compatible(const ModelConfig& config, const synth::LoadedSequence& seq, std::size_t n_cameras) {
    const auto g = config.grid();
    if (seq.grid.h() != g.h() || seq.grid.w() != g.w() || seq.grid.cell_size() != g.cell_size()) {
        throw PreconditionError(seq.dir.string() + ": dataset grid does not match the model grid");
    }
    if (seq.cameras.size() != n_cameras) {
        throw PreconditionError(seq.dir.string() + ": camera count does not match the model");
    }
}

}  // namespace

std::string to_string(HeadType head) { return head == HeadType::Conv ? "conv" : "attn"; }

std::string to_string(TaskMode mode) {
    switch (mode) {
        case TaskMode::Height: return "height";
        case TaskMode::Segmentation: return "segmentation";
        default: return "multitask";
    }
}

HeadType parse_head(const std::string& name) {
    if (name == "conv") return HeadType::Conv;
    if (name == "attn" || name == "attention") return HeadType::Attention;
    throw ParseError("unknown head type: " + name + " (expected attn or conv)");
}

TaskMode parse_task_mode(const std::string& name) {
    if (name == "height") return TaskMode::Height;
    if (name == "segmentation" || name == "seg") return TaskMode::Segmentation;
    if (name == "multitask") return TaskMode::Multitask;
    throw ParseError("unknown task: " + name + " (expected height, segmentation or multitask)");
}

std::vector<heads::Task> tasks_of(TaskMode mode) {
    switch (mode) {
        case TaskMode::Height: return {heads::Task::Height};
        case TaskMode::Segmentation: return {heads::Task::Segmentation};
        default: return {heads::Task::Height, heads::Task::Segmentation};
    }
}

std::size_t background_class(heads::Task task) {
    return task == heads::Task::Height ? synth::kBelowCar : synth::kGround;
}

bev::BevGrid ModelConfig::grid() const {
    return bev::BevGrid(grid_h, grid_w, cell, anchors, static_cast<int>(encoder.d));
}

void ModelConfig::validate() const {
    (void)grid();
    encoder.validate();
    if (head_heads == 0 || encoder.d % head_heads != 0) {
        throw PreconditionError("model config: d must be divisible by head_heads");
    }
    if (head_modules == 0) throw PreconditionError("model config: head_modules must be >= 1");
    if (conv.channels.size() != 3) throw PreconditionError("model config: conv_channels needs 3 entries");
}

KeyValueFile ModelConfig::to_keyvalue() const {
    KeyValueFile kv;
    kv.set("grid_h", std::to_string(grid_h));
    kv.set("grid_w", std::to_string(grid_w));
    kv.set("cell", join_numbers({cell}));
    kv.set("anchors", join_numbers(anchors));
    kv.set("d", std::to_string(encoder.d));
    kv.set("n_blocks", std::to_string(encoder.n_blocks));
    kv.set("ffn_hidden", std::to_string(encoder.ffn_hidden));
    kv.set("n_heads", std::to_string(encoder.n_heads));
    kv.set("n_points", std::to_string(encoder.n_points));
    kv.set("backbone_channels", join_ints(encoder.backbone_channels));
    kv.set("head", to_string(head));
    kv.set("task", to_string(task));
    kv.set("head_heads", std::to_string(head_heads));
    kv.set("head_modules", std::to_string(head_modules));
    kv.set("conv_channels", join_ints(conv.channels));
    kv.set("dropout", join_numbers({conv.dropout}));
    kv.set("init_seed", std::to_string(init_seed));
    return kv;
}

ModelConfig ModelConfig::from_keyvalue(const KeyValueFile& kv) {
    static const std::set<std::string> known{"grid_h", "grid_w", "cell", "anchors", "d", "n_blocks",
                                             "ffn_hidden", "n_heads", "n_points", "backbone_channels",
                                             "head", "task", "head_heads", "head_modules", "conv_channels",
                                             "dropout", "init_seed"};
    for (const auto& key : kv.keys()) {
        if (!known.contains(key)) throw ParseError(kv.origin() + ": unknown model config key '" + key + "'");
    }
    ModelConfig c;
    auto size_or = [&](const std::string& key, std::size_t fallback) {
        const int v = kv.integer_or(key, static_cast<int>(fallback));
        if (v < 0) throw ParseError(kv.origin() + ": " + key + " must be non-negative");
        return static_cast<std::size_t>(v);
    };
    c.grid_h = kv.integer_or("grid_h", c.grid_h);
    c.grid_w = kv.integer_or("grid_w", c.grid_w);
    c.cell = kv.number_or("cell", c.cell);
    if (kv.has("anchors")) c.anchors = kv.numbers("anchors");
    c.encoder.d = size_or("d", c.encoder.d);
    c.encoder.n_blocks = size_or("n_blocks", c.encoder.n_blocks);
    c.encoder.ffn_hidden = kv.has("ffn_hidden") ? size_or("ffn_hidden", 0) : 2 * c.encoder.d;
    c.encoder.n_heads = size_or("n_heads", c.encoder.n_heads);
    c.encoder.n_points = size_or("n_points", c.encoder.n_points);
    if (kv.has("backbone_channels")) c.encoder.backbone_channels = to_sizes(kv.numbers("backbone_channels"), "backbone_channels");
    if (kv.has("head")) c.head = parse_head(kv.str("head"));
    if (kv.has("task")) c.task = parse_task_mode(kv.str("task"));
    c.head_heads = size_or("head_heads", c.head_heads);
    c.head_modules = size_or("head_modules", c.head_modules);
    if (kv.has("conv_channels")) c.conv.channels = to_sizes(kv.numbers("conv_channels"), "conv_channels");
    c.conv.dropout = kv.number_or("dropout", c.conv.dropout);
    c.init_seed = static_cast<std::uint64_t>(kv.integer_or("init_seed", static_cast<int>(c.init_seed)));
    c.validate();
    return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) { return from_keyvalue(KeyValueFile::load(path)); }

void ModelConfig::save(const std::filesystem::path& path) const { to_keyvalue().save(path); }

template <typename T>
F2BevModel<T>::F2BevModel(const ModelConfig& config, const std::vector<camera::FisheyeCamera>& cameras)
    : config_(config), tasks_(tasks_of(config.task)) {
    config_.validate();
    if (cameras.empty()) throw PreconditionError("model: at least one camera required");
    Rng rng(config_.init_seed);
    auto table = std::make_shared<const bev::ReferencePointTable>(bev::build_reference_table(config_.grid(), cameras));
    encoder_ = std::make_unique<enc::Encoder<T>>(store_, "encoder", config_.encoder, table, rng);
    const std::size_t d = config_.encoder.d;
    if (config_.head == HeadType::Attention) {
        for (auto task : tasks_) {
            attn_heads_.emplace_back(store_, "head_" + heads::to_string(task), task, d, config_.head_heads,
                                     config_.head_modules, rng);
        }
    } else {
        conv_head_ = std::make_unique<heads::ConvHead<T>>(store_, "head_conv", tasks_, d, config_.conv, rng);
    }
}

template <typename T>
typename F2BevModel<T>::Output F2BevModel<T>::forward(const std::vector<Image8>& images,
                                                      const enc::BevState<T>* previous,
                                                      const bev::EgoMotion& motion, bool training, Rng& rng,
                                                      int timestamp, const bev::Pose& pose) const {
    Output out;
    out.state = encoder_->encode(image_tensors<T>(images), previous, motion, timestamp, pose);
    const auto h = static_cast<std::size_t>(config_.grid_h);
    const auto w = static_cast<std::size_t>(config_.grid_w);
    if (conv_head_) {
        out.heads = (*conv_head_)(out.state.features, h, w, training, rng);
    } else {
        for (const auto& head : attn_heads_) out.heads.push_back(head(out.state.features, h, w));
    }
    return out;
}

template class F2BevModel<float>;
template class F2BevModel<double>;

Image8 target_for(const synth::BevMaps& maps, heads::Task task, int bev_scale, int output_scale) {
    const Image8& full = task == heads::Task::Height ? maps.height : maps.segmentation;
    if (output_scale < 1 || bev_scale % output_scale != 0) {
        throw PreconditionError("dataset bev_scale " + std::to_string(bev_scale) +
                                " is not a multiple of the head output scale " + std::to_string(output_scale));
    }
    const int factor = bev_scale / output_scale;
    return factor == 1 ? full : metrics::downscale_nearest(full, factor);
}

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        default: return "test";
    }
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw ParseError("unknown split: " + name + " (expected train, val or test)");
}

std::array<std::vector<int>, 3> split_frames(int n, const std::array<double, 3>& ratios, std::uint64_t seed) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) throw PreconditionError("split ratios must be non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw PreconditionError("split ratios must sum to 1");
    if (n < 0) throw PreconditionError("split: negative frame count");
    std::array<int, 3> counts{};
    counts[0] = static_cast<int>(std::lround(ratios[0] * n));
    counts[1] = std::min(n - counts[0], static_cast<int>(std::lround(ratios[1] * n)));
    counts[2] = n - counts[0] - counts[1];
    std::array<int, 3> order{0, 1, 2};
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::array<std::vector<int>, 3> out;
    int next = 0;
    for (int block : order) {
        for (int i = 0; i < counts[static_cast<std::size_t>(block)]; ++i) out[static_cast<std::size_t>(block)].push_back(next++);
    }
    return out;
}

Dataset Dataset::load(const std::filesystem::path& root) {
    Dataset data;
    for (const auto& dir : synth::list_sequences(root)) data.sequences.push_back(synth::load_sequence(dir));
    return data;
}

template <typename T>
Tensor<T> task_loss(const std::vector<heads::HeadOutput<T>>& outputs, const synth::BevMaps& truth, int bev_scale,
                    int output_scale, bool focal, double gamma) {
    Tensor<T> total;
    for (const auto& out : outputs) {
        const Image8 target = target_for(truth, out.task, bev_scale, output_scale);
        const std::vector<Tensor<T>> terms = out.auxiliary.empty() ? std::vector<Tensor<T>>{out.primary} : out.auxiliary;
        for (const auto& logits : terms) {
            Tensor<T> l = focal ? metrics::focal_loss(logits, target, gamma) : metrics::cross_entropy(logits, target);
            total = total.defined() ? dc::add(total, l) : l;
        }
    }
    if (!total.defined()) throw PreconditionError("task_loss: no outputs");
    return total;
}

template Tensor<float> task_loss(const std::vector<heads::HeadOutput<float>>&, const synth::BevMaps&, int, int, bool, double);
template Tensor<double> task_loss(const std::vector<heads::HeadOutput<double>>&, const synth::BevMaps&, int, int, bool, double);

void TrainConfig::validate() const {
    if (steps < 1) throw PreconditionError("train: steps must be >= 1");
    if (!(learning_rate > 0.0)) throw PreconditionError("train: learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw PreconditionError("train: momentum must be in [0, 1)");
    if (!(focal_gamma >= 0.0)) throw PreconditionError("train: focal gamma must be >= 0");
    if (!(history_dropout >= 0.0 && history_dropout <= 1.0)) throw PreconditionError("train: history dropout in [0, 1]");
    double total = 0.0;
    for (double r : split) total += r;
    if (std::abs(total - 1.0) > 1e-9) throw PreconditionError("train: split ratios must sum to 1");
    if (eval_every == 0) throw PreconditionError("train: eval_every must be >= 1");
}

namespace {

struct Confusions {
    std::vector<metrics::ConfusionMatrix> per_task;
};

template <typename T>
Confusions run_frames(const F2BevModel<T>& model, const synth::LoadedSequence& seq, const std::vector<int>& frames,
                      bool history, bool oracle, std::vector<std::vector<Image8>>* maps) {
    if (history) {
        for (std::size_t i = 1; i < frames.size(); ++i) {
            if (frames[i] != frames[i - 1] + 1) {
                throw PreconditionError("sequential evaluation requires consecutive frames in temporal order (got " +
                                        std::to_string(frames[i - 1]) + " then " + std::to_string(frames[i]) + ")");
            }
        }
    }
    Confusions conf;
    for (auto task : model.tasks()) conf.per_task.emplace_back(heads::n_classes(task));
    dc::NoGradGuard guard;
    Rng rng(0);
    std::optional<enc::BevState<T>> prev;
    for (int f : frames) {
        if (f < 0 || static_cast<std::size_t>(f) >= seq.frames.size()) throw PreconditionError("frame index out of range");
        const auto& frame = seq.frames[static_cast<std::size_t>(f)];
        std::vector<Image8> preds;
        if (oracle) {
            for (auto task : model.tasks()) preds.push_back(target_for(frame.bev, task, seq.bev_scale, model.output_scale()));
        } else {
            const bool use = history && prev.has_value();
            const auto motion = use ? bev::EgoMotion::between(prev->pose, frame.pose) : bev::EgoMotion::identity();
            auto out = model.forward(frame.rgb, use ? &*prev : nullptr, motion, false, rng, f, frame.pose);
            for (const auto& o : out.heads) preds.push_back(metrics::argmax(o.primary));
            prev = std::move(out.state);
        }
        for (std::size_t t = 0; t < model.tasks().size(); ++t) {
            conf.per_task[t].add(preds[t], target_for(frame.bev, model.tasks()[t], seq.bev_scale, model.output_scale()));
        }
        if (maps) maps->push_back(std::move(preds));
    }
    return conf;
}

void append_reports(EvalResult& result, const std::string& name, const std::vector<heads::Task>& tasks,
                    const Confusions& conf) {
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        result.reports.push_back({name, tasks[t], metrics::iou_report(conf.per_task[t], {background_class(tasks[t])})});
    }
}

void merge(Confusions& into, const Confusions& from) {
    if (into.per_task.empty()) {
        into = from;
        return;
    }
    for (std::size_t t = 0; t < into.per_task.size(); ++t) into.per_task[t].merge(from.per_task[t]);
}

}  // namespace

template <typename T>
EvalResult evaluate_frames(const F2BevModel<T>& model, const synth::LoadedSequence& sequence,
                           const std::vector<int>& frames, bool history, bool oracle, bool keep_maps) {
    EvalResult result;
    const auto conf = run_frames(model, sequence, frames, history, oracle, keep_maps ? &result.maps : nullptr);
    append_reports(result, sequence.dir.filename().string(), model.tasks(), conf);
    return result;
}

template <typename T>
EvalResult evaluate(const F2BevModel<T>& model, const Dataset& data, const EvalOptions& options) {
    EvalResult result;
    Confusions pooled;
    for (const auto& seq : data.sequences) {
        check_compatible(model.config(), seq, model.encoder().n_cameras());
        const auto frames = split_frames(static_cast<int>(seq.frames.size()), options.ratios,
                                         options.split_seed)[static_cast<std::size_t>(options.split)];
        if (frames.empty()) continue;
        const auto conf = run_frames(model, seq, frames, options.history, options.oracle,
                                     options.keep_maps ? &result.maps : nullptr);
        append_reports(result, seq.dir.filename().string(), model.tasks(), conf);
        merge(pooled, conf);
    }
    if (pooled.per_task.empty()) throw PreconditionError("evaluate: the selected split contains no frames");
    append_reports(result, "all", model.tasks(), pooled);
    return result;
}

template EvalResult evaluate(const F2BevModel<float>&, const Dataset&, const EvalOptions&);
template EvalResult evaluate(const F2BevModel<double>&, const Dataset&, const EvalOptions&);
template EvalResult evaluate_frames(const F2BevModel<float>&, const synth::LoadedSequence&, const std::vector<int>&,
                                    bool, bool, bool);
template EvalResult evaluate_frames(const F2BevModel<double>&, const synth::LoadedSequence&, const std::vector<int>&,
                                    bool, bool, bool);

void write_eval_csv(const std::filesystem::path& path, const EvalResult& result) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "sequence,task,iou_0,iou_1,iou_2,iou_3,iou_4,mean_iou,freq_weighted_iou\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& r : result.reports) {
        out << r.sequence << ',' << heads::to_string(r.task);
        for (std::size_t k = 0; k < 5; ++k) {
            out << ',';
            if (k < r.report.per_class.size()) out << r.report.per_class[k];
        }
        out << ',' << r.report.mean << ',' << r.report.freq_weighted << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config,
                  const std::filesystem::path& out_dir) {
    using T = float;
    config.validate();
    if (data.sequences.empty()) throw PreconditionError("train: empty dataset");
    F2BevModel<T> model(model_config, data.sequences.front().cameras);
    for (const auto& seq : data.sequences) check_compatible(model_config, seq, model.encoder().n_cameras());

    std::vector<std::vector<int>> train_frames;
    std::vector<std::size_t> order;
    for (std::size_t s = 0; s < data.sequences.size(); ++s) {
        train_frames.push_back(split_frames(static_cast<int>(data.sequences[s].frames.size()), config.split, config.seed)[0]);
        if (!train_frames.back().empty()) order.push_back(s);
    }
    if (order.empty()) throw PreconditionError("train: the train split contains no frames");

    std::filesystem::create_directories(out_dir);
    model_config.save(out_dir / "model.cfg");
    std::ofstream csv(out_dir / "loss.csv");
    if (!csv) throw IoError("cannot write " + (out_dir / "loss.csv").string());
    csv << "step,epoch,sequence,frame,loss_kind,loss,grad_norm,history\n";
    csv.precision(8);

    dc::SgdMomentum<T> opt(model.params(), {static_cast<T>(config.learning_rate), static_cast<T>(config.momentum),
                                            static_cast<T>(config.clip_norm)});
    Rng rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    TrainResult result;

    auto train_iou = [&]() {
        Confusions pooled;
        for (std::size_t s : order) merge(pooled, run_frames(model, data.sequences[s], train_frames[s], true, false, nullptr));
        std::vector<double> ious;
        for (std::size_t t = 0; t < model.tasks().size(); ++t) {
            ious.push_back(metrics::iou_report(pooled.per_task[t], {background_class(model.tasks()[t])}).mean);
        }
        return ious;
    };

    const auto start = std::chrono::steady_clock::now();
    std::size_t step = 0;
    bool stop = false;
    for (std::size_t epoch = 0; !stop && step < config.steps; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t s : order) {
            if (stop || step >= config.steps) break;
            const auto& seq = data.sequences[s];
            std::optional<enc::BevState<T>> prev;
            for (int f : train_frames[s]) {
                if (step >= config.steps) break;
                const auto& frame = seq.frames[static_cast<std::size_t>(f)];
                const bool contiguous = prev.has_value() && prev->timestamp + 1 == f;
                const bool use = contiguous && unit(rng) >= config.history_dropout;
                const auto motion = use ? bev::EgoMotion::between(prev->pose, frame.pose) : bev::EgoMotion::identity();
                auto out = model.forward(frame.rgb, use ? &*prev : nullptr, motion, true, rng, f, frame.pose);
                const bool focal = step >= config.ce_steps;
                Tensor<T> loss = task_loss(out.heads, frame.bev, seq.bev_scale, model.output_scale(), focal,
                                           config.focal_gamma);
                const double value = loss.item();
                if (!std::isfinite(value)) {
                    throw Error("train: non-finite loss at step " + std::to_string(step) + " (" +
                                seq.dir.filename().string() + " frame " + std::to_string(f) +
                                "); lower the learning rate or enable gradient clipping");
                }
                loss.backward();
                const double grad_norm = opt.step();
                prev = enc::BevState<T>{out.state.features.detach(), f, frame.pose};
                if (step == 0) result.initial_loss = value;
                result.losses.push_back(value);
                csv << step << ',' << epoch << ',' << seq.dir.filename().string() << ',' << f << ','
                    << (focal ? "focal" : "ce") << ',' << value << ',' << grad_norm << ',' << (use ? 1 : 0) << '\n';
                ++step;
                if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
                    char name[48];
                    std::snprintf(name, sizeof(name), "model_step%06zu.ckpt", step);
                    model.params().save(out_dir / name);
                }
                if (config.target_iou > 0.0 && step % config.eval_every == 0) {
                    result.train_mean_iou = train_iou();
                    const double worst = *std::min_element(result.train_mean_iou.begin(), result.train_mean_iou.end());
                    if (config.verbose) {
                        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                        std::cerr << "step " << step << " loss " << value << " train mean IoU " << worst << " ("
                                  << secs << " s)\n";
                    }
                    if (worst >= config.target_iou) {
                        stop = true;
                        break;
                    }
                }
            }
        }
    }
    result.steps_run = step;
    result.final_loss = result.losses.back();
    if (result.train_mean_iou.empty() || !stop) result.train_mean_iou = train_iou();
    model.params().save(out_dir / "model.ckpt");
    return result;
}

synth::Rgb map_color(heads::Task task, std::uint8_t cls) {
    if (task == heads::Task::Segmentation) return synth::palette(cls);
    switch (cls) {
        case synth::kBelowCar: return {70, 70, 70};
        case synth::kAtCar: return {240, 150, 40};
        default: return {190, 50, 200};
    }
}

template <typename T>
void infer_sequence(const F2BevModel<T>& model, const synth::LoadedSequence& sequence,
                    const std::filesystem::path& out_dir, bool history) {
    check_compatible(model.config(), sequence, model.encoder().n_cameras());
    const auto dir = out_dir / sequence.dir.filename();
    std::filesystem::create_directories(dir);
    std::vector<int> frames(sequence.frames.size());
    std::iota(frames.begin(), frames.end(), 0);
    std::vector<std::vector<Image8>> maps;
    run_frames(model, sequence, frames, history, false, &maps);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& frame = sequence.frames[i];
        const std::string base = frame_label(frame.index);
        const int tile = frame.rgb.front().height;
        int width = 0;
        for (const auto& img : frame.rgb) width += img.width;
        width += tile * static_cast<int>(model.tasks().size());
        Image8 collage(width, tile, 3, 0);
        int x0 = 0;
        for (const auto& img : frame.rgb) {
            for (int y = 0; y < std::min(img.height, tile); ++y) {
                for (int x = 0; x < img.width; ++x) {
                    for (int c = 0; c < 3; ++c) collage.at(x0 + x, y, c) = img.at(x, y, c);
                }
            }
            x0 += img.width;
        }
        for (std::size_t t = 0; t < model.tasks().size(); ++t) {
            const auto task = model.tasks()[t];
            const Image8& map = maps[i][t];
            write_pgm(dir / (base + "_" + heads::to_string(task) + ".pgm"), map);
            for (int y = 0; y < tile; ++y) {
                for (int x = 0; x < tile; ++x) {
                    const auto cls = map.at(x * map.width / tile, y * map.height / tile);
                    const auto color = map_color(task, cls);
                    for (int c = 0; c < 3; ++c) collage.at(x0 + x, y, c) = color[static_cast<std::size_t>(c)];
                }
            }
            x0 += tile;
        }
        write_ppm(dir / (base + "_collage.ppm"), collage);
    }
}

template void infer_sequence(const F2BevModel<float>&, const synth::LoadedSequence&, const std::filesystem::path&, bool);
template void infer_sequence(const F2BevModel<double>&, const synth::LoadedSequence&, const std::filesystem::path&, bool);

}  // namespace f2bev::pipeline
