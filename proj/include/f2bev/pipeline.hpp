#pragma once

#include "f2bev/encoder.hpp"
#include "f2bev/heads.hpp"
#include "f2bev/keyvalue.hpp"
#include "f2bev/metrics.hpp"
#include "f2bev/synth.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace f2bev::pipeline {

using dc::Rng;
using dc::Tensor;

enum class HeadType { Attention, Conv };
enum class TaskMode { Height, Segmentation, Multitask };

std::string to_string(HeadType head);
std::string to_string(TaskMode mode);
HeadType parse_head(const std::string& name);
TaskMode parse_task_mode(const std::string& name);
std::vector<heads::Task> tasks_of(TaskMode mode);

struct ModelConfig {
    int grid_h = 50;
    int grid_w = 50;
    double cell = 0.33;
    std::vector<double> anchors{0.0, 0.25, 1.8};
    enc::EncoderConfig encoder;
    HeadType head = HeadType::Conv;
    TaskMode task = TaskMode::Multitask;
    std::size_t head_heads = 4;    // heads per attention-head module
    std::size_t head_modules = 3;  // attention modules per task
    heads::ConvHeadConfig conv;
    std::uint64_t init_seed = 1;

    bev::BevGrid grid() const;
    void validate() const;

    KeyValueFile to_keyvalue() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static ModelConfig from_keyvalue(const KeyValueFile& kv);
    static ModelConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

// Background class per task, excluded from the frequency-weighted IoU.
std::size_t background_class(heads::Task task);

template <typename T>
class F2BevModel {
public:
    struct Output {
        std::vector<heads::HeadOutput<T>> heads;  // one per task, in tasks() order
        enc::BevState<T> state;
    };

    F2BevModel(const ModelConfig& config, const std::vector<camera::FisheyeCamera>& cameras);

    const ModelConfig& config() const { return config_; }
    dc::ParamStore<T>& params() { return store_; }
    const dc::ParamStore<T>& params() const { return store_; }
    const enc::Encoder<T>& encoder() const { return *encoder_; }
    const std::vector<heads::Task>& tasks() const { return tasks_; }
    // Output raster scale relative to the grid: 8 for conv heads, 1 for attention heads.
    int output_scale() const { return config_.head == HeadType::Conv ? 8 : 1; }

    Output forward(const std::vector<Image8>& images, const enc::BevState<T>* previous,
                   const bev::EgoMotion& motion, bool training, Rng& rng, int timestamp = 0,
                   const bev::Pose& pose = {}) const;

private:
    ModelConfig config_;
    std::vector<heads::Task> tasks_;
    dc::ParamStore<T> store_;
    std::unique_ptr<enc::Encoder<T>> encoder_;
    std::vector<heads::AttentionHead<T>> attn_heads_;
    std::unique_ptr<heads::ConvHead<T>> conv_head_;
};

extern template class F2BevModel<float>;
extern template class F2BevModel<double>;

// Truth map for `task` brought to the head's output resolution.
Image8 target_for(const synth::BevMaps& maps, heads::Task task, int bev_scale, int output_scale);

enum class Split { Train = 0, Val = 1, Test = 2 };
std::string to_string(Split split);
Split parse_split(const std::string& name);

// Contiguous train/val/test blocks of a sequence of n frames; the seed picks
// the order in which the three blocks are laid out in time.
std::array<std::vector<int>, 3> split_frames(int n, const std::array<double, 3>& ratios, std::uint64_t seed);

struct Dataset {
    std::vector<synth::LoadedSequence> sequences;
    static Dataset load(const std::filesystem::path& root);
};

// Sum of the task losses, deep-supervision terms included.
template <typename T>
Tensor<T> task_loss(const std::vector<heads::HeadOutput<T>>& outputs, const synth::BevMaps& truth,
                    int bev_scale, int output_scale, bool focal, double gamma);

struct TrainConfig {
    std::size_t steps = 1000;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double clip_norm = 5.0;
    std::uint64_t seed = 1;
    std::size_t ce_steps = 600;  // cross-entropy first, focal afterwards
    double focal_gamma = 2.0;
    std::array<double, 3> split{0.7, 0.15, 0.15};
    std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
    double history_dropout = 0.25;
    // Early stop once every task's train mean IoU reaches target_iou
    // (checked every eval_every steps); 0 disables.
    double target_iou = 0.0;
    std::size_t eval_every = 100;
    bool verbose = false;

    void validate() const;
};

struct TrainResult {
    std::size_t steps_run = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> losses;
    std::vector<double> train_mean_iou;  // per task at the last evaluation
};

// Writes loss CSV and checkpoints into out_dir (model.ckpt, model.cfg).
TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& config,
                  const std::filesystem::path& out_dir);

struct EvalOptions {
    Split split = Split::Test;
    std::array<double, 3> ratios{0.7, 0.15, 0.15};
    std::uint64_t split_seed = 1;
    bool history = true;
    bool oracle = false;  // score the truth against itself
    bool keep_maps = false;
};

struct TaskReport {
    std::string sequence;  // directory name, or "all"
    heads::Task task;
    metrics::IoUReport report;
};

struct EvalResult {
    std::vector<TaskReport> reports;
    // Predicted maps per evaluated frame and task when keep_maps is set.
    std::vector<std::vector<Image8>> maps;
};

// Sequential inference over the selected frames. Frames must arrive in
// strictly consecutive order within a sequence.
template <typename T>
EvalResult evaluate(const F2BevModel<T>& model, const Dataset& data, const EvalOptions& options);

// Lower-level sequential evaluation of explicit frames of one sequence.
template <typename T>
EvalResult evaluate_frames(const F2BevModel<T>& model, const synth::LoadedSequence& sequence,
                           const std::vector<int>& frames, bool history, bool oracle, bool keep_maps);

void write_eval_csv(const std::filesystem::path& path, const EvalResult& result);

// Writes <out>/<seq>/frame_<05d>_<task>.pgm per frame and task plus a
// frame_<05d>_collage.ppm with the camera views and colorized maps.
template <typename T>
void infer_sequence(const F2BevModel<T>& model, const synth::LoadedSequence& sequence,
                    const std::filesystem::path& out_dir, bool history = true);

// Color for a BEV class map pixel (task palette).
synth::Rgb map_color(heads::Task task, std::uint8_t cls);

}  // namespace f2bev::pipeline
