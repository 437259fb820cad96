// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimization loop, checkpoints and the attentive-probe sweep.
//
// Every random choice of a run (batch draws, temporal windows, crops, masks)
// is taken from the single rng stored in TrainState, in a fixed order, so a
// run is a pure function of (seed, config, manifest) and a checkpoint resumes
// it exactly.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tubejepa/losses.hpp"
#include "tubejepa/model.hpp"
#include "tubejepa/random.hpp"
#include "tubejepa/tensor.hpp"
#include "tubejepa/video.hpp"

namespace tubejepa {

// Full scale: stage 1 T=16 for 200 epochs at lr 5e-4, stage 2 T=64 for 80
// epochs. The defaults below are desk scale.
struct TrainConfig {
    int stage = 1;
    std::size_t frames = 16;
    std::size_t epochs = 5;
    std::size_t steps = 0;  // overrides epochs * ceil(n / batch) when nonzero
    double base_lr = 5e-4;  // stage 2 default: 1.5e-4
    double weight_decay = 0.04;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 8;
    double ema_alpha = 0.99925;
    std::uint64_t seed = 0;
    std::optional<std::size_t> warmup_steps;  // default: 5% of the run
    std::size_t checkpoint_every = 100;
    std::size_t resize_short = 0;  // 0: keep the stored frame size
    std::size_t crop = 0;          // 0: shorter side after resizing
    Precision precision = Precision::f64;
    bool check_ema_drift = false;
    LossConfig loss;
    EncoderConfig model;

    void validate() const;
    std::size_t warmup_for(std::size_t total_steps) const;
};

// Linear warmup to base_lr, then half-cosine down to 0 at total_steps.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr, std::size_t warmup_steps);

struct AdamWSettings {
    double lr = 0.0;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

using GradientMap = std::map<std::string, std::vector<double>>;

// Decoupled weight decay followed by the bias-corrected Adam update; `t` is
// the 1-based update count. Throws NumericError (leaving everything
// untouched) when a gradient is not finite.
void adamw_step(ParameterSet& params, ParameterSet& first_moment, ParameterSet& second_moment,
                const GradientMap& grads, std::size_t t, const AdamWSettings& settings);

struct TrainState {
    std::size_t step = 0;
    int stage = 1;
    EncoderConfig model;
    ParameterSet student;
    ParameterSet teacher;
    ParameterSet adam_m;
    ParameterSet adam_v;
    Rng rng;

    // Fresh student, teacher = copy of student, zero moments.
    static TrainState initialize(const TrainConfig& config);

    std::vector<NamedTensor> to_records() const;
    static TrainState from_records(const std::vector<NamedTensor>& records);
    void save(const std::filesystem::path& path) const;
    static TrainState load(const std::filesystem::path& path);
};

struct StepResult {
    LossReport report;
    double lr = 0.0;
    double teacher_drift = 0.0;  // max |delta teacher|
    double drift_bound = 0.0;    // (1 - alpha) * max |student - teacher| before the update
    double rounding_slack = 0.0; // a few ulps of the largest parameter, absorbed by the drift check
};

// Number of worker threads for per-clip preprocessing, from UNISURG_THREADS
// (default 1). Results never depend on it.
std::size_t worker_count();

// One optimization step over an already extracted batch of clips: masks,
// motion scores, student and teacher passes, composite loss, AdamW, EMA.
StepResult train_step(TrainState& state, std::span<const VideoClip> batch, const TrainConfig& config, double lr);

struct Dataset {
    std::filesystem::path manifest_path;
    Manifest manifest;
    SampleWeightTable table;
    std::vector<VideoClip> clips;

    static Dataset load(const std::filesystem::path& manifest_path);
};

// Balanced draw of batch_size clips, each windowed and cropped.
std::vector<VideoClip> draw_batch(const Dataset& data, const TrainConfig& config, Rng& rng);

std::size_t total_steps_for(const TrainConfig& config, std::size_t dataset_size);

struct StageOptions {
    std::filesystem::path checkpoint_out;
    std::optional<std::filesystem::path> checkpoint_in;
    std::optional<std::filesystem::path> metrics_path;
    std::ostream* metrics_stream = nullptr;
    std::size_t stop_after = 0;  // stop (with a checkpoint) once this step count is reached; 0 = never
};

struct StageResult {
    std::size_t total_steps = 0;
    std::size_t final_step = 0;
    std::vector<LossReport> reports;  // steps run by this call
    bool completed = false;
};

// Builds the state (fresh, resumed or promoted from stage 1) and runs the
// remaining steps. On a numeric failure the last periodic checkpoint stays
// intact and NumericError propagates.
StageResult run_stage(const TrainConfig& config, const Dataset& data, const StageOptions& options);

// Prepares the state run_stage would start from.
TrainState prepare_state(const TrainConfig& config, const std::optional<std::filesystem::path>& checkpoint_in);

// Student parameters and model config from a training checkpoint (or from a
// bare parameter file carrying a "config/model" record).
ParameterSet load_backbone(const std::filesystem::path& path, EncoderConfig* model);

// ---- collapse experiment --------------------------------------------------

struct CollapseResult {
    std::vector<double> sigma_treatment;  // per step
    std::vector<double> sigma_baseline;
    double ratio = 0.0;             // final treatment / final baseline
    double baseline_tail_rho = 0.0; // Spearman(step, sigma) over the baseline's last 100 steps
};

CollapseResult run_collapse_experiment(const TrainConfig& config, const Dataset& data, double baseline_lambda_var);

double spearman(std::span<const double> x, std::span<const double> y);

// ---- metrics --------------------------------------------------------------

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels);
double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t num_classes);
double jaccard(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t num_classes);

// ---- probe sweep ----------------------------------------------------------

struct ProbeExample {
    Tensor features;  // N x D, constant
    std::size_t label = 0;
};

struct ProbeSweepConfig {
    std::vector<double> lrs{1e-4, 3e-4, 1e-3, 3e-3};
    std::vector<double> weight_decays{0.0, 0.01, 0.04, 0.1};
    std::size_t epochs = 20;
    double val_fraction = 0.25;
    std::uint64_t seed = 0;
    std::size_t blocks = 4;
    std::size_t heads = 16;
};

struct HeadResult {
    double lr = 0.0;
    double weight_decay = 0.0;
    double final_train_loss = 0.0;
    double accuracy = 0.0;
    double f1 = 0.0;
    double jaccard = 0.0;
};

struct ProbeSweepReport {
    std::vector<HeadResult> heads;
    std::size_t best = 0;
    std::size_t train_size = 0;
    std::size_t val_size = 0;
    std::size_t num_classes = 0;
    bool backbone_grads_absent = true;

    std::string to_json() const;
};

// Trains one attentive probe per (lr, weight decay) pair on the training
// split and scores it on the held-out split; best = highest validation
// accuracy, then F1, then lowest index.
ProbeSweepReport probe_sweep(std::span<const ProbeExample> examples, std::size_t num_classes,
                             const ProbeSweepConfig& config);

// Frozen context-encoder features over every tube of each labeled clip.
// `backbone_grads_absent` reports whether the backbone saw any gradient.
std::vector<ProbeExample> extract_probe_features(const ParameterSet& backbone, const EncoderConfig& model,
                                                 const std::filesystem::path& task_dir, bool* backbone_grads_absent,
                                                 std::size_t* num_classes);

}  // namespace tubejepa
