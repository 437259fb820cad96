// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include "tubejepa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tubejepa/errors.hpp"
#include "tubejepa/tubes.hpp"

namespace tubejepa {

namespace fs = std::filesystem;

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
// handled by exactly one thread and writes only its own slot.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

double max_abs_difference(const ParameterSet& a, const ParameterSet& b) {
    double worst = 0.0;
    auto it = b.begin();
    for (const auto& [name, t] : a) {
        const auto& other = it->second.values;
        for (std::size_t i = 0; i < t.values.size(); ++i) worst = std::max(worst, std::abs(t.values[i] - other[i]));
        ++it;
    }
    return worst;
}

double max_abs(const ParameterSet& a) {
    double worst = 0.0;
    for (const auto& [name, t] : a)
        for (double v : t.values) worst = std::max(worst, std::abs(v));
    return worst;
}

const NamedTensor* find_record(const std::vector<NamedTensor>& records, const std::string& name) {
    for (const auto& r : records)
        if (r.name == name) return &r;
    return nullptr;
}

const NamedTensor& require_record(const std::vector<NamedTensor>& records, const std::string& name) {
    const NamedTensor* r = find_record(records, name);
    if (r == nullptr) throw FormatError("checkpoint lacks record '" + name + "'", 0);
    return *r;
}

std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

void check_metric_inputs(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
    if (preds.empty()) throw ContractError("metrics: empty inputs");
    if (preds.size() != labels.size()) throw ContractError("metrics: predictions and labels differ in length");
}

struct ClassCounts {
    std::vector<std::size_t> tp, fp, fn;
};

ClassCounts count_classes(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t k) {
    check_metric_inputs(preds, labels);
    ClassCounts c{std::vector<std::size_t>(k), std::vector<std::size_t>(k), std::vector<std::size_t>(k)};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] >= k || labels[i] >= k) throw ContractError("metrics: class index outside range");
        if (preds[i] == labels[i]) {
            ++c.tp[labels[i]];
        } else {
            ++c.fp[preds[i]];
            ++c.fn[labels[i]];
        }
    }
    return c;
}

}  // namespace

// ---- configuration and schedule -------------------------------------------

void TrainConfig::validate() const {
    if (stage != 1 && stage != 2) throw ConfigError("train: stage must be 1 or 2");
    if (frames < 2) throw ConfigError("train: frames must be at least 2");
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ConfigError("train: base_lr must be finite and nonnegative");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be nonnegative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
    if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0)) throw ConfigError("train: ema_alpha must lie in [0, 1]");
    if (checkpoint_every == 0) throw ConfigError("train: checkpoint_every must be positive");
    if (frames > model.max_frames) throw ConfigError("train: frames exceed model.max_frames");
    loss.validate();
    model.validate();
}

std::size_t TrainConfig::warmup_for(std::size_t total_steps) const {
    if (warmup_steps) {
        if (total_steps > 0 && *warmup_steps >= total_steps) throw ConfigError("train: warmup_steps must be below the step count");
        return *warmup_steps;
    }
    return total_steps / 20;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr, std::size_t warmup_steps) {
    if (step > total_steps) throw ContractError("cosine_lr: step beyond the schedule");
    if (warmup_steps >= total_steps) throw ContractError("cosine_lr: warmup must be shorter than the schedule");
    if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(ParameterSet& params, ParameterSet& first_moment, ParameterSet& second_moment,
                const GradientMap& grads, std::size_t t, const AdamWSettings& s) {
    if (t == 0) throw ContractError("adamw_step: update count is 1-based");
    if (!params.congruent_with(first_moment) || !params.congruent_with(second_moment)) {
        throw DimensionError("adamw_step: moments are not congruent with the parameters");
    }
    for (const auto& [name, p] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw DimensionError("adamw_step: no gradient for '" + name + "'");
        if (it->second.size() != p.values.size()) throw DimensionError("adamw_step: gradient shape mismatch for '" + name + "'");
        for (double g : it->second) {
            if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient in '" + name + "'");
        }
    }
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(t));
    const double decay = 1.0 - s.lr * s.weight_decay;
    auto mit = first_moment.begin();
    auto vit = second_moment.begin();
    for (auto& [name, p] : params) {
        const auto& g = grads.at(name);
        auto& m = mit->second.values;
        auto& v = vit->second.values;
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
            v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
            const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + s.eps);
            p.values[i] = p.values[i] * decay - s.lr * update;
        }
        ++mit;
        ++vit;
    }
}

// ---- state ----------------------------------------------------------------

TrainState TrainState::initialize(const TrainConfig& config) {
    TrainState s;
    s.stage = config.stage;
    s.model = config.model;
    s.student = init_backbone(config.model, config.seed);
    s.teacher = s.student;
    s.adam_m = s.student.zeros_like();
    s.adam_v = s.student.zeros_like();
    s.rng = make_rng(config.seed, 1);
    return s;
}

std::vector<NamedTensor> TrainState::to_records() const {
    std::vector<NamedTensor> out = tubejepa::to_records(student, "student/");
    for (auto* part : {&teacher, &adam_m, &adam_v}) {
        const char* prefix = part == &teacher ? "teacher/" : part == &adam_m ? "adam_m/" : "adam_v/";
        auto records = tubejepa::to_records(*part, prefix);
        out.insert(out.end(), records.begin(), records.end());
    }
    out.push_back({"state/step", {1}, {static_cast<double>(step)}});
    out.push_back({"state/stage", {1}, {static_cast<double>(stage)}});
    const auto words = rng_state_words(rng);
    out.push_back({"state/rng", {words.size()}, std::vector<double>(words.begin(), words.end())});
    const auto config = encode_config(model);
    out.push_back({"config/model", {config.size()}, config});
    return out;
}

TrainState TrainState::from_records(const std::vector<NamedTensor>& records) {
    TrainState s;
    s.student = tubejepa::from_records(records, "student/");
    s.teacher = tubejepa::from_records(records, "teacher/");
    s.adam_m = tubejepa::from_records(records, "adam_m/");
    s.adam_v = tubejepa::from_records(records, "adam_v/");
    if (s.student.size() == 0) throw FormatError("checkpoint holds no student parameters", 0);
    if (!s.student.congruent_with(s.teacher) || !s.student.congruent_with(s.adam_m) ||
        !s.student.congruent_with(s.adam_v)) {
        throw FormatError("checkpoint parameter groups are not congruent", 0);
    }
    s.step = static_cast<std::size_t>(require_record(records, "state/step").values.at(0));
    s.stage = static_cast<int>(require_record(records, "state/stage").values.at(0));
    const auto& rng_values = require_record(records, "state/rng").values;
    s.rng = rng_from_state_words(std::vector<std::uint32_t>(rng_values.begin(), rng_values.end()));
    s.model = decode_config(require_record(records, "config/model").values);
    return s;
}

void TrainState::save(const fs::path& path) const { write_tensor_file(path, to_records()); }

TrainState TrainState::load(const fs::path& path) { return from_records(read_tensor_file(path)); }

ParameterSet load_backbone(const fs::path& path, EncoderConfig* model) {
    const auto records = read_tensor_file(path);
    const NamedTensor& config = require_record(records, "config/model");
    if (model != nullptr) *model = decode_config(config.values);
    if (find_record(records, "state/step") != nullptr) return tubejepa::from_records(records, "student/");
    std::vector<NamedTensor> params;
    for (const auto& r : records)
        if (r.name != "config/model") params.push_back(r);
    return tubejepa::from_records(params);
}

// ---- training -------------------------------------------------------------

std::size_t worker_count() {
    const char* env = std::getenv("UNISURG_THREADS");
    if (env == nullptr || *env == '\0') return 1;
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (*end != '\0' || v == 0) throw ConfigError("UNISURG_THREADS must be a positive integer");
    return static_cast<std::size_t>(std::min<unsigned long>(v, 64));
}

StepResult train_step(TrainState& state, std::span<const VideoClip> batch, const TrainConfig& config, double lr) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    const EncoderConfig& model = state.model;

    std::vector<TubeGrid> grids;
    std::vector<MaskSample> masks;
    for (const VideoClip& clip : batch) {
        grids.push_back(TubeGrid::for_clip(clip, model.patch_size));
        masks.push_back(sample_mask(grids.back(), state.rng));
    }
    std::vector<std::vector<double>> motion(batch.size());
    parallel_for(batch.size(), worker_count(), [&](std::size_t i) { motion[i] = motion_scores(batch[i], grids[i]); });
    std::vector<TubePartition> partitions;
    partitions.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        partitions.push_back(make_partition(masks[i], std::move(motion[i]), config.loss.top_k, config.loss.gamma));
    }

    Tape tape(config.precision);
    const BoundParameters student = BoundParameters::variables(tape, state.student);
    const BoundParameters teacher = BoundParameters::constants(state.teacher);
    std::vector<ClipOutputs> outputs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Tensor visible = encode_visible(batch[i], grids[i], partitions[i], student, model);
        const Prediction prediction = predict_masked(visible, partitions[i], student, model);
        const Tensor target = encode_full(batch[i], grids[i], teacher, model).detach();
        outputs.push_back({prediction.masked, target, &partitions[i]});
    }
    const CompositeLoss loss = composite_loss(outputs, config.loss);
    tape.backward(loss.total);

    StepResult result;
    result.report = loss.report;
    result.lr = lr;
    adamw_step(state.student, state.adam_m, state.adam_v, student.gradients(), state.step + 1,
               {lr, config.weight_decay, config.beta1, config.beta2, config.adam_eps});

    const ParameterSet before = state.teacher;
    result.drift_bound = (1.0 - config.ema_alpha) * max_abs_difference(state.student, before);
    ema_update(state.student, state.teacher, config.ema_alpha);
    result.teacher_drift = max_abs_difference(state.teacher, before);
    result.rounding_slack =
        4.0 * std::numeric_limits<double>::epsilon() * std::max(max_abs(before), max_abs(state.student));
    if (config.check_ema_drift && result.teacher_drift > result.drift_bound + result.rounding_slack) {
        throw NumericError("train_step: teacher moved further than the EMA bound allows");
    }
    ++state.step;
    return result;
}

Dataset Dataset::load(const fs::path& manifest_path) {
    Dataset d;
    d.manifest_path = manifest_path;
    d.manifest = read_manifest(manifest_path);
    d.table = build_weight_table(d.manifest);
    for (const auto& record : d.manifest) d.clips.push_back(read_clip(resolve_clip_path(manifest_path, record)));
    return d;
}

std::vector<VideoClip> draw_batch(const Dataset& data, const TrainConfig& config, Rng& rng) {
    const auto indices = sample_indices(data.table, config.batch_size, rng);
    std::vector<VideoClip> batch;
    batch.reserve(indices.size());
    for (std::size_t idx : indices) {
        const VideoClip& clip = data.clips[idx];
        ExtractOptions options;
        options.frames = config.frames;
        options.resize_short = config.resize_short != 0 ? config.resize_short : std::min(clip.height, clip.width);
        options.crop = config.crop != 0 ? config.crop : options.resize_short;
        options.train = true;
        batch.push_back(extract_training_clip(clip, options, rng));
    }
    return batch;
}

std::size_t total_steps_for(const TrainConfig& config, std::size_t dataset_size) {
    if (config.steps != 0) return config.steps;
    return config.epochs * ((dataset_size + config.batch_size - 1) / config.batch_size);
}

TrainState prepare_state(const TrainConfig& config, const std::optional<fs::path>& checkpoint_in) {
    if (!checkpoint_in) {
        if (config.stage == 2) throw ConfigError("stage 2 requires a stage-1 checkpoint");
        return TrainState::initialize(config);
    }
    TrainState state = TrainState::load(*checkpoint_in);
    if (!(state.model == config.model)) throw ConfigError("checkpoint model config differs from the run config");
    if (state.stage == config.stage) return state;
    if (state.stage == 1 && config.stage == 2) {
        // New stage: same weights, fresh optimizer, fresh schedule.
        state.stage = 2;
        state.step = 0;
        state.adam_m = state.student.zeros_like();
        state.adam_v = state.student.zeros_like();
        state.rng = make_rng(config.seed, 2);
        return state;
    }
    throw ConfigError("cannot continue a stage-" + std::to_string(state.stage) + " checkpoint as stage " +
                      std::to_string(config.stage));
}

namespace {

// Keeps metric lines up to and including `step` so a resumed run appends
// exactly where its checkpoint left off.
void trim_metrics(const fs::path& path, std::size_t step) {
    std::string kept;
    if (step > 0) {
        std::ifstream in(path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("step")) continue;
            if (j["step"].get<std::size_t>() <= step) kept += line + "\n";
        }
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open metrics file " + path.string());
    out << kept;
}

}  // namespace

StageResult run_stage(const TrainConfig& config, const Dataset& data, const StageOptions& options) {
    config.validate();
    if (options.checkpoint_out.empty()) throw ConfigError("run_stage: no output checkpoint path");
    TrainState state = prepare_state(config, options.checkpoint_in);

    StageResult result;
    result.total_steps = total_steps_for(config, data.clips.size());
    if (state.step > result.total_steps) throw ConfigError("checkpoint is past the end of this run");
    const std::size_t warmup = config.warmup_for(result.total_steps);

    std::ofstream metrics;
    if (options.metrics_path) {
        trim_metrics(*options.metrics_path, state.step);
        metrics.open(*options.metrics_path, std::ios::app);
        if (!metrics) throw IoError("cannot open metrics file " + options.metrics_path->string());
    }

    while (state.step < result.total_steps) {
        const std::vector<VideoClip> batch = draw_batch(data, config, state.rng);
        const double lr = cosine_lr(state.step + 1, result.total_steps, config.base_lr, warmup);
        const StepResult step = train_step(state, batch, config, lr);
        const std::string line = step.report.to_json(state.step);
        if (metrics.is_open()) metrics << line << '\n' << std::flush;
        if (options.metrics_stream != nullptr) *options.metrics_stream << line << '\n' << std::flush;
        result.reports.push_back(step.report);
        if (state.step % config.checkpoint_every == 0) state.save(options.checkpoint_out);
        if (options.stop_after != 0 && state.step >= options.stop_after && state.step < result.total_steps) break;
    }
    state.save(options.checkpoint_out);
    result.final_step = state.step;
    result.completed = state.step == result.total_steps;
    return result;
}

// ---- collapse experiment --------------------------------------------------

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("spearman: need two equal-length series");
    auto ranks = [](std::span<const double> v) {
        std::vector<std::size_t> order(v.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size();) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

CollapseResult run_collapse_experiment(const TrainConfig& config, const Dataset& data, double baseline_lambda_var) {
    config.validate();
    const std::size_t total = total_steps_for(config, data.clips.size());
    if (total < 2) throw ConfigError("collapse experiment needs at least two steps");
    const std::size_t warmup = config.warmup_for(total);

    auto run_arm = [&](double lambda_var) {
        TrainConfig arm = config;
        arm.loss.lambda_var = lambda_var;
        TrainState state = TrainState::initialize(arm);
        std::vector<double> sigma;
        while (state.step < total) {
            const auto batch = draw_batch(data, arm, state.rng);
            const double lr = cosine_lr(state.step + 1, total, arm.base_lr, warmup);
            sigma.push_back(train_step(state, batch, arm, lr).report.mean_sigma);
        }
        return sigma;
    };

    CollapseResult r;
    r.sigma_treatment = run_arm(config.loss.lambda_var);
    r.sigma_baseline = run_arm(baseline_lambda_var);
    const double base = r.sigma_baseline.back();
    r.ratio = base > 0.0 ? r.sigma_treatment.back() / base : std::numeric_limits<double>::infinity();
    const std::size_t tail = std::min<std::size_t>(100, total);
    std::vector<double> steps(tail);
    for (std::size_t i = 0; i < tail; ++i) steps[i] = static_cast<double>(i);
    r.baseline_tail_rho = spearman(steps, std::span<const double>(r.sigma_baseline).last(tail));
    return r;
}

// ---- metrics --------------------------------------------------------------

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
    check_metric_inputs(preds, labels);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t num_classes) {
    const ClassCounts c = count_classes(preds, labels, num_classes);
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const std::size_t denom = 2 * c.tp[k] + c.fp[k] + c.fn[k];
        if (denom == 0) continue;  // absent from both streams
        total += 2.0 * static_cast<double>(c.tp[k]) / static_cast<double>(denom);
        ++used;
    }
    return total / static_cast<double>(used);
}

double jaccard(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t num_classes) {
    const ClassCounts c = count_classes(preds, labels, num_classes);
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const std::size_t denom = c.tp[k] + c.fp[k] + c.fn[k];
        if (denom == 0) continue;
        total += static_cast<double>(c.tp[k]) / static_cast<double>(denom);
        ++used;
    }
    return total / static_cast<double>(used);
}

// ---- probe sweep ----------------------------------------------------------

std::string ProbeSweepReport::to_json() const {
    nlohmann::ordered_json j;
    j["num_classes"] = num_classes;
    j["train_size"] = train_size;
    j["val_size"] = val_size;
    j["backbone_grads_absent"] = backbone_grads_absent;
    j["heads"] = nlohmann::ordered_json::array();
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const HeadResult& r = heads[h];
        nlohmann::ordered_json e;
        e["index"] = h;
        e["lr"] = r.lr;
        e["weight_decay"] = r.weight_decay;
        e["final_train_loss"] = r.final_train_loss;
        e["accuracy"] = r.accuracy;
        e["f1"] = r.f1;
        e["jaccard"] = r.jaccard;
        j["heads"].push_back(e);
    }
    j["best_head"] = best;
    if (!heads.empty()) {
        const HeadResult& b = heads.at(best);
        j["best"] = {{"accuracy", b.accuracy}, {"f1", b.f1}, {"jaccard", b.jaccard}, {"lr", b.lr},
                     {"weight_decay", b.weight_decay}};
    }
    return j.dump(2) + "\n";
}

ProbeSweepReport probe_sweep(std::span<const ProbeExample> examples, std::size_t num_classes,
                             const ProbeSweepConfig& config) {
    if (examples.empty()) throw ContractError("probe_sweep: no examples");
    if (num_classes < 2) throw ContractError("probe_sweep: need at least two classes");
    if (config.lrs.empty() || config.weight_decays.empty()) throw ConfigError("probe_sweep: empty hyperparameter grid");
    const std::size_t dim = examples.front().features.cols();
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const ProbeExample& e = examples[i];
        if (e.label >= num_classes) throw ContractError("probe_sweep: label outside class range");
        if (e.features.rank() != 2 || e.features.cols() != dim) throw DimensionError("probe_sweep: inconsistent feature shapes");
        by_class[e.label].push_back(i);
    }
    std::size_t present = 0;
    for (const auto& members : by_class) present += !members.empty();
    if (present < 2) throw ContractError("probe_sweep: degenerate task with a single class");

    // Stratified split, shuffled within each class.
    Rng split_rng = make_rng(config.seed, 7);
    std::vector<std::size_t> train, val;
    for (auto members : by_class) {
        for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[uniform_index(split_rng, i)]);
        std::size_t n_val = 0;
        if (members.size() >= 2) {
            n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(members.size())));
            n_val = std::clamp<std::size_t>(n_val, 1, members.size() - 1);
        }
        val.insert(val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
        train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());

    ProbeConfig pc;
    pc.dim = dim;
    pc.blocks = config.blocks;
    pc.heads = config.heads;
    pc.num_classes = num_classes;
    pc.validate();
    const ParameterSet initial = init_probe(pc, config.seed);

    ProbeSweepReport report;
    report.num_classes = num_classes;
    report.train_size = train.size();
    report.val_size = val.size();
    report.heads.resize(config.lrs.size() * config.weight_decays.size());
    std::vector<bool> absent(report.heads.size(), true);

    parallel_for(report.heads.size(), worker_count(), [&](std::size_t h) {
        HeadResult& r = report.heads[h];
        r.lr = config.lrs[h / config.weight_decays.size()];
        r.weight_decay = config.weight_decays[h % config.weight_decays.size()];
        ParameterSet params = initial;
        ParameterSet m = params.zeros_like(), v = params.zeros_like();
        Rng order_rng = make_rng(config.seed, 11);  // same visiting order for every head
        std::size_t t = 0;
        for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
            std::vector<std::size_t> order = train;
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(order_rng, i)]);
            double epoch_loss = 0.0;
            for (std::size_t idx : order) {
                Tape tape;
                const BoundParameters bound = BoundParameters::variables(tape, params);
                const Tensor loss = cross_entropy(attentive_probe(examples[idx].features, bound, pc), examples[idx].label);
                tape.backward(loss);
                epoch_loss += loss.item();
                adamw_step(params, m, v, bound.gradients(), ++t, {r.lr, r.weight_decay, 0.9, 0.999, 1e-8});
            }
            r.final_train_loss = epoch_loss / static_cast<double>(order.size());
        }
        const BoundParameters frozen = BoundParameters::constants(params);
        std::vector<std::size_t> preds, labels;
        for (std::size_t idx : val) {
            const Tensor logits = attentive_probe(examples[idx].features, frozen, pc);
            preds.push_back(argmax(logits.values()));
            labels.push_back(examples[idx].label);
        }
        r.accuracy = accuracy(preds, labels);
        r.f1 = macro_f1(preds, labels, num_classes);
        r.jaccard = jaccard(preds, labels, num_classes);
        for (const auto& e : examples) absent[h] = absent[h] && !e.features.requires_grad() && !e.features.has_grad();
    });

    for (std::size_t h = 0; h < report.heads.size(); ++h) {
        const HeadResult& a = report.heads[h];
        const HeadResult& b = report.heads[report.best];
        if (a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.f1 > b.f1)) report.best = h;
        report.backbone_grads_absent = report.backbone_grads_absent && absent[h];
    }
    return report;
}

std::vector<ProbeExample> extract_probe_features(const ParameterSet& backbone, const EncoderConfig& model,
                                                 const fs::path& task_dir, bool* backbone_grads_absent,
                                                 std::size_t* num_classes) {
    const auto labels = read_labels(task_dir / "labels.jsonl");
    if (labels.empty()) throw ContractError("probe task has no labeled clips");
    std::vector<ProbeExample> out;
    std::size_t classes = 0;
    bool absent = true;
    // The backbone is bound as tape variables so that any gradient leaking
    // into it would be visible; features are detached before use.
    Tape tape;
    const BoundParameters bound = BoundParameters::variables(tape, backbone);
    for (const auto& record : labels) {
        fs::path clip_path = record.clip_path;
        if (clip_path.is_relative()) clip_path = task_dir / clip_path;
        VideoClip clip = read_clip(clip_path);
        if (clip.frames > model.max_frames) {
            clip.frames = model.max_frames;
            clip.pixels.resize(clip.frames * clip.height * clip.width * clip.channels);
        }
        const TubeGrid grid = TubeGrid::for_clip(clip, model.patch_size);
        out.push_back({encode_full(clip, grid, bound, model).detach(), record.label});
        classes = std::max(classes, record.label + 1);
    }
    absent = bound.gradients_absent();
    if (backbone_grads_absent != nullptr) *backbone_grads_absent = absent;
    if (num_classes != nullptr) *num_classes = classes;
    return out;
}

}  // namespace tubejepa
