// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance: one PASS/FAIL line per criterion. Exit status is
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "oracles.hpp"
#include "support.hpp"
#include "tubejepa/config.hpp"
#include "tubejepa/errors.hpp"
#include "tubejepa/gradcheck_suite.hpp"
#include "tubejepa/trainer.hpp"

using namespace tubejepa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

const fs::path kConfigs = fs::path(TUBEJEPA_SOURCE_DIR) / "configs";

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// Generates a reference corpus once per work directory.
fs::path corpus(const fs::path& work, const std::string& name, std::uint64_t seed) {
    const fs::path dir = work / name;
    if (!fs::exists(dir / "manifest.jsonl")) {
        const auto spec = CorpusSpec::from_json_text(support::read_text(kConfigs / ("corpus_" + name + ".json")));
        gen_synthetic_corpus(spec, dir, seed);
    }
    return dir / "manifest.jsonl";
}

RunConfig reference_config(const fs::path& work, const std::string& file) {
    return parse_run_config(support::read_text(kConfigs / file), work);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

Outcome gradient_fidelity() {
    const auto start = std::chrono::steady_clock::now();
    std::size_t checks = 0, failed = 0;
    double worst = 0.0;
    for (const char* module : {"losses", "networks"}) {
        SuiteOptions options;
        options.module = module;
        options.seed = 0;
        options.repeats = 20;
        for (const auto& c : run_gradcheck_suite(options)) {
            ++checks;
            failed += !c.report.passed;
            worst = std::max(worst, c.report.max_rel_error);
        }
    }
    const double t = seconds_since(start);
    return {failed == 0 && checks == 8 * 20 && t < 60.0,
            std::to_string(checks) + " checks over 20 seeds, " + std::to_string(failed) + " failed, max rel error " +
                num(worst) + ", " + num(t) + " s"};
}

Outcome loss_oracles() {
    double worst = 0.0;
    // Motion score on the two-tube clip: pixels scaled by 1/255, so 255 g = [5, 3].
    const VideoClip clip{2, 1, 2, 1, 1.0, {0, 4, 2, 4}};
    const TubeGrid grid{1, 1, 2};
    const auto g = motion_scores(clip, grid);
    const auto g_ref = oracle::motion_scores(clip, grid);
    for (std::size_t i = 0; i < 2; ++i) worst = std::max(worst, std::abs(g[i] - g_ref[i]));
    const bool g_ok = std::abs(255.0 * g[0] - 5.0) < 1e-9 && std::abs(255.0 * g[1] - 3.0) < 1e-9;

    const std::vector<double> scores{1.0, 0.5, 0.5, 0.0};
    const std::vector<std::size_t> masked{0, 1, 2, 3};
    const auto top = select_topk_weights(scores, masked, 3, 2.0);
    const auto top_ref = oracle::softmax({2.0, 1.0, 1.0});
    for (std::size_t i = 0; i < 3; ++i) worst = std::max(worst, std::abs(top.weights[i] - top_ref[i]));
    const bool top_ok = std::abs(top.weights[0] - 0.5761) < 1e-4 && std::abs(top.weights[1] - 0.2119) < 1e-4;

    // Teacher affinity rows [0.9, 0.1] and [0.1, 0.9]; uniform student rows.
    const double c = 1.0 - 0.1 * std::log(9.0);
    const oracle::Matrix teacher{{1.0, 0.0}, {c, std::sqrt(1.0 - c * c)}};
    const auto student = Tensor::constant({2, 2}, {1, 1, 2, 2});
    const double kl = st_distillation_loss(student, oracle::to_tensor(teacher), LossConfig{}).item();
    worst = std::max(worst, std::abs(kl - oracle::st_loss(oracle::to_matrix(student), teacher, 0.1)));
    const bool kl_ok = std::abs(kl - 0.3681) < 1e-4;

    const double r2 = std::sqrt(2.0);
    const auto z = Tensor::constant({2, 2}, {0, 0, 0.5 * r2, 2.0 * r2});
    const double var = variance_loss(z, LossConfig{}).item();
    worst = std::max(worst, std::abs(var - oracle::variance_loss(oracle::to_matrix(z), 1.0)));
    const bool var_ok = std::abs(var - 0.25) < 1e-9;

    return {g_ok && top_ok && kl_ok && var_ok && worst < 1e-9,
            "255g = [" + num(255 * g[0]) + ", " + num(255 * g[1]) + "], w = [" + num(top.weights[0]) + ", " +
                num(top.weights[1]) + ", " + num(top.weights[2]) + "], KL " + num(kl) + ", var " + num(var) +
                ", max oracle gap " + num(worst)};
}

Outcome saliency_localization(const fs::path& work) {
    const auto start = std::chrono::steady_clock::now();
    const fs::path dir = work / "saliency";
    CorpusSpec spec = CorpusSpec::from_json_text(support::read_text(kConfigs / "corpus_mixed.json"));
    spec.groups = {CorpusGroup{"moving_square", 100, "squares", "motion", {}}};
    gen_synthetic_corpus(spec, dir, 31);
    const Manifest manifest = read_manifest(dir / "manifest.jsonl");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const fs::path clip_path = resolve_clip_path(dir / "manifest.jsonl", manifest[i]);
        const VideoClip clip = read_clip(clip_path);
        const Occupancy occ = read_occupancy(sidecar_path(clip_path));
        const TubeGrid grid = TubeGrid::for_clip(clip, occ.patch_size);
        Rng rng = make_rng(i, 3);
        const auto part = make_partition(sample_mask(grid, rng), motion_scores(clip, grid), 3, 2.0);
        const auto occupied = occ.all_tubes();
        hits += std::all_of(part.high_motion.begin(), part.high_motion.end(),
                            [&](std::size_t t) { return std::binary_search(occupied.begin(), occupied.end(), t); });
    }
    const double t = seconds_since(start);
    return {hits >= 98 && t < 30.0, std::to_string(hits) + "/100 clips with top-K inside the occupied tubes, " +
                                        num(t) + " s"};
}

Outcome anti_collapse(const fs::path& work) {
    const auto start = std::chrono::steady_clock::now();
    corpus(work, "homogeneous", 3);
    const RunConfig rc = reference_config(work, "collapse.json");
    const Dataset data = Dataset::load(rc.manifest);
    const CollapseResult r = run_collapse_experiment(rc.train, data, rc.collapse->baseline_lambda_var);
    const double t = seconds_since(start);
    return {r.ratio >= 2.0 && r.baseline_tail_rho < 0.0 && t < 600.0,
            "sigma " + num(r.sigma_treatment.back()) + " vs " + num(r.sigma_baseline.back()) + ", ratio " +
                num(r.ratio) + " (need >= 2), baseline tail Spearman " + num(r.baseline_tail_rho) +
                " (need < 0), " + num(t) + " s"};
}

Outcome training_progress(const fs::path& work) {
    corpus(work, "mixed", 7);
    RunConfig rc = reference_config(work, "pretrain_stage1.json");
    const Dataset data = Dataset::load(rc.manifest);
    StageOptions o;
    o.checkpoint_out = work / "progress.uwt";
    const StageResult r = run_stage(rc.train, data, o);
    double worst = 0.0;
    for (const auto& rep : r.reports) {
        const auto& l = rc.train.loss;
        worst = std::max(worst, std::abs(rep.total - (rep.motion + l.lambda_st * rep.st + l.lambda_var * rep.var)));
    }
    const double first = r.reports.front().total, last = r.reports.back().total;
    const double drop = 1.0 - last / first;
    return {r.reports.size() == 200 && drop >= 0.30 && worst <= 1e-10,
            "total " + num(first) + " -> " + num(last) + " over " + std::to_string(r.reports.size()) + " steps (" +
                num(100 * drop) + "% drop), recomposition gap " + num(worst)};
}

Outcome distributions() {
    const TubeGrid grid{16, 14, 14};
    Rng rng = make_rng(2026);
    double sum = 0.0;
    const std::size_t draws = 10000;
    for (std::size_t i = 0; i < draws; ++i) sum += static_cast<double>(sample_mask(grid, rng).masked.size()) / 196.0;
    const double mean_ratio = sum / draws;

    // Three specialties with very unequal dataset sizes.
    Manifest m;
    const std::vector<std::tuple<std::string, std::string, std::size_t>> groups{
        {"a", "s1", 40}, {"b", "s1", 3}, {"c", "s2", 7}, {"d", "s3", 1}, {"e", "s3", 25}, {"f", "s3", 9}};
    for (const auto& [dataset, specialty, n] : groups)
        for (std::size_t i = 0; i < n; ++i) m.push_back({dataset + "/" + std::to_string(i), dataset, specialty, 16});
    const auto table = build_weight_table(m);
    std::map<std::string, double> mass;
    const std::size_t samples = 100000;
    for (std::size_t i : sample_indices(table, samples, rng)) mass[m[i].specialty_id] += 1.0 / samples;
    double worst = 0.0;
    for (const auto& [s, v] : mass) worst = std::max(worst, std::abs(v - 1.0 / 3.0) * 3.0);
    return {mean_ratio >= 0.84 && mean_ratio <= 0.86 && mass.size() == 3 && worst <= 0.02,
            "mean mask ratio " + num(mean_ratio) + ", specialty masses " + num(mass["s1"]) + " / " + num(mass["s2"]) +
                " / " + num(mass["s3"]) + " (max relative deviation " + num(worst) + ")"};
}

Outcome gradient_audits() {
    std::size_t leaks = 0, blind_failures = 0, runs = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const TinyInstance t = make_tiny_instance(seed);
        for (LossTerm term : {LossTerm::motion, LossTerm::st, LossTerm::var, LossTerm::total}) {
            Tape tape;
            const auto student = BoundParameters::variables(tape, t.student);
            const auto teacher = BoundParameters::variables(tape, t.teacher);
            const Tensor visible = encode_visible(t.clip, t.grid, t.partition, student, t.model);
            const Tensor pred = predict_masked(visible, t.partition, student, t.model).masked;
            const Tensor target_raw = encode_full(t.clip, t.grid, teacher, t.model);
            const Tensor target = target_raw.detach();
            const ClipOutputs out{pred, target, &t.partition};
            const CompositeLoss loss = composite_loss(std::span<const ClipOutputs>(&out, 1), t.loss);
            const Tensor& chosen = term == LossTerm::motion ? loss.motion
                                   : term == LossTerm::st   ? loss.st
                                   : term == LossTerm::var  ? loss.var
                                                            : loss.total;
            tape.backward(chosen);
            leaks += !teacher.gradients_absent() || target_raw.has_grad() || target.has_grad();
            ++runs;
        }
    }
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        TinyInstance t = make_tiny_instance(seed);
        const auto bound = BoundParameters::constants(t.student);
        const Tensor before = encode_visible(t.clip, t.grid, t.partition, bound, t.model);
        Rng rng = make_rng(seed, 77);
        const std::size_t p = t.grid.patch_size;
        for (std::size_t tube : t.partition.masked) {
            const std::size_t r = tube / t.grid.grid_w, c = tube % t.grid.grid_w;
            for (std::size_t f = 0; f < t.clip.frames; ++f)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x)
                        for (std::size_t ch = 0; ch < t.clip.channels; ++ch)
                            t.clip.pixels[t.clip.index(f, r * p + y, c * p + x, ch)] =
                                static_cast<std::uint8_t>(uniform_index(rng, 256));
        }
        blind_failures += !bitwise_equal(before, encode_visible(t.clip, t.grid, t.partition, bound, t.model));
    }
    return {leaks == 0 && blind_failures == 0,
            std::to_string(leaks) + "/" + std::to_string(runs) + " backward passes leaked into the teacher, " +
                std::to_string(blind_failures) + "/50 context encodings changed under masked-pixel noise"};
}

Outcome determinism(const fs::path& work) {
    corpus(work, "mixed", 7);
    std::string text = support::read_text(kConfigs / "pretrain_stage1.json");
    const fs::path cfg = work / "determinism.json";
    support::write_text(cfg, text);
    const std::string cli = TUBEJEPA_CLI;
    auto run = [&](const std::string& args) {
        return support::run(cli + " pretrain --config " + cfg.string() + " " + args + " > /dev/null 2>&1");
    };
    const fs::path ckpt = work / "stage1" / "checkpoint.uwt";
    bool ok = run("--metrics " + (work / "a.jsonl").string()) == 0;
    fs::rename(ckpt, work / "a.uwt");
    ok = ok && run("--metrics " + (work / "b.jsonl").string()) == 0;
    fs::rename(ckpt, work / "b.uwt");
    ok = ok && run("--metrics " + (work / "c.jsonl").string() + " --stop-after 73") == 0;
    ok = ok && run("--metrics " + (work / "c.jsonl").string() + " --resume " + ckpt.string()) == 0;
    const auto a = support::read_text(work / "a.jsonl");
    const bool repeat = ok && !a.empty() && a == support::read_text(work / "b.jsonl") &&
                        support::read_bytes(work / "a.uwt") == support::read_bytes(work / "b.uwt");
    const bool resume = ok && a == support::read_text(work / "c.jsonl") &&
                        support::read_bytes(work / "a.uwt") == support::read_bytes(ckpt);
    TrainState::load(work / "a.uwt").save(work / "resaved.uwt");
    const bool bytes = support::read_bytes(work / "a.uwt") == support::read_bytes(work / "resaved.uwt");
    return {repeat && resume && bytes, std::string("repeat ") + (repeat ? "identical" : "DIFFERS") + ", resume " +
                                           (resume ? "identical" : "DIFFERS") + ", save/load/save " +
                                           (bytes ? "byte-identical" : "DIFFERS")};
}

Outcome probe_protocol(const fs::path& work) {
    const fs::path backbone = work / "progress.uwt";
    if (!fs::exists(backbone)) training_progress(work);
    const fs::path task = work / "probe";
    gen_synthetic_corpus(CorpusSpec::from_json_text(support::read_text(kConfigs / "corpus_probe.json")), task, 5);
    EncoderConfig model;
    const ParameterSet params = load_backbone(backbone, &model);
    bool absent = true;
    std::size_t classes = 0;
    const auto examples = extract_probe_features(params, model, task, &absent, &classes);
    ProbeSweepConfig config;
    const auto report = probe_sweep(examples, classes, config);
    const double best = report.heads[report.best].accuracy;

    const std::vector<std::size_t> labels{1, 1, 0, 0}, preds{1, 0, 1, 0};
    const double acc = accuracy(preds, labels), f1 = macro_f1(preds, labels, 2), jac = jaccard(preds, labels, 2);
    const bool metrics_ok = acc == 0.5 && std::abs(f1 - 0.5) < 1e-15 && std::abs(jac - 1.0 / 3.0) < 1e-15;
    return {report.heads.size() == 16 && best == 1.0 && absent && report.backbone_grads_absent && metrics_ok,
            std::to_string(report.heads.size()) + " heads, best accuracy " + num(best) + ", backbone grads " +
                (absent && report.backbone_grads_absent ? "absent" : "PRESENT") + ", confusion example acc " +
                num(acc) + " F1 " + num(f1) + " Jaccard " + num(jac)};
}

Outcome ema_contract(const fs::path& work) {
    ParameterSet s, e;
    s.add("w", {3}, {1.0, 2.0, -1.0});
    e.add("w", {3}, {0.0, 5.0, 4.0});
    auto frozen = e;
    ema_update(s, frozen, 1.0);
    auto copy = e;
    ema_update(s, copy, 0.0);
    ParameterSet one_s, one_e;
    one_s.add("x", {1}, {1.0});
    one_e.add("x", {1}, {0.0});
    ema_update(one_s, one_e, 0.99925);
    const bool cases = frozen == e && copy == s && std::abs(one_e.at("x").values[0] - 0.00075) <= 1e-15;

    corpus(work, "mixed", 7);
    RunConfig rc = reference_config(work, "collapse.json");
    rc.train.check_ema_drift = true;
    rc.train.model.max_tokens = 64;
    const Dataset data = Dataset::load(work / "mixed" / "manifest.jsonl");
    TrainState state = TrainState::initialize(rc.train);
    std::size_t violations = 0;
    double worst_ratio = 0.0;
    const std::size_t total = 500;
    for (std::size_t i = 0; i < total; ++i) {
        const auto batch = draw_batch(data, rc.train, state.rng);
        const double lr = cosine_lr(state.step + 1, total, rc.train.base_lr, rc.train.warmup_for(total));
        try {
            const StepResult r = train_step(state, batch, rc.train, lr);
            if (r.drift_bound > 0.0) worst_ratio = std::max(worst_ratio, r.teacher_drift / r.drift_bound);
        } catch (const NumericError&) {
            ++violations;
            break;
        }
    }
    return {cases && violations == 0 && state.step == total,
            std::string("alpha 1/0/0.99925 cases ") + (cases ? "hold" : "FAIL") + ", " + std::to_string(state.step) +
                " steps within the drift bound (max drift/bound " + num(worst_ratio) + ")"};
}

}  // namespace

int main() {
    const fs::path work = support::temp_dir("acceptance");
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient fidelity", gradient_fidelity},
        {"loss oracles", loss_oracles},
        {"saliency localization", [&] { return saliency_localization(work); }},
        {"anti-collapse", [&] { return anti_collapse(work); }},
        {"training progress", [&] { return training_progress(work); }},
        {"distribution checks", distributions},
        {"stop-gradient and masking audits", gradient_audits},
        {"determinism and persistence", [&] { return determinism(work); }},
        {"probe protocol", [&] { return probe_protocol(work); }},
        {"EMA contract", [&] { return ema_contract(work); }},
    };
    std::size_t failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << i + 1 << " " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
