// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0
//
// tubejepa: corpus generation, pretraining, verification and probing.
//
// Exit codes: 0 ok, 2 configuration, 3 I/O or format, 4 numeric abort,
// 5 verification failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "tubejepa/config.hpp"
#include "tubejepa/errors.hpp"
#include "tubejepa/gradcheck_suite.hpp"
#include "tubejepa/trainer.hpp"
#include "tubejepa/tubes.hpp"
#include "tubejepa/video.hpp"

namespace fs = std::filesystem;
using namespace tubejepa;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitVerify = 5;

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3e", v);
    return buf;
}

int cmd_gen_corpus(const fs::path& out, const fs::path& spec_path, std::uint64_t seed) {
    const CorpusSpec spec = CorpusSpec::from_json_text(read_text(spec_path));
    const CorpusSummary summary = gen_synthetic_corpus(spec, out, seed);
    std::cout << "clips " << summary.clips << "\n";
    std::cout << "sidecars " << summary.sidecars << "\n";
    for (const auto& [generator, n] : summary.per_generator) std::cout << "generator " << generator << " " << n << "\n";
    return 0;
}

int cmd_pretrain(const fs::path& config_path, const std::string& resume, const fs::path& metrics, std::size_t stop_after) {
    const RunConfig rc = load_run_config(config_path);
    StageOptions options;
    options.checkpoint_out = rc.checkpoint_out;
    if (!resume.empty()) {
        options.checkpoint_in = fs::path(resume);
    } else if (rc.init_checkpoint) {
        options.checkpoint_in = rc.init_checkpoint;
    }
    if (rc.train.stage == 2 && !options.checkpoint_in) {
        throw ConfigError("stage 2 requires --resume or init_checkpoint");
    }
    options.metrics_path = metrics;
    options.stop_after = stop_after;
    const Dataset data = Dataset::load(rc.manifest);
    if (rc.checkpoint_out.has_parent_path()) fs::create_directories(rc.checkpoint_out.parent_path());
    if (metrics.has_parent_path()) fs::create_directories(metrics.parent_path());
    try {
        const StageResult r = run_stage(rc.train, data, options);
        std::cout << "steps " << r.final_step << "/" << r.total_steps << "\n";
        if (!r.reports.empty()) std::cout << "final_total " << r.reports.back().total << "\n";
        std::cout << "checkpoint " << rc.checkpoint_out.string() << "\n";
    } catch (const NumericError& e) {
        std::cerr << "error: non-finite values, training aborted: " << e.what() << "\n";
        std::cerr << "last checkpoint: " << rc.checkpoint_out.string()
                  << (fs::exists(rc.checkpoint_out) ? "" : " (none written yet)") << "\n";
        return kExitNumeric;
    }
    return 0;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed, std::size_t repeats, const std::string& fault) {
    if (!fault.empty()) testing::set_backward_fault(fault);
    SuiteOptions options;
    options.module = module;
    options.seed = seed;
    options.repeats = repeats;
    std::vector<SuiteCheck> checks;
    try {
        checks = run_gradcheck_suite(options);
    } catch (const OracleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitVerify;
    }
    // One line per check, worst case over seeds.
    std::map<std::string, std::pair<bool, double>> summary;
    std::vector<std::string> order;
    for (const auto& c : checks) {
        const std::string key = c.module + "/" + c.name;
        auto [it, inserted] = summary.emplace(key, std::make_pair(true, 0.0));
        if (inserted) order.push_back(key);
        it->second.first = it->second.first && c.report.passed;
        it->second.second = std::max(it->second.second, c.report.max_rel_error);
    }
    std::size_t failed = 0;
    for (const auto& key : order) {
        const auto& [ok, rel] = summary[key];
        std::cout << (ok ? "PASS " : "FAIL ") << key << " max_rel_error=" << fmt(rel) << " seeds=" << repeats << "\n";
        failed += !ok;
    }
    if (failed > 0) {
        std::cout << failed << " check(s) failed:";
        for (const auto& key : order)
            if (!summary[key].first) std::cout << " " << key;
        std::cout << "\n";
        return kExitVerify;
    }
    std::cout << "all " << order.size() << " checks passed\n";
    return 0;
}

int cmd_inspect_mask(const fs::path& clip_path, std::uint64_t seed, const std::string& prefix, std::size_t patch_size) {
    const VideoClip clip = read_clip(clip_path);
    if (patch_size == 0) {
        const fs::path sidecar = sidecar_path(clip_path);
        patch_size = fs::exists(sidecar) ? read_occupancy(sidecar).patch_size : 16;
    }
    if (clip.height % patch_size != 0 || clip.width % patch_size != 0) {
        throw ConfigError("patch size " + std::to_string(patch_size) + " does not divide the clip frame");
    }
    const TubeGrid grid = TubeGrid::for_clip(clip, patch_size);
    Rng rng = make_rng(seed);
    const MaskSample mask = sample_mask(grid, rng);
    const LossConfig loss;
    const TubePartition part = make_partition(mask, motion_scores(clip, grid), loss.top_k, loss.gamma);

    write_pgm(saliency_heatmap(part.motion, grid), prefix + ".saliency.pgm");
    nlohmann::ordered_json m;
    m["grid_h"] = grid.grid_h;
    m["grid_w"] = grid.grid_w;
    m["rho"] = mask.rho;
    m["visible"] = part.visible;
    m["masked"] = part.masked;
    write_text(prefix + ".mask.json", m.dump() + "\n");
    nlohmann::ordered_json t;
    t["k"] = loss.top_k;
    t["gamma"] = loss.gamma;
    t["indices"] = part.high_motion;
    t["weights"] = part.weights;
    t["scores"] = part.motion;
    write_text(prefix + ".topk.json", t.dump() + "\n");
    std::cout << "tubes " << grid.count() << " masked " << part.masked.size() << " top_k";
    for (std::size_t i : part.high_motion) std::cout << " " << i;
    std::cout << "\n";
    return 0;
}

int cmd_eval_collapse(const fs::path& config_path) {
    const RunConfig rc = load_run_config(config_path);
    if (!rc.collapse) throw ConfigError("config has no \"collapse\" section");
    const Dataset data = Dataset::load(rc.manifest);
    const CollapseResult r = run_collapse_experiment(rc.train, data, rc.collapse->baseline_lambda_var);

    std::string trajectory;
    for (std::size_t i = 0; i < r.sigma_treatment.size(); ++i) {
        nlohmann::ordered_json j;
        j["step"] = i + 1;
        j["sigma_treatment"] = r.sigma_treatment[i];
        j["sigma_baseline"] = r.sigma_baseline[i];
        trajectory += j.dump() + "\n";
    }
    write_text(rc.collapse->trajectory, trajectory);
    const bool passed = r.ratio >= 2.0;
    nlohmann::ordered_json s;
    s["steps"] = r.sigma_treatment.size();
    s["lambda_var"] = rc.train.loss.lambda_var;
    s["baseline_lambda_var"] = rc.collapse->baseline_lambda_var;
    s["final_sigma_treatment"] = r.sigma_treatment.back();
    s["final_sigma_baseline"] = r.sigma_baseline.back();
    s["ratio"] = r.ratio;
    s["baseline_tail_spearman"] = r.baseline_tail_rho;
    s["passed"] = passed;
    const std::string summary = s.dump(2) + "\n";
    if (rc.collapse->summary) write_text(*rc.collapse->summary, summary);
    std::cout << summary;
    return passed ? 0 : kExitVerify;
}

int cmd_probe(const fs::path& backbone_path, const fs::path& task_dir, const fs::path& out, std::uint64_t seed,
              std::size_t epochs) {
    EncoderConfig model;
    const ParameterSet backbone = load_backbone(backbone_path, &model);
    bool absent = true;
    std::size_t classes = 0;
    const auto examples = extract_probe_features(backbone, model, task_dir, &absent, &classes);
    ProbeSweepConfig config;
    config.seed = seed;
    config.epochs = epochs;
    ProbeSweepReport report = probe_sweep(examples, classes, config);
    report.backbone_grads_absent = report.backbone_grads_absent && absent;
    write_text(out, report.to_json());
    const HeadResult& best = report.heads[report.best];
    std::cout << "best_head " << report.best << " accuracy " << best.accuracy << " f1 " << best.f1 << " jaccard "
              << best.jaccard << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tube-token latent prediction: data, training and verification tools"};
    app.require_subcommand(1);

    std::string out_dir, spec_path;
    std::uint64_t seed = 0;
    auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic clip corpus with manifest and sidecars");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--spec", spec_path, "corpus spec JSON")->required();
    gen->add_option("--seed", seed, "generator seed")->required();

    std::string config_path, resume, metrics;
    std::size_t stop_after = 0;
    auto* pretrain = app.add_subcommand("pretrain", "Run one training stage");
    pretrain->add_option("--config", config_path, "run config JSON")->required();
    pretrain->add_option("--resume", resume, "checkpoint to continue from");
    pretrain->add_option("--metrics", metrics, "metrics JSONL output")->required();
    pretrain->add_option("--stop-after", stop_after, "stop after this many steps (interrupt simulation)")->group("");

    std::string module, fault;
    std::size_t repeats = 3;
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference verification of every gradient");
    grad->add_option("--module", module, "tensor | losses | networks");
    grad->add_option("--seed", seed, "base seed")->required();
    grad->add_option("--repeats", repeats, "seeds per check");
    grad->add_option("--inject-fault", fault, "negate the backward of one op (self-test)")->group("");

    std::string clip_path, prefix;
    std::size_t patch_size = 0;
    auto* inspect = app.add_subcommand("inspect-mask", "Export saliency, mask and top-K selection for one clip");
    inspect->add_option("--clip", clip_path, "UVC1 clip")->required();
    inspect->add_option("--seed", seed, "mask seed")->required();
    inspect->add_option("--out", prefix, "output path prefix")->required();
    inspect->add_option("--patch-size", patch_size, "tube patch size (default: sidecar value, else 16)");

    auto* collapse = app.add_subcommand("eval-collapse", "Paired variance-regularization experiment");
    collapse->add_option("--config", config_path, "run config JSON with a collapse section")->required();

    std::string backbone, task, report_out;
    std::size_t epochs = 20;
    auto* probe = app.add_subcommand("probe", "16-head attentive probe sweep on a frozen backbone");
    probe->add_option("--backbone", backbone, "checkpoint")->required();
    probe->add_option("--task", task, "labeled corpus directory")->required();
    probe->add_option("--out", report_out, "report JSON")->required();
    probe->add_option("--seed", seed, "sweep seed");
    probe->add_option("--epochs", epochs, "epochs per head");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*gen) return cmd_gen_corpus(out_dir, spec_path, seed);
        if (*pretrain) return cmd_pretrain(config_path, resume, metrics, stop_after);
        if (*grad) return cmd_gradcheck(module, seed, repeats, fault);
        if (*inspect) return cmd_inspect_mask(clip_path, seed, prefix, patch_size);
        if (*collapse) return cmd_eval_collapse(config_path);
        if (*probe) return cmd_probe(backbone, task, report_out, seed, epochs);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const OracleError& e) {
        std::cerr << "verification error: " << e.what() << "\n";
        return kExitVerify;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
