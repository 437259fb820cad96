// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include "tubejepa/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tubejepa/errors.hpp"

namespace tubejepa {

namespace {

using json = nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& item : j.items()) {
        if (!allowed.contains(item.key())) throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    try {
        if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_unsigned()) throw ConfigError(where + "." + key + ": expected a nonnegative integer");
        } else if constexpr (std::is_same_v<T, int>) {
            if (!v.is_number_integer()) throw ConfigError(where + "." + key + ": expected an integer");
        } else if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected true or false");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
        }
        out = v.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
    const std::filesystem::path p(value);
    return p.is_relative() ? base / p : p;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    check_keys(j,
               {"stage", "frames", "epochs", "steps", "base_lr", "weight_decay", "betas", "adam_eps", "batch_size",
                "ema_alpha", "seed", "warmup_steps", "checkpoint_every", "resize_short", "crop", "precision",
                "check_ema_drift", "manifest", "checkpoint_out", "init_checkpoint", "loss", "model", "collapse"},
               "config");

    RunConfig rc;
    TrainConfig& t = rc.train;
    read(j, "stage", t.stage, "config");
    if (t.stage != 1 && t.stage != 2) throw ConfigError("config.stage: must be 1 or 2");
    if (t.stage == 2) {
        t.frames = 64;
        t.epochs = 2;
        t.base_lr = 1.5e-4;
    }
    read(j, "frames", t.frames, "config");
    read(j, "epochs", t.epochs, "config");
    read(j, "steps", t.steps, "config");
    read(j, "base_lr", t.base_lr, "config");
    read(j, "weight_decay", t.weight_decay, "config");
    if (j.contains("betas")) {
        const json& b = j.at("betas");
        if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number()) {
            throw ConfigError("config.betas: expected two numbers");
        }
        t.beta1 = b[0].get<double>();
        t.beta2 = b[1].get<double>();
    }
    read(j, "adam_eps", t.adam_eps, "config");
    read(j, "batch_size", t.batch_size, "config");
    read(j, "ema_alpha", t.ema_alpha, "config");
    read(j, "seed", t.seed, "config");
    if (j.contains("warmup_steps")) {
        std::size_t w = 0;
        read(j, "warmup_steps", w, "config");
        t.warmup_steps = w;
    }
    read(j, "checkpoint_every", t.checkpoint_every, "config");
    read(j, "resize_short", t.resize_short, "config");
    read(j, "crop", t.crop, "config");
    std::string precision = "f64";
    read(j, "precision", precision, "config");
    if (precision == "f64") {
        t.precision = Precision::f64;
    } else if (precision == "f32") {
        t.precision = Precision::f32;
    } else {
        throw ConfigError("config.precision: expected \"f64\" or \"f32\"");
    }
    read(j, "check_ema_drift", t.check_ema_drift, "config");

    std::string path;
    if (!j.contains("manifest")) throw ConfigError("config: missing key 'manifest'");
    read(j, "manifest", path, "config");
    rc.manifest = resolve(base_dir, path);
    if (!j.contains("checkpoint_out")) throw ConfigError("config: missing key 'checkpoint_out'");
    read(j, "checkpoint_out", path, "config");
    rc.checkpoint_out = resolve(base_dir, path);
    if (j.contains("init_checkpoint")) {
        read(j, "init_checkpoint", path, "config");
        rc.init_checkpoint = resolve(base_dir, path);
    }

    if (j.contains("loss")) {
        const json& l = j.at("loss");
        check_keys(l,
                   {"lambda_st", "lambda_var", "tau", "sigma0", "top_k", "gamma", "include_all_masked",
                    "exclude_self_affinity", "norm_epsilon"},
                   "config.loss");
        LossConfig& c = t.loss;
        read(l, "lambda_st", c.lambda_st, "config.loss");
        read(l, "lambda_var", c.lambda_var, "config.loss");
        read(l, "tau", c.tau, "config.loss");
        read(l, "sigma0", c.sigma0, "config.loss");
        read(l, "top_k", c.top_k, "config.loss");
        read(l, "gamma", c.gamma, "config.loss");
        read(l, "include_all_masked", c.include_all_masked, "config.loss");
        read(l, "exclude_self_affinity", c.exclude_self_affinity, "config.loss");
        read(l, "norm_epsilon", c.norm_epsilon, "config.loss");
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m,
                   {"dim", "depth", "heads", "mlp_ratio", "predictor_dim", "predictor_depth", "predictor_heads",
                    "max_tokens", "max_frames", "patch_size", "channels", "init_std"},
                   "config.model");
        EncoderConfig& c = t.model;
        read(m, "dim", c.dim, "config.model");
        read(m, "depth", c.depth, "config.model");
        read(m, "heads", c.heads, "config.model");
        read(m, "mlp_ratio", c.mlp_ratio, "config.model");
        read(m, "predictor_dim", c.predictor_dim, "config.model");
        read(m, "predictor_depth", c.predictor_depth, "config.model");
        read(m, "predictor_heads", c.predictor_heads, "config.model");
        read(m, "max_tokens", c.max_tokens, "config.model");
        read(m, "max_frames", c.max_frames, "config.model");
        read(m, "patch_size", c.patch_size, "config.model");
        read(m, "channels", c.channels, "config.model");
        read(m, "init_std", c.init_std, "config.model");
    }
    if (j.contains("collapse")) {
        const json& c = j.at("collapse");
        check_keys(c, {"baseline_lambda_var", "trajectory", "summary"}, "config.collapse");
        CollapseConfig cc;
        read(c, "baseline_lambda_var", cc.baseline_lambda_var, "config.collapse");
        if (!c.contains("trajectory")) throw ConfigError("config.collapse: missing key 'trajectory'");
        read(c, "trajectory", path, "config.collapse");
        cc.trajectory = resolve(base_dir, path);
        if (c.contains("summary")) {
            read(c, "summary", path, "config.collapse");
            cc.summary = resolve(base_dir, path);
        }
        if (!(cc.baseline_lambda_var >= 0.0)) throw ConfigError("config.collapse.baseline_lambda_var: must be nonnegative");
        rc.collapse = cc;
    }
    t.validate();
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_run_config(text.str(), path.parent_path());
}

}  // namespace tubejepa
