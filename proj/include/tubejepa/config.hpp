// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document holding the training, loss and model
// settings plus data paths. Every key is checked before any work starts and
// unknown keys are rejected. Relative paths resolve against the config file.
//
//   {
//     "stage": 1, "frames": 4, "epochs": 5, "steps": 0, "base_lr": 5e-4,
//     "weight_decay": 0.04, "betas": [0.9, 0.999], "adam_eps": 1e-8,
//     "batch_size": 8, "ema_alpha": 0.99925, "seed": 0, "warmup_steps": 10,
//     "checkpoint_every": 100, "resize_short": 0, "crop": 0,
//     "precision": "f64", "check_ema_drift": false,
//     "manifest": "corpus/manifest.jsonl", "checkpoint_out": "run/ckpt.uwt",
//     "init_checkpoint": "stage1.uwt",
//     "loss": { "lambda_st": 0.1, "lambda_var": 0.3, "tau": 0.1, "sigma0": 1.0,
//               "top_k": 3, "gamma": 2.0, "include_all_masked": false,
//               "exclude_self_affinity": false, "norm_epsilon": 1e-8 },
//     "model": { "dim": 64, "depth": 4, "heads": 4, "mlp_ratio": 4,
//                "predictor_dim": 32, "predictor_depth": 2, "predictor_heads": 4,
//                "max_tokens": 196, "max_frames": 16, "patch_size": 16,
//                "channels": 3, "init_std": 0.02 },
//     "collapse": { "baseline_lambda_var": 0.0, "trajectory": "sigma.jsonl",
//                   "summary": "collapse.json" }
//   }

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "tubejepa/trainer.hpp"

namespace tubejepa {

struct CollapseConfig {
    double baseline_lambda_var = 0.0;
    std::filesystem::path trajectory;
    std::optional<std::filesystem::path> summary;
};

struct RunConfig {
    TrainConfig train;
    std::filesystem::path manifest;
    std::filesystem::path checkpoint_out;
    std::optional<std::filesystem::path> init_checkpoint;
    std::optional<CollapseConfig> collapse;
};

// Stage-dependent defaults (frames, epochs, base_lr) apply to keys the
// document leaves out.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace tubejepa
