// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "support.hpp"
#include "tubejepa/config.hpp"
#include "tubejepa/errors.hpp"

using namespace tubejepa;

namespace {

const std::filesystem::path kBase = "/data/run";

RunConfig parse(const std::string& body) {
    return parse_run_config(R"({"manifest": "c/manifest.jsonl", "checkpoint_out": "out/ck.uwt")" + body + "}", kBase);
}

}  // namespace

TEST_CASE("defaults and relative paths") {
    const auto rc = parse("");
    CHECK(rc.train.stage == 1);
    CHECK(rc.train.frames == 16);
    CHECK(rc.train.base_lr == 5e-4);
    CHECK(rc.train.ema_alpha == 0.99925);
    CHECK(rc.train.loss.lambda_st == 0.1);
    CHECK(rc.train.loss.lambda_var == 0.3);
    CHECK(rc.train.loss.tau == 0.1);
    CHECK(rc.train.loss.top_k == 3);
    CHECK(rc.train.loss.gamma == 2.0);
    CHECK(rc.manifest == kBase / "c/manifest.jsonl");
    CHECK(rc.checkpoint_out == kBase / "out/ck.uwt");
    CHECK_FALSE(rc.init_checkpoint.has_value());
    CHECK_FALSE(rc.collapse.has_value());

    const auto abs = parse_run_config(R"({"manifest": "/m.jsonl", "checkpoint_out": "/c.uwt"})", kBase);
    CHECK(abs.manifest == "/m.jsonl");
}

TEST_CASE("stage two defaults yield to explicit keys") {
    const auto two = parse(R"(, "stage": 2, "model": {"max_frames": 64})");
    CHECK(two.train.frames == 64);
    CHECK(two.train.epochs == 2);
    CHECK(two.train.base_lr == 1.5e-4);
    const auto set = parse(R"(, "stage": 2, "frames": 8, "base_lr": 0.001)");
    CHECK_THROWS_AS(parse(R"(, "stage": 2, "model": {"max_frames": 16})"), ConfigError);
    CHECK(set.train.frames == 8);
    CHECK(set.train.base_lr == 0.001);
}

TEST_CASE("nested sections parse") {
    const auto rc = parse(R"(, "betas": [0.8, 0.9], "precision": "f32", "warmup_steps": 3,
        "loss": {"top_k": 5, "include_all_masked": true},
        "model": {"dim": 32, "heads": 2, "predictor_heads": 2, "patch_size": 4},
        "collapse": {"trajectory": "s.jsonl", "baseline_lambda_var": 0.0})");
    CHECK(rc.train.beta1 == 0.8);
    CHECK(rc.train.precision == Precision::f32);
    CHECK(rc.train.warmup_steps == std::optional<std::size_t>(3));
    CHECK(rc.train.loss.top_k == 5);
    CHECK(rc.train.loss.include_all_masked);
    CHECK(rc.train.model.dim == 32);
    REQUIRE(rc.collapse.has_value());
    CHECK(rc.collapse->trajectory == kBase / "s.jsonl");
}

TEST_CASE("invalid documents are rejected") {
    CHECK_THROWS_AS(parse(R"(, "learning_rate": 1)"), ConfigError);
    CHECK_THROWS_AS(parse(R"(, "loss": {"lambda": 1})"), ConfigError);
    CHECK_THROWS_AS(parse(R"(, "model": {"width": 1})"), ConfigError);
    CHECK_THROWS_AS(parse(R"(, "frames": "16")"), ConfigError);
    CHECK_THROWS_AS(parse(R"(, "batch_size": -1)"), ConfigError);
    CHECK_THROWS_AS(parse(R"(, "check_ema_drift": 1)"), ConfigError);
    CHECK_THROWS_AS(parse(R"(, "stage": 3)"), ConfigError);
    CHECK_THROWS_AS(parse(R"(, "precision": "f16")"), ConfigError);
    CHECK_THROWS_AS(parse(R"(, "betas": [0.9])"), ConfigError);
    CHECK_THROWS_AS(parse(R"(, "loss": {"tau": 0})"), ConfigError);
    CHECK_THROWS_AS(parse(R"(, "loss": {"lambda_var": -0.1})"), ConfigError);
    CHECK_THROWS_AS(parse(R"(, "collapse": {"baseline_lambda_var": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"checkpoint_out": "c"})", kBase), ConfigError);
    CHECK_THROWS_AS(parse_run_config("{not json", kBase), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/dir/cfg.json"), IoError);
}

TEST_CASE("config files resolve paths against their directory") {
    const auto dir = support::temp_dir("config_file");
    support::write_text(dir / "run.json", R"({"manifest": "m.jsonl", "checkpoint_out": "ck.uwt"})");
    const auto rc = load_run_config(dir / "run.json");
    CHECK(rc.manifest == dir / "m.jsonl");
}
