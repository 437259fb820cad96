// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "support.hpp"
#include "tubejepa/trainer.hpp"

namespace fs = std::filesystem;

namespace {

const char* kSpec = R"({
  "frames": 4, "height": 16, "width": 16, "channels": 1, "patch_size": 4,
  "groups": [
    {"generator": "moving_square", "count": 3, "dataset_id": "ms", "specialty_id": "a",
     "params": {"square_size": 4, "speed": 4}},
    {"generator": "noise_field", "count": 2, "dataset_id": "nf", "specialty_id": "b"}
  ]})";

const char* kModel = R"("model": {"dim": 8, "depth": 1, "heads": 2, "mlp_ratio": 2, "predictor_dim": 8,
  "predictor_depth": 1, "predictor_heads": 2, "max_tokens": 16, "max_frames": 4, "patch_size": 4, "channels": 1})";

int cli(const std::string& args, const fs::path& log) {
    return support::run(std::string(TUBEJEPA_CLI) + " " + args + " > " + log.string() + " 2>&1");
}

std::string tree_digest(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + support::read_text(f);
    return all;
}

fs::path corpus(const fs::path& dir) {
    support::write_text(dir / "spec.json", kSpec);
    REQUIRE(cli("gen-corpus --out " + (dir / "corpus").string() + " --spec " + (dir / "spec.json").string() +
                    " --seed 4",
                dir / "gen.log") == 0);
    return dir / "corpus";
}

void write_config(const fs::path& path, const std::string& extra) {
    support::write_text(path, std::string(R"({"manifest": "corpus/manifest.jsonl", "checkpoint_out": "ck.uwt",
        "frames": 4, "steps": 6, "batch_size": 2, "checkpoint_every": 2, "seed": 3, )") + kModel + extra + "}");
}

}  // namespace

TEST_CASE("gen-corpus is deterministic") {
    const auto a = support::temp_dir("cli_gen_a"), b = support::temp_dir("cli_gen_b");
    corpus(a);
    corpus(b);
    CHECK(tree_digest(a / "corpus") == tree_digest(b / "corpus"));
    CHECK(fs::exists(a / "corpus" / "labels.jsonl"));
    CHECK(support::read_text(a / "gen.log").find("sidecars 3") != std::string::npos);
}

TEST_CASE("exit codes") {
    const auto dir = support::temp_dir("cli_exit");
    corpus(dir);
    CHECK(cli("no-such-command", dir / "x.log") == 2);
    CHECK(cli("gen-corpus --out " + (dir / "o").string(), dir / "x.log") == 2);

    support::write_text(dir / "bad.json", R"({"manifest": "corpus/manifest.jsonl", "checkpoint_out": "c", "lr": 1})");
    CHECK(cli("pretrain --config " + (dir / "bad.json").string() + " --metrics " + (dir / "m.jsonl").string(),
              dir / "x.log") == 2);
    CHECK(cli("pretrain --config " + (dir / "missing.json").string() + " --metrics " + (dir / "m.jsonl").string(),
              dir / "x.log") == 3);
    CHECK(cli("inspect-mask --clip " + (dir / "nope.uvc").string() + " --seed 1 --out " + (dir / "p").string(),
              dir / "x.log") == 3);

    support::write_text(dir / "huge.json", std::string(R"({"manifest": "corpus/manifest.jsonl", "checkpoint_out": "huge.uwt",
        "frames": 4, "steps": 20, "batch_size": 2, "base_lr": 1e300, "warmup_steps": 1, )") + kModel + "}");
    CHECK(cli("pretrain --config " + (dir / "huge.json").string() + " --metrics " + (dir / "h.jsonl").string(),
              dir / "huge.log") == 4);

    CHECK(cli("gradcheck --module tensor --seed 1 --repeats 2 --inject-fault softmax", dir / "fault.log") == 5);
    CHECK(support::read_text(dir / "fault.log").find("FAIL tensor/softmax") != std::string::npos);
}

TEST_CASE("gradcheck filters by module") {
    const auto dir = support::temp_dir("cli_grad");
    CHECK(cli("gradcheck --module losses --seed 7 --repeats 2", dir / "g.log") == 0);
    const auto text = support::read_text(dir / "g.log");
    CHECK(text.find("PASS losses/") != std::string::npos);
    CHECK(text.find("tensor/") == std::string::npos);
    CHECK(text.find("all 4 checks passed") != std::string::npos);
    CHECK(cli("gradcheck --module bogus --seed 7", dir / "b.log") == 2);
}

TEST_CASE("pretrain resumes to identical metrics and checkpoint") {
    const auto dir = support::temp_dir("cli_pretrain");
    corpus(dir);
    write_config(dir / "run.json", "");
    const std::string base = "pretrain --config " + (dir / "run.json").string();
    REQUIRE(cli(base + " --metrics " + (dir / "full.jsonl").string(), dir / "a.log") == 0);
    fs::rename(dir / "ck.uwt", dir / "full.uwt");
    REQUIRE(cli(base + " --metrics " + (dir / "part.jsonl").string() + " --stop-after 3", dir / "b.log") == 0);
    REQUIRE(cli(base + " --metrics " + (dir / "part.jsonl").string() + " --resume " + (dir / "ck.uwt").string(),
                dir / "c.log") == 0);
    CHECK(support::read_text(dir / "part.jsonl") == support::read_text(dir / "full.jsonl"));
    CHECK(support::read_bytes(dir / "ck.uwt") == support::read_bytes(dir / "full.uwt"));

    std::size_t lines = 0;
    std::istringstream in(support::read_text(dir / "full.jsonl"));
    for (std::string line; std::getline(in, line); ++lines) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("step").get<std::size_t>() == lines + 1);
        CHECK(j.contains("total"));
    }
    CHECK(lines == 6);
}

TEST_CASE("inspect-mask writes saliency, mask and top-K") {
    const auto dir = support::temp_dir("cli_inspect");
    const auto c = corpus(dir);
    const auto clip = c / "clips" / "000000.uvc";
    REQUIRE(cli("inspect-mask --clip " + clip.string() + " --seed 9 --out " + (dir / "m").string(), dir / "i.log") == 0);
    const auto mask = nlohmann::json::parse(support::read_text(dir / "m.mask.json"));
    CHECK(mask.at("grid_h") == 4);
    CHECK(mask.at("visible").size() + mask.at("masked").size() == 16);
    const auto topk = nlohmann::json::parse(support::read_text(dir / "m.topk.json"));
    CHECK(topk.at("indices").size() == 3);
    CHECK(fs::exists(dir / "m.saliency.pgm"));
    CHECK(cli("inspect-mask --clip " + clip.string() + " --seed 9 --out " + (dir / "m").string() + " --patch-size 5",
              dir / "j.log") == 2);
}
