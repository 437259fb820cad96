// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "oracles.hpp"
#include "support.hpp"
#include "tubejepa/errors.hpp"
#include "tubejepa/video.hpp"

using namespace tubejepa;
namespace fs = std::filesystem;

namespace {

VideoClip random_clip(Rng& rng, std::size_t t, std::size_t h, std::size_t w, std::size_t c) {
    VideoClip clip{t, h, w, c, 1.0, std::vector<std::uint8_t>(t * h * w * c)};
    for (auto& p : clip.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
    return clip;
}

std::map<std::string, std::vector<std::uint8_t>> tree_bytes(const fs::path& root) {
    std::map<std::string, std::vector<std::uint8_t>> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = support::read_bytes(e.path());
    }
    return out;
}

const char* kSmallCorpus = R"({
  "frames": 4, "height": 32, "width": 32, "channels": 1, "patch_size": 4,
  "groups": [
    {"generator": "moving_square", "count": 3, "dataset_id": "a", "specialty_id": "s1"},
    {"generator": "homogeneous", "count": 2, "dataset_id": "b", "specialty_id": "s2"},
    {"generator": "static_texture", "count": 2, "dataset_id": "c", "specialty_id": "s2"},
    {"generator": "noise_field", "count": 1, "dataset_id": "d", "specialty_id": "s3"}
  ]})";

Manifest manifest_of(const std::vector<std::tuple<std::string, std::string, std::size_t>>& groups) {
    Manifest m;
    for (const auto& [dataset, specialty, n] : groups)
        for (std::size_t i = 0; i < n; ++i)
            m.push_back({dataset + "/" + std::to_string(i) + ".uvc", dataset, specialty, 4});
    return m;
}

}  // namespace

TEST_CASE("clip round trip and format errors") {
    auto rng = make_rng(1);
    const auto dir = support::temp_dir("video_clip");
    const auto clip = random_clip(rng, 4, 32, 32, 3);
    write_clip(clip, dir / "a.uvc");
    CHECK(read_clip(dir / "a.uvc") == clip);
    write_clip(read_clip(dir / "a.uvc"), dir / "b.uvc");
    CHECK(support::read_bytes(dir / "a.uvc") == support::read_bytes(dir / "b.uvc"));

    auto bytes = encode_clip(clip);
    bytes.resize(bytes.size() - 10);
    CHECK_THROWS_AS(decode_clip(bytes), FormatError);

    auto bad = encode_clip(clip);
    bad[0] = 'X';
    try {
        decode_clip(bad);
        FAIL("bad magic accepted");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 0);
    }

    VideoClip zero{1, 16, 16, 1, 1.0, std::vector<std::uint8_t>(256, 0)};
    auto z = encode_clip(zero);
    CHECK(decode_clip(z) == zero);
    z[4] = 0;  // T = 0
    CHECK_THROWS_AS(decode_clip(z), FormatError);

    CHECK_THROWS_AS(write_clip(clip, ""), IoError);
    CHECK_THROWS_AS(read_clip(dir / "missing.uvc"), IoError);
}

TEST_CASE("clip round trip over 100 random geometries") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto rng = make_rng(seed, 5);
        const auto clip = random_clip(rng, 1 + uniform_index(rng, 4), 1 + uniform_index(rng, 9),
                                      1 + uniform_index(rng, 9), 1 + uniform_index(rng, 3));
        CHECK(decode_clip(encode_clip(clip)) == clip);
    }
}

TEST_CASE("manifest round trip") {
    const auto dir = support::temp_dir("video_manifest");
    const auto m = manifest_of({{"x", "s", 3}, {"y", "t", 2}});
    write_manifest(m, dir / "m.jsonl");
    CHECK(read_manifest(dir / "m.jsonl") == m);
    CHECK(resolve_clip_path(dir / "m.jsonl", m[0]) == dir / m[0].clip_path);
    support::write_text(dir / "bad.jsonl", "{\"clip_path\": 3}\n");
    CHECK_THROWS_AS(read_manifest(dir / "bad.jsonl"), FormatError);
}

TEST_CASE("synthetic corpus is deterministic and complete") {
    const auto spec = CorpusSpec::from_json_text(kSmallCorpus);
    const auto a = support::temp_dir("video_corpus_a");
    const auto b = support::temp_dir("video_corpus_b");
    const auto summary = gen_synthetic_corpus(spec, a, 42);
    gen_synthetic_corpus(spec, b, 42);
    CHECK(summary.clips == 8);
    CHECK(summary.sidecars == 3);
    CHECK(tree_bytes(a) == tree_bytes(b));

    const auto c = support::temp_dir("video_corpus_c");
    gen_synthetic_corpus(spec, c, 43);
    CHECK(tree_bytes(a) != tree_bytes(c));

    const auto manifest = read_manifest(a / "manifest.jsonl");
    REQUIRE(manifest.size() == 8);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(fs::exists(sidecar_path(resolve_clip_path(a / "manifest.jsonl", manifest[i]))));
    }
    const auto labels = read_labels(a / "labels.jsonl");
    CHECK(labels.size() == 8);
    CHECK(labels[0].label == 0);
    CHECK(labels[3].generator == "homogeneous");
    CHECK(labels[7].label == 3);
}

TEST_CASE("corpus spec rejects bad input before creating files") {
    CHECK_THROWS_AS(CorpusSpec::from_json_text(R"({"groups": []})"), ConfigError);
    CHECK_THROWS_AS(CorpusSpec::from_json_text(
                        R"({"groups": [{"generator": "homogeneous", "count": 0, "dataset_id": "a", "specialty_id": "s"}]})"),
                    ConfigError);
    CHECK_THROWS_AS(CorpusSpec::from_json_text(R"({"colour": 1, "groups": []})"), ConfigError);
    CHECK_THROWS_AS(CorpusSpec::from_json_text(
                        R"({"groups": [{"generator": "spiral", "count": 1, "dataset_id": "a", "specialty_id": "s"}]})"),
                    ConfigError);
}

TEST_CASE("moving square occupies the tubes along its path") {
    const ClipGeometry geo{4, 32, 32, 1, 4};
    GeneratorParams params;
    params.speed = 4;
    params.align_to_patch = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto rng = make_rng(seed);
        const auto gen = generate_clip("moving_square", geo, params, rng);
        REQUIRE(gen.occupancy.size() == 4);
        for (std::size_t t = 0; t < 4; ++t) {
            // Every tube holding a bright pixel is listed, and nothing else is.
            std::array<std::size_t, 256> hist{};
            for (std::size_t y = 0; y < 32; ++y)
                for (std::size_t x = 0; x < 32; ++x) ++hist[gen.clip.at(t, y, x, 0)];
            const auto bg = static_cast<std::uint8_t>(std::max_element(hist.begin(), hist.end()) - hist.begin());
            std::vector<std::size_t> lit;
            for (std::size_t y = 0; y < 32; ++y)
                for (std::size_t x = 0; x < 32; ++x)
                    if (gen.clip.at(t, y, x, 0) != bg) lit.push_back((y / 4) * 8 + x / 4);
            std::sort(lit.begin(), lit.end());
            lit.erase(std::unique(lit.begin(), lit.end()), lit.end());
            auto occ = gen.occupancy[t];
            std::sort(occ.begin(), occ.end());
            CHECK(lit == occ);
        }
        CHECK(gen.occupancy[0] != gen.occupancy[1]);
    }
}

TEST_CASE("homogeneous frames are constant") {
    auto rng = make_rng(9);
    const auto gen = generate_clip("homogeneous", ClipGeometry{}, GeneratorParams{}, rng);
    for (auto p : gen.clip.pixels) CHECK(p == gen.clip.pixels[0]);
    CHECK(gen.occupancy.empty());
}

TEST_CASE("weight table examples") {
    const auto t1 = build_weight_table(manifest_of({{"a", "A", 10}, {"b1", "B", 5}, {"b2", "B", 5}}));
    for (double w : t1.weights) CHECK(std::abs(w - 0.05) < 1e-15);
    CHECK(std::abs(t1.specialty_mass("A") - 0.5) < 1e-15);
    CHECK(std::abs(t1.specialty_mass("B") - 0.5) < 1e-15);

    const auto t2 = build_weight_table(manifest_of({{"only", "S", 7}}));
    for (double w : t2.weights) CHECK(std::abs(w - 1.0 / 7.0) < 1e-15);

    const auto t3 = build_weight_table(manifest_of({{"one", "A", 1}, {"big", "B", 100}}));
    CHECK(std::abs(t3.weights[0] / t3.weights[1] - 100.0) < 1e-9);
    CHECK(std::abs(t3.specialty_mass("A") - t3.specialty_mass("B")) < 1e-15);

    CHECK_THROWS_AS(build_weight_table(Manifest{}), ContractError);
}

TEST_CASE("weight table matches the direct oracle over 100 random manifests") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto rng = make_rng(seed, 8);
        std::vector<std::tuple<std::string, std::string, std::size_t>> groups;
        const std::size_t n = 1 + uniform_index(rng, 6);
        for (std::size_t d = 0; d < n; ++d)
            groups.emplace_back("d" + std::to_string(d), "s" + std::to_string(uniform_index(rng, 3)),
                                1 + uniform_index(rng, 20));
        const auto m = manifest_of(groups);
        const auto table = build_weight_table(m);
        const auto ref = oracle::sample_weights(m);
        double total = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            CHECK(std::abs(table.weights[i] - ref[i]) < 1e-14);
            total += table.weights[i];
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("sampling frequencies follow the table") {
    const auto table = build_weight_table(manifest_of({{"u", "S", 10}}));
    auto rng = make_rng(5);
    std::vector<double> counts(10, 0.0);
    const std::size_t draws = 100000;
    for (std::size_t i : sample_indices(table, draws, rng)) counts[i] += 1.0;
    for (double c : counts) CHECK(std::abs(c / draws - 0.1) < 0.002);

    const auto single = build_weight_table(manifest_of({{"one", "S", 1}}));
    for (std::size_t i : sample_indices(single, 50, rng)) CHECK(i == 0);

    auto r1 = make_rng(77), r2 = make_rng(77);
    CHECK(sample_indices(table, 64, r1) == sample_indices(table, 64, r2));
    CHECK_THROWS_AS(sample_indices(table, 0, r1), ContractError);
}

TEST_CASE("training clip extraction") {
    auto rng = make_rng(3);
    const auto clip = random_clip(rng, 16, 256, 300, 3);
    ExtractOptions o;
    o.frames = 16;
    o.resize_short = 256;
    o.crop = 224;
    auto ra = make_rng(11), rb = make_rng(11);
    const auto a = extract_training_clip(clip, o, ra);
    CHECK(a == extract_training_clip(clip, o, rb));
    CHECK(a.frames == 16);
    CHECK(a.height == 224);
    CHECK(a.width == 224);

    VideoClip flat{16, 40, 60, 1, 1.0, std::vector<std::uint8_t>(16 * 40 * 60, 93)};
    ExtractOptions small{8, 20, 16, true};
    const auto f = extract_training_clip(flat, small, rng);
    for (auto p : f.pixels) CHECK(p == 93);

    ExtractOptions full{16, 40, 40, false};
    const auto whole = extract_training_clip(flat, full, rng);
    CHECK(whole.frames == 16);

    ExtractOptions too_long{17, 40, 40, true};
    CHECK_THROWS_AS(extract_training_clip(flat, too_long, rng), ContractError);
}

TEST_CASE("bilinear resize preserves constants and identity") {
    auto rng = make_rng(4);
    const auto clip = random_clip(rng, 2, 8, 8, 2);
    CHECK(resize_bilinear(clip, 8, 8) == clip);
    VideoClip flat{1, 5, 7, 1, 1.0, std::vector<std::uint8_t>(35, 200)};
    for (auto p : resize_bilinear(flat, 13, 3).pixels) CHECK(p == 200);
}
