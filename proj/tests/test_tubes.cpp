// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "oracles.hpp"
#include "support.hpp"
#include "tubejepa/errors.hpp"
#include "tubejepa/tubes.hpp"

using namespace tubejepa;

namespace {

VideoClip two_tube_clip() {
    // 1x2 grid of 1x1 patches: frame 0 = [0, 4], frame 1 = [2, 4].
    return VideoClip{2, 1, 2, 1, 1.0, {0, 4, 2, 4}};
}

VideoClip random_clip(Rng& rng, std::size_t t, std::size_t h, std::size_t w, std::size_t c) {
    VideoClip clip{t, h, w, c, 1.0, std::vector<std::uint8_t>(t * h * w * c)};
    for (auto& p : clip.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
    return clip;
}

}  // namespace

TEST_CASE("grid indices and neighbours") {
    const TubeGrid one{1, 1, 1};
    CHECK(neighbors4(one, 0).empty());
    const TubeGrid g3{1, 3, 3};
    CHECK(neighbors4(g3, 4) == std::vector<std::size_t>{1, 3, 5, 7});
    CHECK(neighbors4(g3, 0) == std::vector<std::size_t>{1, 3});
    CHECK(neighbors4(g3, 1).size() == 3);
    CHECK(tube_index(g3, 2, 1) == 7);
    CHECK_THROWS_AS(tube_index(g3, 3, 0), ContractError);
    CHECK_THROWS_AS(TubeGrid::for_frame(30, 32, 4), ContractError);
    CHECK(TubeGrid::for_frame(224, 224, 16).count() == 196);
}

TEST_CASE("masked count examples") {
    CHECK(masked_count(196, 0.85) == 167);
    CHECK(masked_count(2, 0.949) == 1);
    CHECK(masked_count(2, 0.75) == 1);
    CHECK_THROWS_AS(masked_count(1, 0.8), ContractError);
}

TEST_CASE("mask samples partition the grid over 200 seeds") {
    const TubeGrid grid{16, 14, 14};
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto rng = make_rng(seed);
        const auto m = sample_mask(grid, rng);
        CHECK(m.rho >= kMinMaskRatio);
        CHECK(m.rho < kMaxMaskRatio);
        CHECK(m.masked.size() == masked_count(196, m.rho));
        CHECK(m.visible.size() + m.masked.size() == 196);
        CHECK(std::is_sorted(m.visible.begin(), m.visible.end()));
        CHECK(std::is_sorted(m.masked.begin(), m.masked.end()));
        std::set<std::size_t> all(m.visible.begin(), m.visible.end());
        all.insert(m.masked.begin(), m.masked.end());
        CHECK(all.size() == 196);
    }
}

TEST_CASE("motion score worked example") {
    const auto clip = two_tube_clip();
    const TubeGrid grid{1, 1, 2};
    const auto g = motion_scores(clip, grid);
    const auto ref = oracle::motion_scores(clip, grid);
    REQUIRE(g.size() == 2);
    // Pixels are scaled by 1/255 before differencing.
    CHECK(std::abs(255.0 * g[0] - 5.0) < 1e-9);
    CHECK(std::abs(255.0 * g[1] - 3.0) < 1e-9);
    CHECK(std::abs(g[0] - ref[0]) < 1e-12);
    CHECK(std::abs(g[1] - ref[1]) < 1e-12);

    VideoClip single{1, 1, 2, 1, 1.0, {0, 4}};
    CHECK_THROWS_AS(motion_scores(single, grid), ContractError);
}

TEST_CASE("motion scores match the loop oracle over 100 random clips") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto rng = make_rng(seed, 21);
        const std::size_t P = 1 + uniform_index(rng, 3);
        const std::size_t gh = 1 + uniform_index(rng, 4), gw = 1 + uniform_index(rng, 4);
        const auto clip = random_clip(rng, 2 + uniform_index(rng, 3), gh * P, gw * P, 1 + uniform_index(rng, 2));
        const TubeGrid grid{P, gh, gw};
        const auto g = motion_scores(clip, grid);
        const auto ref = oracle::motion_scores(clip, grid);
        for (std::size_t i = 0; i < g.size(); ++i) {
            CHECK(g[i] >= 0.0);
            CHECK(std::abs(g[i] - ref[i]) < 1e-12);
        }
    }
}

TEST_CASE("constant clips have zero motion") {
    VideoClip flat{3, 8, 8, 2, 1.0, std::vector<std::uint8_t>(3 * 8 * 8 * 2, 77)};
    for (double v : motion_scores(flat, TubeGrid{2, 4, 4})) CHECK(v == 0.0);
}

TEST_CASE("top-K examples") {
    const std::vector<double> g{1.0, 0.5, 0.5, 0.0};
    const std::vector<std::size_t> masked{0, 1, 2, 3};
    const auto t = select_topk_weights(g, masked, 3, 2.0);
    CHECK(t.indices == std::vector<std::size_t>{0, 1, 2});
    const auto ref = oracle::softmax({2.0, 1.0, 1.0});
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(t.weights[i] - ref[i]) < 1e-12);
    CHECK(std::abs(t.weights[0] - 0.5761) < 1e-4);
    CHECK(std::abs(t.weights[1] - 0.2119) < 1e-4);

    const std::vector<double> equal{0.3, 0.3, 0.3, 0.3};
    const auto e = select_topk_weights(equal, masked, 3, 2.0);
    CHECK(e.indices == std::vector<std::size_t>{0, 1, 2});
    for (double w : e.weights) CHECK(std::abs(w - 1.0 / 3.0) < 1e-15);

    const std::vector<std::size_t> two{1, 3};
    CHECK(select_topk_weights(g, two, 3, 2.0).indices.size() == 2);
    CHECK_THROWS_AS(select_topk_weights(g, std::vector<std::size_t>{}, 3, 2.0), ContractError);
}

TEST_CASE("top-K agrees with the argmax oracle over 200 seeds") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto rng = make_rng(seed, 22);
        const std::size_t n = 2 + uniform_index(rng, 30);
        std::vector<double> g(n);
        // Coarse values force frequent ties.
        for (double& v : g) v = static_cast<double>(uniform_index(rng, 5)) * 0.25;
        std::vector<std::size_t> masked;
        for (std::size_t i = 0; i < n; ++i)
            if (uniform01(rng) < 0.7) masked.push_back(i);
        if (masked.empty()) masked.push_back(0);
        const std::size_t k = 1 + uniform_index(rng, 5);
        const auto got = select_topk_weights(g, masked, k, 2.0);
        const auto ref = oracle::topk(g, masked, k, 2.0);
        CHECK(got.indices == ref.indices);
        double total = 0.0;
        for (std::size_t i = 0; i < ref.weights.size(); ++i) {
            CHECK(std::abs(got.weights[i] - ref.weights[i]) < 1e-12);
            total += got.weights[i];
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("partition invariants") {
    auto rng = make_rng(5);
    const TubeGrid grid{4, 8, 8};
    const auto clip = random_clip(rng, 4, 32, 32, 1);
    const auto mask = sample_mask(grid, rng);
    const auto p = make_partition(mask, motion_scores(clip, grid), 3, 2.0);
    CHECK_NOTHROW(p.validate(64));
    CHECK(p.high_motion.size() == 3);
    for (std::size_t h : p.high_motion) CHECK(std::binary_search(p.masked.begin(), p.masked.end(), h));
    CHECK(p.masked[p.masked_row(p.high_motion[0])] == p.high_motion[0]);
    CHECK_THROWS_AS(p.masked_row(p.visible[0]), ContractError);

    auto broken = p;
    broken.visible.push_back(broken.masked.front());
    CHECK_THROWS_AS(broken.validate(64), ContractError);
}

TEST_CASE("saliency heatmap") {
    const TubeGrid grid{1, 2, 2};
    const std::vector<double> flat{0.4, 0.4, 0.4, 0.4};
    for (auto p : saliency_heatmap(flat, grid).pixels) CHECK(p == 0);

    const std::vector<double> g{0.0, 1.0, 0.5, 0.25};
    const auto img = saliency_heatmap(g, grid);
    CHECK(img.pixels[1] == 255);
    CHECK(img.pixels[0] == 0);
    CHECK(img.pixels[2] > img.pixels[3]);

    const auto dir = support::temp_dir("tubes_pgm");
    write_pgm(img, dir / "s.pgm");
    const auto back = read_pgm(dir / "s.pgm");
    CHECK(back.pixels == img.pixels);
    CHECK(back.height == 2);
    CHECK(back.width == 2);
}

TEST_CASE("moving square saliency peaks inside the occupied tubes") {
    const ClipGeometry geo{4, 32, 32, 1, 4};
    const TubeGrid grid{4, 8, 8};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto rng = make_rng(seed, 23);
        const auto gen = generate_clip("moving_square", geo, GeneratorParams{}, rng);
        const auto g = motion_scores(gen.clip, grid);
        const auto best = static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
        std::set<std::size_t> occupied;
        for (const auto& f : gen.occupancy) occupied.insert(f.begin(), f.end());
        CHECK(occupied.contains(best));
        const auto img = saliency_heatmap(g, grid);
        CHECK(img.pixels[best] == 255);
    }
}
