// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include "tubejepa/tubes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "tubejepa/errors.hpp"

namespace tubejepa {

TubeGrid TubeGrid::for_frame(std::size_t height, std::size_t width, std::size_t patch_size) {
    if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0) {
        throw ContractError("frame " + std::to_string(height) + "x" + std::to_string(width) +
                            " is not divisible by patch size " + std::to_string(patch_size));
    }
    return {patch_size, height / patch_size, width / patch_size};
}

std::size_t tube_index(const TubeGrid& grid, std::size_t row, std::size_t col) {
    if (row >= grid.grid_h || col >= grid.grid_w) {
        throw ContractError("tube (" + std::to_string(row) + ", " + std::to_string(col) + ") outside " +
                            std::to_string(grid.grid_h) + "x" + std::to_string(grid.grid_w) + " grid");
    }
    return row * grid.grid_w + col;
}

std::vector<std::size_t> neighbors4(const TubeGrid& grid, std::size_t index) {
    if (index >= grid.count()) throw ContractError("tube index " + std::to_string(index) + " outside grid");
    const std::size_t row = index / grid.grid_w, col = index % grid.grid_w;
    std::vector<std::size_t> out;
    if (row > 0) out.push_back(index - grid.grid_w);
    if (col > 0) out.push_back(index - 1);
    if (col + 1 < grid.grid_w) out.push_back(index + 1);
    if (row + 1 < grid.grid_h) out.push_back(index + grid.grid_w);
    return out;
}

std::size_t masked_count(std::size_t tube_count, double rho) {
    if (tube_count < 2) throw ContractError("masking needs at least 2 tubes");
    const auto m = static_cast<std::size_t>(std::llround(rho * static_cast<double>(tube_count)));
    return std::clamp<std::size_t>(m, 1, tube_count - 1);
}

MaskSample sample_mask(const TubeGrid& grid, Rng& rng) {
    const std::size_t n = grid.count();
    if (n < 2) throw ContractError("sample_mask: grid has " + std::to_string(n) + " tubes, need at least 2");
    MaskSample out;
    out.rho = kMinMaskRatio + (kMaxMaskRatio - kMinMaskRatio) * uniform01(rng);
    const std::size_t m = masked_count(n, out.rho);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) std::swap(order[i], order[i + uniform_index(rng, n - i)]);
    out.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
    out.visible.assign(order.begin() + static_cast<std::ptrdiff_t>(m), order.end());
    std::sort(out.masked.begin(), out.masked.end());
    std::sort(out.visible.begin(), out.visible.end());
    return out;
}

std::vector<double> motion_scores(const VideoClip& clip, const TubeGrid& grid) {
    if (clip.frames < 2) throw ContractError("motion_scores: need at least 2 frames, got " + std::to_string(clip.frames));
    if (clip.height != grid.grid_h * grid.patch_size || clip.width != grid.grid_w * grid.patch_size) {
        throw ContractError("motion_scores: clip does not match tube grid");
    }
    const std::size_t p = grid.patch_size, n = grid.count(), c = clip.channels;
    const std::size_t t_count = clip.frames;
    // Patch difference ||x_{ta,i} - x_{tb,j}||_1 on [0, 1]-scaled pixels.
    auto patch_l1 = [&](std::size_t ta, std::size_t i, std::size_t tb, std::size_t j) {
        const std::size_t ri = i / grid.grid_w * p, ci = i % grid.grid_w * p;
        const std::size_t rj = j / grid.grid_w * p, cj = j % grid.grid_w * p;
        long acc = 0;
        for (std::size_t y = 0; y < p; ++y) {
            const std::uint8_t* a = &clip.pixels[clip.index(ta, ri + y, ci, 0)];
            const std::uint8_t* b = &clip.pixels[clip.index(tb, rj + y, cj, 0)];
            for (std::size_t k = 0; k < p * c; ++k) acc += std::abs(static_cast<int>(a[k]) - static_cast<int>(b[k]));
        }
        return static_cast<double>(acc) / 255.0;
    };

    std::vector<double> g(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double temporal = 0.0;
        for (std::size_t t = 0; t + 1 < t_count; ++t) temporal += patch_l1(t + 1, i, t, i);
        temporal /= static_cast<double>(t_count - 1);

        double spatial = 0.0;
        const auto nb = neighbors4(grid, i);
        if (!nb.empty()) {
            for (std::size_t t = 0; t < t_count; ++t) {
                double frame = 0.0;
                for (std::size_t j : nb) frame += patch_l1(t, i, t, j);
                spatial += frame / static_cast<double>(nb.size());
            }
            spatial /= static_cast<double>(t_count);
        }
        g[i] = temporal + spatial;
    }
    return g;
}

TopK select_topk_weights(std::span<const double> scores, std::span<const std::size_t> masked, std::size_t k,
                         double gamma) {
    if (masked.empty()) throw ContractError("select_topk_weights: no masked tubes");
    for (std::size_t i : masked) {
        if (i >= scores.size()) throw ContractError("select_topk_weights: masked index outside score vector");
        if (!std::isfinite(scores[i])) throw NumericError("select_topk_weights: non-finite motion score");
    }
    std::vector<std::size_t> order(masked.begin(), masked.end());
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    order.resize(std::min(k, order.size()));

    TopK out;
    out.indices = order;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i : order) mx = std::max(mx, gamma * scores[i]);
    double z = 0.0;
    for (std::size_t i : order) {
        out.weights.push_back(std::exp(gamma * scores[i] - mx));
        z += out.weights.back();
    }
    for (double& w : out.weights) w /= z;
    return out;
}

std::size_t TubePartition::masked_row(std::size_t index) const {
    auto it = std::lower_bound(masked.begin(), masked.end(), index);
    if (it == masked.end() || *it != index) throw ContractError("tube " + std::to_string(index) + " is not masked");
    return static_cast<std::size_t>(it - masked.begin());
}

void TubePartition::validate(std::size_t count) const {
    if (visible.empty() || masked.empty()) throw ContractError("partition: visible and masked sets must be non-empty");
    std::vector<char> seen(count, 0);
    for (const auto* set : {&visible, &masked}) {
        if (!std::is_sorted(set->begin(), set->end())) throw ContractError("partition: index sets must be ascending");
        for (std::size_t i : *set) {
            if (i >= count || seen[i]) throw ContractError("partition: index sets overlap or exceed the grid");
            seen[i] = 1;
        }
    }
    if (visible.size() + masked.size() != count) throw ContractError("partition: sets do not cover the grid");
    if (high_motion.size() != weights.size()) throw ContractError("partition: weights not aligned with high-motion set");
    for (std::size_t i : high_motion) masked_row(i);
    if (motion.size() != count) throw ContractError("partition: motion scores do not cover the grid");
}

TubePartition make_partition(const MaskSample& mask, std::vector<double> motion, std::size_t k, double gamma) {
    TubePartition out;
    out.visible = mask.visible;
    out.masked = mask.masked;
    out.rho = mask.rho;
    TopK top = select_topk_weights(motion, out.masked, k, gamma);
    out.high_motion = std::move(top.indices);
    out.weights = std::move(top.weights);
    out.motion = std::move(motion);
    return out;
}

GrayImage saliency_heatmap(std::span<const double> scores, const TubeGrid& grid) {
    if (scores.size() != grid.count()) throw ContractError("saliency_heatmap: score count does not match grid");
    GrayImage img{grid.grid_h, grid.grid_w, std::vector<std::uint8_t>(scores.size(), 0)};
    for (double s : scores)
        if (!std::isfinite(s)) throw NumericError("saliency_heatmap: non-finite score");
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) return img;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        img.pixels[i] = static_cast<std::uint8_t>(std::lround((scores[i] - *lo) / range * 255.0));
    }
    return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string magic;
    GrayImage img;
    int maxval = 0;
    in >> magic >> img.width >> img.height >> maxval;
    if (magic != "P5" || maxval != 255) throw FormatError("PGM: unsupported header", 0);
    in.get();
    const auto header = static_cast<std::uint64_t>(in.tellg());
    img.pixels.resize(img.width * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) throw FormatError("PGM: truncated payload", header);
    return img;
}

}  // namespace tubejepa
