// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0
//
// Tube-token index arithmetic, random tube masking and motion saliency.
//
// A tube is one P x P spatial patch followed through every frame of a clip.
// Tubes are numbered row-major over the patch grid.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tubejepa/random.hpp"
#include "tubejepa/video.hpp"

namespace tubejepa {

struct TubeGrid {
    std::size_t patch_size = 16;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;

    static TubeGrid for_frame(std::size_t height, std::size_t width, std::size_t patch_size);
    static TubeGrid for_clip(const VideoClip& clip, std::size_t patch_size) {
        return for_frame(clip.height, clip.width, patch_size);
    }

    std::size_t count() const { return grid_h * grid_w; }
};

std::size_t tube_index(const TubeGrid& grid, std::size_t row, std::size_t col);

// In-grid 4-neighbours of a tube, ascending.
std::vector<std::size_t> neighbors4(const TubeGrid& grid, std::size_t index);

inline constexpr double kMinMaskRatio = 0.75;
inline constexpr double kMaxMaskRatio = 0.95;

struct MaskSample {
    std::vector<std::size_t> visible;  // ascending
    std::vector<std::size_t> masked;   // ascending
    double rho = 0.0;                  // drawn ratio
};

// |masked| = round(rho * count) clamped to [1, count - 1].
std::size_t masked_count(std::size_t tube_count, double rho);

// rho ~ U(0.75, 0.95); masked tubes drawn uniformly without replacement.
MaskSample sample_mask(const TubeGrid& grid, Rng& rng);

// Per-tube temporal plus 4-neighbour spatial L1 pixel change, on pixels
// scaled to [0, 1]. Requires at least two frames.
std::vector<double> motion_scores(const VideoClip& clip, const TubeGrid& grid);

struct TopK {
    std::vector<std::size_t> indices;  // by descending score, ties by ascending index
    std::vector<double> weights;       // softmax(gamma * score) over `indices`
};

TopK select_topk_weights(std::span<const double> scores, std::span<const std::size_t> masked, std::size_t k = 3,
                         double gamma = 2.0);

struct TubePartition {
    std::vector<std::size_t> visible;
    std::vector<std::size_t> masked;
    std::vector<std::size_t> high_motion;  // subset of masked
    std::vector<double> motion;            // one score per tube
    std::vector<double> weights;           // aligned with high_motion
    double rho = 0.0;

    std::size_t tube_count() const { return visible.size() + masked.size(); }
    // Row of tube `index` within the masked list; throws if not masked.
    std::size_t masked_row(std::size_t index) const;
    // Throws ContractError when the partition invariants do not hold.
    void validate(std::size_t tube_count) const;
};

TubePartition make_partition(const MaskSample& mask, std::vector<double> motion, std::size_t k, double gamma);

struct GrayImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;
};

// Linear rescale of scores onto [0, 255]; a constant map is all zeros.
GrayImage saliency_heatmap(std::span<const double> scores, const TubeGrid& grid);

// Binary PGM (P5).
void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace tubejepa
