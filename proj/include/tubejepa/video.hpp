// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0
//
// Clip storage (UVC1), synthetic corpora, manifests and balanced sampling.
//
// UVC1 layout, all integers little-endian:
//   "UVC1" | u32 T | u32 H | u32 W | u32 C | u32 fps_milli | T*H*W*C bytes
// Pixels are frame-major, then row-major, channels interleaved.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tubejepa/random.hpp"

namespace tubejepa {

struct VideoClip {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    double fps = 1.0;
    std::vector<std::uint8_t> pixels;

    std::size_t index(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
        return ((t * height + y) * width + x) * channels + c;
    }
    std::uint8_t at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[index(t, y, x, c)];
    }

    // Throws ContractError unless the element count matches and H, W are
    // multiples of patch_size.
    void validate(std::size_t patch_size) const;

    bool operator==(const VideoClip&) const = default;
};

VideoClip read_clip(const std::filesystem::path& path);
void write_clip(const VideoClip& clip, const std::filesystem::path& path);

// Encoded UVC1 bytes (what write_clip puts on disk).
std::vector<std::uint8_t> encode_clip(const VideoClip& clip);
VideoClip decode_clip(const std::vector<std::uint8_t>& bytes);

// ---- manifests ------------------------------------------------------------

struct ManifestRecord {
    std::string clip_path;
    std::string dataset_id;
    std::string specialty_id;
    std::size_t num_frames = 0;

    bool operator==(const ManifestRecord&) const = default;
};

using Manifest = std::vector<ManifestRecord>;

// One flat JSON object per line: clip_path, dataset_id, specialty_id, num_frames.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

// Relative clip paths are resolved against the manifest's directory.
std::filesystem::path resolve_clip_path(const std::filesystem::path& manifest_path, const ManifestRecord& record);

// ---- synthetic corpora ----------------------------------------------------

struct ClipGeometry {
    std::size_t frames = 4;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 1;
    std::size_t patch_size = 4;
};

struct GeneratorParams {
    std::size_t square_size = 0;  // 0: two patches
    std::size_t speed = 0;        // pixels per frame; 0: one patch
    bool align_to_patch = false;
};

struct CorpusGroup {
    std::string generator;  // moving_square | static_texture | homogeneous | noise_field
    std::size_t count = 0;
    std::string dataset_id;
    std::string specialty_id;
    GeneratorParams params;
};

struct CorpusSpec {
    ClipGeometry geometry;
    std::vector<CorpusGroup> groups;

    // Parses the JSON corpus description; unknown keys are rejected.
    static CorpusSpec from_json_text(const std::string& text);
    void validate() const;
    std::size_t total_clips() const;
    // Distinct generator names in order of first appearance; a clip's class
    // label is its generator's position in this list.
    std::vector<std::string> class_names() const;
};

struct GeneratedClip {
    VideoClip clip;
    // Per-frame tube indices touched by the moving square (empty otherwise).
    std::vector<std::vector<std::size_t>> occupancy;
};

GeneratedClip generate_clip(const std::string& generator, const ClipGeometry& geometry,
                            const GeneratorParams& params, Rng& rng);

struct CorpusSummary {
    std::size_t clips = 0;
    std::size_t sidecars = 0;
    std::map<std::string, std::size_t> per_generator;
};

// Writes clips/NNNNNN.uvc, sidecars (moving_square only, "<clip>.occ.json"),
// manifest.jsonl and labels.jsonl under out_dir. Bitwise deterministic in seed.
CorpusSummary gen_synthetic_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir, std::uint64_t seed);

struct Occupancy {
    std::size_t patch_size = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::vector<std::vector<std::size_t>> frames;

    std::vector<std::size_t> all_tubes() const;  // sorted union over frames
};

Occupancy read_occupancy(const std::filesystem::path& sidecar);
std::filesystem::path sidecar_path(const std::filesystem::path& clip_path);

struct LabelRecord {
    std::string clip_path;
    std::size_t label = 0;
    std::string generator;
};

std::vector<LabelRecord> read_labels(const std::filesystem::path& path);

// ---- balanced sampling ----------------------------------------------------

struct SampleWeightTable {
    Manifest records;
    std::vector<double> weights;   // normalized, sums to 1
    double normalization = 0.0;    // sum of the unnormalized 1/(N_d |D_s|)

    double specialty_mass(const std::string& specialty_id) const;
};

// w(x) proportional to 1 / (N_d * |D_s|): N_d clips in x's dataset, |D_s|
// datasets under x's specialty.
SampleWeightTable build_weight_table(const Manifest& manifest);

// i.i.d. draws with replacement, proportional to weight. Returns record indices.
std::vector<std::size_t> sample_indices(const SampleWeightTable& table, std::size_t batch_size, Rng& rng);
std::vector<ManifestRecord> sample_batch(const SampleWeightTable& table, std::size_t batch_size, Rng& rng);

// ---- clip preprocessing ---------------------------------------------------

struct ExtractOptions {
    std::size_t frames = 16;
    std::size_t resize_short = 256;
    std::size_t crop = 224;
    bool train = true;  // random window and crop; otherwise centered
};

// Bilinear resize with half-pixel centers.
VideoClip resize_bilinear(const VideoClip& clip, std::size_t height, std::size_t width);

// Temporal window of `frames`, shorter-side resize, square crop. Clips with
// fewer frames than requested are rejected.
VideoClip extract_training_clip(const VideoClip& clip, const ExtractOptions& options, Rng& rng);

}  // namespace tubejepa
