// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include "tubejepa/video.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tubejepa/errors.hpp"

namespace tubejepa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<char, 4> kClipMagic{'U', 'V', 'C', '1'};
constexpr std::size_t kHeaderBytes = 4 + 5 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
    return v;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xffffffffu) throw ContractError(std::string("clip ") + what + " does not fit in 32 bits");
    return static_cast<std::uint32_t>(v);
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.empty()) throw IoError("write: empty path");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
    write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
}

const std::set<std::string>& known_generators() {
    static const std::set<std::string> names{"moving_square", "static_texture", "homogeneous", "noise_field"};
    return names;
}

std::uint8_t to_pixel(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

VideoClip blank_clip(const ClipGeometry& g) {
    VideoClip clip;
    clip.frames = g.frames;
    clip.height = g.height;
    clip.width = g.width;
    clip.channels = g.channels;
    clip.fps = 1.0;
    clip.pixels.assign(g.frames * g.height * g.width * g.channels, 0);
    return clip;
}

GeneratedClip make_moving_square(const ClipGeometry& g, const GeneratorParams& p, Rng& rng) {
    const std::size_t patch = g.patch_size;
    const std::size_t side = p.square_size ? p.square_size : 2 * patch;
    const std::size_t speed = p.speed ? p.speed : patch;
    const std::size_t travel = (g.frames - 1) * speed;

    struct Dir { int dx, dy; };
    static constexpr std::array<Dir, 8> kDirs{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}}};
    auto fits = [&](Dir d) {
        return side + travel * static_cast<std::size_t>(std::abs(d.dx)) <= g.width &&
               side + travel * static_cast<std::size_t>(std::abs(d.dy)) <= g.height;
    };
    std::vector<Dir> candidates;
    for (Dir d : kDirs)
        if (fits(d)) candidates.push_back(d);
    if (candidates.empty()) throw ConfigError("moving_square: square path does not fit in the frame");
    const Dir dir = candidates[uniform_index(rng, candidates.size())];

    // Start coordinate range along one axis such that the whole path stays inside.
    auto pick_start = [&](int d, std::size_t extent) {
        const std::size_t span = side + travel * static_cast<std::size_t>(std::abs(d));
        const std::size_t lo = d < 0 ? span - side : 0;
        const std::size_t hi = d < 0 ? extent - side : extent - span;
        if (p.align_to_patch) {
            std::vector<std::size_t> aligned;
            for (std::size_t s = (lo + patch - 1) / patch * patch; s <= hi; s += patch) aligned.push_back(s);
            if (!aligned.empty()) return aligned[uniform_index(rng, aligned.size())];
        }
        return lo + uniform_index(rng, hi - lo + 1);
    };
    const std::size_t x0 = pick_start(dir.dx, g.width);
    const std::size_t y0 = pick_start(dir.dy, g.height);

    const std::size_t bg = uniform_index(rng, 256);
    const std::size_t fg = bg < 128 ? bg + 64 + uniform_index(rng, 256 - (bg + 64))
                                    : uniform_index(rng, bg - 64 + 1);

    GeneratedClip out;
    out.clip = blank_clip(g);
    std::fill(out.clip.pixels.begin(), out.clip.pixels.end(), static_cast<std::uint8_t>(bg));
    const std::size_t grid_w = g.width / patch;
    for (std::size_t t = 0; t < g.frames; ++t) {
        const auto shift = static_cast<std::ptrdiff_t>(t * speed);
        const std::size_t x = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x0) + dir.dx * shift);
        const std::size_t y = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y0) + dir.dy * shift);
        for (std::size_t yy = y; yy < y + side; ++yy)
            for (std::size_t xx = x; xx < x + side; ++xx)
                for (std::size_t c = 0; c < g.channels; ++c) out.clip.pixels[out.clip.index(t, yy, xx, c)] = static_cast<std::uint8_t>(fg);
        std::vector<std::size_t> tubes;
        for (std::size_t r = y / patch; r <= (y + side - 1) / patch; ++r)
            for (std::size_t col = x / patch; col <= (x + side - 1) / patch; ++col) tubes.push_back(r * grid_w + col);
        out.occupancy.push_back(std::move(tubes));
    }
    return out;
}

GeneratedClip make_static_texture(const ClipGeometry& g, Rng& rng) {
    constexpr double kTwoPi = 6.283185307179586476925;
    const double fx = 1.0 / 16.0 + uniform01(rng) * (1.0 / 4.0 - 1.0 / 16.0);
    const double fy = 1.0 / 16.0 + uniform01(rng) * (1.0 / 4.0 - 1.0 / 16.0);
    const double px = uniform01(rng), py = uniform01(rng);
    GeneratedClip out;
    out.clip = blank_clip(g);
    for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x) {
            const auto v = to_pixel(128.0 + 60.0 * std::sin(kTwoPi * (fx * static_cast<double>(x) + px)) +
                                    60.0 * std::sin(kTwoPi * (fy * static_cast<double>(y) + py)));
            for (std::size_t t = 0; t < g.frames; ++t)
                for (std::size_t c = 0; c < g.channels; ++c) out.clip.pixels[out.clip.index(t, y, x, c)] = v;
        }
    return out;
}

GeneratedClip make_homogeneous(const ClipGeometry& g, Rng& rng) {
    GeneratedClip out;
    out.clip = blank_clip(g);
    std::fill(out.clip.pixels.begin(), out.clip.pixels.end(), static_cast<std::uint8_t>(uniform_index(rng, 256)));
    return out;
}

GeneratedClip make_noise_field(const ClipGeometry& g, Rng& rng) {
    GeneratedClip out;
    out.clip = blank_clip(g);
    for (auto& px : out.clip.pixels) px = static_cast<std::uint8_t>(uniform_index(rng, 256));
    return out;
}

}  // namespace

// ---- clips ----------------------------------------------------------------

void VideoClip::validate(std::size_t patch_size) const {
    if (frames == 0 || height == 0 || width == 0 || channels == 0) throw ContractError("clip has a zero extent");
    if (pixels.size() != frames * height * width * channels) {
        throw ContractError("clip payload holds " + std::to_string(pixels.size()) + " bytes, expected " +
                            std::to_string(frames * height * width * channels));
    }
    if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0) {
        throw ContractError("clip " + std::to_string(height) + "x" + std::to_string(width) +
                            " is not divisible by patch size " + std::to_string(patch_size));
    }
}

std::vector<std::uint8_t> encode_clip(const VideoClip& clip) {
    if (clip.pixels.size() != clip.frames * clip.height * clip.width * clip.channels) {
        throw ContractError("encode_clip: payload size does not match header");
    }
    std::vector<std::uint8_t> out(kClipMagic.begin(), kClipMagic.end());
    out.reserve(kHeaderBytes + clip.pixels.size());
    put_u32(out, checked_u32(clip.frames, "frames"));
    put_u32(out, checked_u32(clip.height, "height"));
    put_u32(out, checked_u32(clip.width, "width"));
    put_u32(out, checked_u32(clip.channels, "channels"));
    put_u32(out, checked_u32(static_cast<std::size_t>(std::llround(clip.fps * 1000.0)), "fps"));
    out.insert(out.end(), clip.pixels.begin(), clip.pixels.end());
    return out;
}

VideoClip decode_clip(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4) throw FormatError("UVC1: file shorter than magic", bytes.size());
    if (!std::equal(kClipMagic.begin(), kClipMagic.end(), bytes.begin())) throw FormatError("UVC1: bad magic", 0);
    if (bytes.size() < kHeaderBytes) throw FormatError("UVC1: truncated header", bytes.size());
    VideoClip clip;
    clip.frames = get_u32(bytes, 4);
    clip.height = get_u32(bytes, 8);
    clip.width = get_u32(bytes, 12);
    clip.channels = get_u32(bytes, 16);
    clip.fps = static_cast<double>(get_u32(bytes, 20)) / 1000.0;
    if (clip.frames == 0) throw FormatError("UVC1: zero frames", 4);
    if (clip.height == 0 || clip.width == 0 || clip.channels == 0) throw FormatError("UVC1: zero extent", 8);
    const std::size_t payload = clip.frames * clip.height * clip.width * clip.channels;
    if (bytes.size() < kHeaderBytes + payload) {
        throw FormatError("UVC1: truncated payload, expected " + std::to_string(payload) + " pixel bytes", bytes.size());
    }
    if (bytes.size() > kHeaderBytes + payload) throw FormatError("UVC1: trailing bytes after payload", kHeaderBytes + payload);
    clip.pixels.assign(bytes.begin() + kHeaderBytes, bytes.end());
    return clip;
}

VideoClip read_clip(const fs::path& path) { return decode_clip(read_file_bytes(path)); }

void write_clip(const VideoClip& clip, const fs::path& path) { write_file_bytes(path, encode_clip(clip)); }

// ---- manifests ------------------------------------------------------------

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    Manifest out;
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        const std::uint64_t line_offset = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(std::string("manifest: ") + e.what(), line_offset);
        }
        try {
            ManifestRecord r;
            r.clip_path = j.at("clip_path").get<std::string>();
            r.dataset_id = j.at("dataset_id").get<std::string>();
            r.specialty_id = j.at("specialty_id").get<std::string>();
            r.num_frames = j.at("num_frames").get<std::size_t>();
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw FormatError(std::string("manifest record: ") + e.what(), line_offset);
        }
    }
    return out;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
    std::string text;
    for (const auto& r : manifest) {
        json j{{"clip_path", r.clip_path}, {"dataset_id", r.dataset_id}, {"specialty_id", r.specialty_id},
               {"num_frames", r.num_frames}};
        text += j.dump() + "\n";
    }
    write_text(path, text);
}

fs::path resolve_clip_path(const fs::path& manifest_path, const ManifestRecord& record) {
    const fs::path clip(record.clip_path);
    return clip.is_absolute() ? clip : manifest_path.parent_path() / clip;
}

// ---- corpus spec ----------------------------------------------------------

CorpusSpec CorpusSpec::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("corpus spec: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("corpus spec: top level must be an object");
    reject_unknown_keys(j, {"frames", "height", "width", "channels", "patch_size", "groups"}, "corpus spec");
    CorpusSpec spec;
    try {
        spec.geometry.frames = j.value("frames", spec.geometry.frames);
        spec.geometry.height = j.value("height", spec.geometry.height);
        spec.geometry.width = j.value("width", spec.geometry.width);
        spec.geometry.channels = j.value("channels", spec.geometry.channels);
        spec.geometry.patch_size = j.value("patch_size", spec.geometry.patch_size);
        for (const auto& g : j.at("groups")) {
            reject_unknown_keys(g, {"generator", "count", "dataset_id", "specialty_id", "params"}, "corpus group");
            CorpusGroup group;
            group.generator = g.at("generator").get<std::string>();
            group.count = g.at("count").get<std::size_t>();
            group.dataset_id = g.at("dataset_id").get<std::string>();
            group.specialty_id = g.at("specialty_id").get<std::string>();
            if (g.contains("params")) {
                const auto& p = g.at("params");
                reject_unknown_keys(p, {"square_size", "speed", "align_to_patch"}, "generator params");
                group.params.square_size = p.value("square_size", std::size_t{0});
                group.params.speed = p.value("speed", std::size_t{0});
                group.params.align_to_patch = p.value("align_to_patch", false);
            }
            spec.groups.push_back(std::move(group));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("corpus spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

void CorpusSpec::validate() const {
    const auto& g = geometry;
    if (g.frames == 0 || g.height == 0 || g.width == 0 || g.channels == 0) throw ConfigError("corpus spec: zero extent");
    if (g.patch_size == 0 || g.height % g.patch_size || g.width % g.patch_size) {
        throw ConfigError("corpus spec: frame size not divisible by patch_size");
    }
    if (groups.empty()) throw ConfigError("corpus spec: no groups");
    std::map<std::string, std::string> dataset_specialty;
    for (const auto& group : groups) {
        if (!known_generators().contains(group.generator)) {
            throw ConfigError("corpus spec: unknown generator '" + group.generator + "'");
        }
        if (group.count == 0) throw ConfigError("corpus spec: group '" + group.dataset_id + "' has zero clips");
        auto [it, inserted] = dataset_specialty.emplace(group.dataset_id, group.specialty_id);
        if (!inserted && it->second != group.specialty_id) {
            throw ConfigError("corpus spec: dataset '" + group.dataset_id + "' spans two specialties");
        }
    }
}

std::size_t CorpusSpec::total_clips() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.count;
    return n;
}

std::vector<std::string> CorpusSpec::class_names() const {
    std::vector<std::string> names;
    for (const auto& g : groups)
        if (std::find(names.begin(), names.end(), g.generator) == names.end()) names.push_back(g.generator);
    return names;
}

GeneratedClip generate_clip(const std::string& generator, const ClipGeometry& geometry, const GeneratorParams& params,
                            Rng& rng) {
    if (generator == "moving_square") return make_moving_square(geometry, params, rng);
    if (generator == "static_texture") return make_static_texture(geometry, rng);
    if (generator == "homogeneous") return make_homogeneous(geometry, rng);
    if (generator == "noise_field") return make_noise_field(geometry, rng);
    throw ConfigError("unknown generator '" + generator + "'");
}

fs::path sidecar_path(const fs::path& clip_path) { return fs::path(clip_path.string() + ".occ.json"); }

CorpusSummary gen_synthetic_corpus(const CorpusSpec& spec, const fs::path& out_dir, std::uint64_t seed) {
    spec.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "clips", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "clips").string() + ": " + ec.message());

    const auto classes = spec.class_names();
    const std::size_t grid_h = spec.geometry.height / spec.geometry.patch_size;
    const std::size_t grid_w = spec.geometry.width / spec.geometry.patch_size;
    Manifest manifest;
    std::string labels;
    CorpusSummary summary;
    std::size_t clip_index = 0;
    for (const auto& group : spec.groups) {
        const std::size_t label =
            static_cast<std::size_t>(std::find(classes.begin(), classes.end(), group.generator) - classes.begin());
        for (std::size_t i = 0; i < group.count; ++i, ++clip_index) {
            Rng rng = make_rng(seed, clip_index);
            GeneratedClip gen = generate_clip(group.generator, spec.geometry, group.params, rng);
            char name[32];
            std::snprintf(name, sizeof(name), "clips/%06zu.uvc", clip_index);
            const fs::path clip_path = out_dir / name;
            write_clip(gen.clip, clip_path);
            if (group.generator == "moving_square") {
                json side{{"patch_size", spec.geometry.patch_size}, {"grid_h", grid_h}, {"grid_w", grid_w},
                          {"occupied", gen.occupancy}};
                write_text(sidecar_path(clip_path), side.dump() + "\n");
                ++summary.sidecars;
            }
            manifest.push_back({name, group.dataset_id, group.specialty_id, gen.clip.frames});
            labels += json{{"clip_path", name}, {"label", label}, {"generator", group.generator}}.dump() + "\n";
            ++summary.per_generator[group.generator];
            ++summary.clips;
        }
    }
    write_manifest(manifest, out_dir / "manifest.jsonl");
    write_text(out_dir / "labels.jsonl", labels);
    return summary;
}

std::vector<std::size_t> Occupancy::all_tubes() const {
    std::set<std::size_t> all;
    for (const auto& f : frames) all.insert(f.begin(), f.end());
    return {all.begin(), all.end()};
}

Occupancy read_occupancy(const fs::path& sidecar) {
    const auto bytes = read_file_bytes(sidecar);
    try {
        const json j = json::parse(bytes.begin(), bytes.end());
        Occupancy occ;
        occ.patch_size = j.at("patch_size").get<std::size_t>();
        occ.grid_h = j.at("grid_h").get<std::size_t>();
        occ.grid_w = j.at("grid_w").get<std::size_t>();
        occ.frames = j.at("occupied").get<std::vector<std::vector<std::size_t>>>();
        return occ;
    } catch (const json::exception& e) {
        throw FormatError(std::string("occupancy sidecar: ") + e.what(), 0);
    }
}

std::vector<LabelRecord> read_labels(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open labels " + path.string());
    std::vector<LabelRecord> out;
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        const std::uint64_t line_offset = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            out.push_back({j.at("clip_path").get<std::string>(), j.at("label").get<std::size_t>(),
                           j.value("generator", std::string{})});
        } catch (const json::exception& e) {
            throw FormatError(std::string("labels: ") + e.what(), line_offset);
        }
    }
    return out;
}

// ---- balanced sampling ----------------------------------------------------

double SampleWeightTable::specialty_mass(const std::string& specialty_id) const {
    double mass = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].specialty_id == specialty_id) mass += weights[i];
    return mass;
}

SampleWeightTable build_weight_table(const Manifest& manifest) {
    if (manifest.empty()) throw ContractError("build_weight_table: empty manifest");
    std::map<std::string, std::size_t> dataset_size;
    std::map<std::string, std::string> dataset_specialty;
    for (const auto& r : manifest) {
        if (r.num_frames == 0) throw ContractError("build_weight_table: record '" + r.clip_path + "' has no frames");
        ++dataset_size[r.dataset_id];
        auto [it, inserted] = dataset_specialty.emplace(r.dataset_id, r.specialty_id);
        if (!inserted && it->second != r.specialty_id) {
            throw ContractError("build_weight_table: dataset '" + r.dataset_id + "' spans specialties '" + it->second +
                                "' and '" + r.specialty_id + "'");
        }
    }
    std::map<std::string, std::size_t> datasets_per_specialty;
    for (const auto& [dataset, specialty] : dataset_specialty) ++datasets_per_specialty[specialty];

    SampleWeightTable table;
    table.records = manifest;
    table.weights.reserve(manifest.size());
    for (const auto& r : manifest) {
        const double n_d = static_cast<double>(dataset_size[r.dataset_id]);
        const double d_s = static_cast<double>(datasets_per_specialty[r.specialty_id]);
        table.weights.push_back(1.0 / (n_d * d_s));
    }
    for (double w : table.weights) table.normalization += w;
    for (double& w : table.weights) w /= table.normalization;
    return table;
}

std::vector<std::size_t> sample_indices(const SampleWeightTable& table, std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) throw ContractError("sample_batch: batch_size must be at least 1");
    std::vector<double> cumulative(table.weights.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < table.weights.size(); ++i) cumulative[i] = (acc += table.weights[i]);
    std::vector<std::size_t> out;
    out.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const double u = uniform01(rng) * acc;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
        if (idx >= cumulative.size()) idx = cumulative.size() - 1;
        out.push_back(idx);
    }
    return out;
}

std::vector<ManifestRecord> sample_batch(const SampleWeightTable& table, std::size_t batch_size, Rng& rng) {
    std::vector<ManifestRecord> out;
    for (std::size_t i : sample_indices(table, batch_size, rng)) out.push_back(table.records[i]);
    return out;
}

// ---- preprocessing --------------------------------------------------------

VideoClip resize_bilinear(const VideoClip& clip, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw ContractError("resize_bilinear: zero target size");
    if (height == clip.height && width == clip.width) return clip;
    VideoClip out = clip;
    out.height = height;
    out.width = width;
    out.pixels.assign(clip.frames * height * width * clip.channels, 0);
    const double sy = static_cast<double>(clip.height) / static_cast<double>(height);
    const double sx = static_cast<double>(clip.width) / static_cast<double>(width);
    auto source = [](double dst, double ratio, std::size_t extent, std::size_t& i0, std::size_t& i1, double& frac) {
        double s = (dst + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(extent - 1));
        i0 = static_cast<std::size_t>(s);
        i1 = std::min(i0 + 1, extent - 1);
        frac = s - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < height; ++y) {
        std::size_t y0, y1;
        double fy;
        source(static_cast<double>(y), sy, clip.height, y0, y1, fy);
        for (std::size_t x = 0; x < width; ++x) {
            std::size_t x0, x1;
            double fx;
            source(static_cast<double>(x), sx, clip.width, x0, x1, fx);
            for (std::size_t t = 0; t < clip.frames; ++t)
                for (std::size_t c = 0; c < clip.channels; ++c) {
                    // Lerp form keeps constant regions exact.
                    const double a = clip.at(t, y0, x0, c), b = clip.at(t, y0, x1, c);
                    const double d = clip.at(t, y1, x0, c), e = clip.at(t, y1, x1, c);
                    const double top = a + fx * (b - a);
                    const double bottom = d + fx * (e - d);
                    out.pixels[out.index(t, y, x, c)] = to_pixel(top + fy * (bottom - top));
                }
        }
    }
    return out;
}

VideoClip extract_training_clip(const VideoClip& clip, const ExtractOptions& options, Rng& rng) {
    if (options.frames == 0) throw ContractError("extract_training_clip: zero output frames");
    if (clip.frames < options.frames) {
        throw ContractError("extract_training_clip: clip has " + std::to_string(clip.frames) +
                            " frames, window needs " + std::to_string(options.frames));
    }
    const std::size_t slack = clip.frames - options.frames;
    const std::size_t t0 = options.train ? uniform_index(rng, slack + 1) : slack / 2;

    VideoClip window = clip;
    window.frames = options.frames;
    const std::size_t frame_bytes = clip.height * clip.width * clip.channels;
    window.pixels.assign(clip.pixels.begin() + static_cast<std::ptrdiff_t>(t0 * frame_bytes),
                         clip.pixels.begin() + static_cast<std::ptrdiff_t>((t0 + options.frames) * frame_bytes));

    const std::size_t shorter = std::min(clip.height, clip.width);
    std::size_t h = clip.height, w = clip.width;
    if (shorter != options.resize_short) {
        const double ratio = static_cast<double>(options.resize_short) / static_cast<double>(shorter);
        h = clip.height == shorter ? options.resize_short
                                   : static_cast<std::size_t>(std::llround(static_cast<double>(clip.height) * ratio));
        w = clip.width == shorter ? options.resize_short
                                  : static_cast<std::size_t>(std::llround(static_cast<double>(clip.width) * ratio));
    }
    const VideoClip resized = resize_bilinear(window, h, w);
    if (options.crop > h || options.crop > w) {
        throw ContractError("extract_training_clip: crop " + std::to_string(options.crop) + " exceeds resized frame");
    }
    const std::size_t oy = options.train ? uniform_index(rng, h - options.crop + 1) : (h - options.crop) / 2;
    const std::size_t ox = options.train ? uniform_index(rng, w - options.crop + 1) : (w - options.crop) / 2;

    VideoClip out = resized;
    out.height = options.crop;
    out.width = options.crop;
    out.pixels.assign(out.frames * out.height * out.width * out.channels, 0);
    for (std::size_t t = 0; t < out.frames; ++t)
        for (std::size_t y = 0; y < out.height; ++y)
            std::copy_n(resized.pixels.begin() + static_cast<std::ptrdiff_t>(resized.index(t, y + oy, ox, 0)),
                        out.width * out.channels, out.pixels.begin() + static_cast<std::ptrdiff_t>(out.index(t, y, 0, 0)));
    return out;
}

}  // namespace tubejepa
