// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include "tubejepa/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tubejepa/errors.hpp"

namespace tubejepa {

namespace {

std::string block_name(const std::string& stack, std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), ".block%02zu", i);
    return stack + buf;
}

class Initializer {
public:
    Initializer(std::uint64_t seed, double stddev) : rng_(make_rng(seed, 0x5eed)), stddev_(stddev) {}

    void normal(ParameterSet& p, const std::string& name, Shape shape) {
        std::vector<double> v(element_count(shape));
        for (double& x : v) x = tubejepa::normal(rng_, 0.0, stddev_);
        p.add(name, std::move(shape), std::move(v));
    }
    void fill(ParameterSet& p, const std::string& name, Shape shape, double value) {
        const std::size_t n = element_count(shape);
        p.add(name, std::move(shape), std::vector<double>(n, value));
    }
    void linear(ParameterSet& p, const std::string& name, std::size_t in, std::size_t out) {
        normal(p, name + ".weight", {in, out});
        fill(p, name + ".bias", {out}, 0.0);
    }
    void norm(ParameterSet& p, const std::string& name, std::size_t dim) {
        fill(p, name + ".gain", {dim}, 1.0);
        fill(p, name + ".bias", {dim}, 0.0);
    }
    void attention(ParameterSet& p, const std::string& name, std::size_t dim) {
        for (const char* part : {".q", ".k", ".v", ".o"}) linear(p, name + part, dim, dim);
    }
    void block(ParameterSet& p, const std::string& name, std::size_t dim, std::size_t mlp_ratio) {
        norm(p, name + ".norm1", dim);
        attention(p, name + ".attn", dim);
        norm(p, name + ".norm2", dim);
        linear(p, name + ".mlp.fc1", dim, dim * mlp_ratio);
        linear(p, name + ".mlp.fc2", dim * mlp_ratio, dim);
    }

private:
    Rng rng_;
    double stddev_;
};

Tensor linear(const Tensor& x, const BoundParameters& p, const std::string& name) {
    return add_row(matmul(x, p[name + ".weight"]), p[name + ".bias"]);
}

Tensor norm(const Tensor& x, const BoundParameters& p, const std::string& name) {
    return layer_norm(x, p[name + ".gain"], p[name + ".bias"]);
}

Tensor attention(const Tensor& query_in, const Tensor& kv_in, const BoundParameters& p, const std::string& name,
                 std::size_t heads) {
    const Tensor q = linear(query_in, p, name + ".q");
    const Tensor k = linear(kv_in, p, name + ".k");
    const Tensor v = linear(kv_in, p, name + ".v");
    const std::size_t dim = q.cols();
    const std::size_t head_dim = dim / heads;
    const double temperature = std::sqrt(static_cast<double>(head_dim));
    std::vector<Tensor> outputs;
    outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t lo = h * head_dim, hi = lo + head_dim;
        const Tensor qh = heads == 1 ? q : slice_cols(q, lo, hi);
        const Tensor kh = heads == 1 ? k : slice_cols(k, lo, hi);
        const Tensor vh = heads == 1 ? v : slice_cols(v, lo, hi);
        const Tensor weights = softmax(matmul(qh, transpose(kh)), temperature);
        outputs.push_back(matmul(weights, vh));
    }
    const Tensor merged = heads == 1 ? outputs.front() : concat_cols(outputs);
    return linear(merged, p, name + ".o");
}

Tensor mlp(const Tensor& x, const BoundParameters& p, const std::string& name) {
    return linear(gelu(linear(x, p, name + ".fc1")), p, name + ".fc2");
}

Tensor transformer_block(const Tensor& x, const BoundParameters& p, const std::string& name, std::size_t heads) {
    const Tensor h = norm(x, p, name + ".norm1");
    const Tensor y = x + attention(h, h, p, name + ".attn", heads);
    return y + mlp(norm(y, p, name + ".norm2"), p, name + ".mlp");
}

Tensor run_encoder(Tensor x, const BoundParameters& p, const EncoderConfig& config) {
    for (std::size_t b = 0; b < config.depth; ++b) x = transformer_block(x, p, block_name("encoder", b), config.heads);
    return norm(x, p, "encoder.norm");
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint64_t uint(std::size_t width, const char* what) {
        if (bytes_.size() - pos_ < width) throw FormatError(std::string("UWT1: truncated ") + what, pos_);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += width;
        return v;
    }
    std::string text(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError("UWT1: truncated name", pos_);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    std::size_t position() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

// ---- configuration --------------------------------------------------------

void EncoderConfig::validate() const {
    if (dim == 0 || depth == 0 || heads == 0 || mlp_ratio == 0) throw ConfigError("encoder: zero-sized dimension");
    if (dim % heads != 0) {
        throw ConfigError("encoder: dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
    }
    if (predictor_dim == 0 || predictor_depth == 0 || predictor_heads == 0) throw ConfigError("predictor: zero-sized dimension");
    if (predictor_dim % predictor_heads != 0) throw ConfigError("predictor: dim not divisible by heads");
    if (max_tokens < 2 || max_frames == 0 || patch_size == 0 || channels == 0) throw ConfigError("encoder: bad token geometry");
    if (!(init_std > 0.0)) throw ConfigError("encoder: init_std must be positive");
}

void ProbeConfig::validate() const {
    if (dim == 0 || blocks == 0 || heads == 0 || mlp_ratio == 0) throw ConfigError("probe: zero-sized dimension");
    if (dim % heads != 0) {
        throw ConfigError("probe: feature dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                          " heads");
    }
    if (num_classes < 2) throw ConfigError("probe: need at least two classes");
}

// ---- parameter containers -------------------------------------------------

void ParameterSet::add(const std::string& name, Shape shape, std::vector<double> values) {
    if (tubejepa::element_count(shape) != values.size()) {
        throw DimensionError("parameter '" + name + "' shape " + shape_string(shape) + " holds " +
                             std::to_string(values.size()) + " values");
    }
    if (!tensors_.emplace(name, ParamTensor{std::move(shape), std::move(values)}).second) {
        throw ContractError("duplicate parameter '" + name + "'");
    }
}

const ParamTensor& ParameterSet::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

ParamTensor& ParameterSet::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParameterSet::element_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors_) n += t.values.size();
    return n;
}

bool ParameterSet::congruent_with(const ParameterSet& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    auto it = other.tensors_.begin();
    for (const auto& [name, t] : tensors_) {
        if (it->first != name || it->second.shape != t.shape) return false;
        ++it;
    }
    return true;
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet out;
    for (const auto& [name, t] : tensors_) out.add(name, t.shape, std::vector<double>(t.values.size(), 0.0));
    return out;
}

BoundParameters BoundParameters::variables(Tape& tape, const ParameterSet& params) {
    BoundParameters out;
    for (const auto& [name, t] : params) out.tensors_.emplace(name, tape.variable(t.shape, t.values));
    return out;
}

BoundParameters BoundParameters::constants(const ParameterSet& params) {
    BoundParameters out;
    for (const auto& [name, t] : params) out.tensors_.emplace(name, Tensor::constant(t.shape, t.values));
    return out;
}

BoundParameters BoundParameters::from_tensors(std::map<std::string, Tensor> tensors) {
    BoundParameters out;
    out.tensors_ = std::move(tensors);
    return out;
}

const Tensor& BoundParameters::operator[](const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("parameter '" + name + "' is not bound");
    return it->second;
}

std::map<std::string, std::vector<double>> BoundParameters::gradients() const {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, t] : tensors_) out.emplace(name, t.grad_or_zeros());
    return out;
}

bool BoundParameters::gradients_absent() const {
    for (const auto& [name, t] : tensors_)
        if (t.has_grad()) return false;
    return true;
}

// ---- backbone -------------------------------------------------------------

ParameterSet init_backbone(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    ParameterSet p;
    Initializer init(seed, config.init_std);
    init.linear(p, "embed", config.tube_input_dim(), config.dim);
    init.normal(p, "pos", {config.max_tokens, config.dim});
    init.normal(p, "mask_query", {config.dim});
    for (std::size_t b = 0; b < config.depth; ++b) init.block(p, block_name("encoder", b), config.dim, config.mlp_ratio);
    init.norm(p, "encoder.norm", config.dim);
    init.linear(p, "predictor.in", config.dim, config.predictor_dim);
    for (std::size_t b = 0; b < config.predictor_depth; ++b) {
        init.block(p, block_name("predictor", b), config.predictor_dim, config.mlp_ratio);
    }
    init.norm(p, "predictor.norm", config.predictor_dim);
    init.linear(p, "predictor.out", config.predictor_dim, config.dim);
    return p;
}

Tensor tube_pixels(const VideoClip& clip, const TubeGrid& grid, std::span<const std::size_t> tubes) {
    const std::size_t p = grid.patch_size, c = clip.channels;
    if (clip.height != grid.grid_h * p || clip.width != grid.grid_w * p) {
        throw DimensionError("tube_pixels: clip " + std::to_string(clip.height) + "x" + std::to_string(clip.width) +
                             " does not match the tube grid");
    }
    const std::size_t row_len = clip.frames * p * p * c;
    std::vector<double> out(tubes.size() * row_len);
    for (std::size_t r = 0; r < tubes.size(); ++r) {
        if (tubes[r] >= grid.count()) throw DimensionError("tube_pixels: tube index outside grid");
        const std::size_t y0 = tubes[r] / grid.grid_w * p, x0 = tubes[r] % grid.grid_w * p;
        double* dst = out.data() + r * row_len;
        for (std::size_t t = 0; t < clip.frames; ++t)
            for (std::size_t y = 0; y < p; ++y) {
                const std::uint8_t* src = &clip.pixels[clip.index(t, y0 + y, x0, 0)];
                for (std::size_t k = 0; k < p * c; ++k) *dst++ = static_cast<double>(src[k]) / 255.0;
            }
    }
    return Tensor::constant({tubes.size(), row_len}, std::move(out));
}

Tensor tube_embed(const VideoClip& clip, const TubeGrid& grid, std::span<const std::size_t> tubes,
                  const BoundParameters& params, const EncoderConfig& config) {
    if (clip.channels != config.channels || grid.patch_size != config.patch_size) {
        throw DimensionError("tube_embed: clip channels/patch size do not match the encoder");
    }
    if (clip.frames > config.max_frames) {
        throw DimensionError("tube_embed: clip has " + std::to_string(clip.frames) + " frames, encoder accepts " +
                             std::to_string(config.max_frames));
    }
    if (grid.count() > config.max_tokens) {
        throw DimensionError("tube_embed: grid has " + std::to_string(grid.count()) + " tubes, encoder accepts " +
                             std::to_string(config.max_tokens));
    }
    const Tensor pixels = tube_pixels(clip, grid, tubes);
    const Tensor& weight = params["embed.weight"];
    // Shorter clips use the leading rows: equivalent to zero-padding time.
    const Tensor used = pixels.cols() == weight.rows() ? weight : slice_rows(weight, 0, pixels.cols());
    const Tensor projected = add_row(matmul(pixels, used), params["embed.bias"]);
    return projected + gather_rows(params["pos"], tubes);
}

Tensor encode_visible(const VideoClip& clip, const TubeGrid& grid, const TubePartition& partition,
                      const BoundParameters& params, const EncoderConfig& config) {
    if (partition.visible.empty()) throw ContractError("encode_visible: no visible tubes");
    if (partition.tube_count() != grid.count()) throw ContractError("encode_visible: partition does not match grid");
    return run_encoder(tube_embed(clip, grid, partition.visible, params, config), params, config);
}

Tensor encode_full(const VideoClip& clip, const TubeGrid& grid, const BoundParameters& params,
                   const EncoderConfig& config) {
    std::vector<std::size_t> all(grid.count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return run_encoder(tube_embed(clip, grid, all, params, config), params, config);
}

Tensor mask_tokens(const TubePartition& partition, const BoundParameters& params) {
    return add_row(gather_rows(params["pos"], partition.masked), params["mask_query"]);
}

Prediction predict_masked(const Tensor& visible_latents, const TubePartition& partition,
                          const BoundParameters& params, const EncoderConfig& config) {
    if (visible_latents.rank() != 2 || visible_latents.rows() != partition.visible.size()) {
        throw ContractError("predict_masked: visible latents do not match the partition");
    }
    if (partition.masked.empty()) throw ContractError("predict_masked: no masked tubes");
    const std::size_t nv = partition.visible.size(), nm = partition.masked.size();
    Tensor x = linear(concat_rows(visible_latents, mask_tokens(partition, params)), params, "predictor.in");
    for (std::size_t b = 0; b < config.predictor_depth; ++b) {
        x = transformer_block(x, params, block_name("predictor", b), config.predictor_heads);
    }
    x = linear(norm(x, params, "predictor.norm"), params, "predictor.out");
    return {slice_rows(x, 0, nv), slice_rows(x, nv, nv + nm)};
}

Tensor encode_full_ema(const VideoClip& clip, const TubeGrid& grid, const ParameterSet& teacher,
                       const EncoderConfig& config) {
    return encode_full(clip, grid, BoundParameters::constants(teacher), config).detach();
}

void ema_update(const ParameterSet& student, ParameterSet& teacher, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("ema_update: alpha must lie in [0, 1]");
    if (!student.congruent_with(teacher)) throw DimensionError("ema_update: student and teacher are not congruent");
    const double beta = 1.0 - alpha;
    auto s = student.begin();
    for (auto& [name, t] : teacher) {
        const auto& sv = s->second.values;
        for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = alpha * t.values[i] + beta * sv[i];
        ++s;
    }
}

// ---- probe ----------------------------------------------------------------

ParameterSet init_probe(const ProbeConfig& config, std::uint64_t seed) {
    config.validate();
    ParameterSet p;
    Initializer init(seed, config.init_std);
    init.normal(p, "probe.query", {1, config.dim});
    for (std::size_t b = 0; b < config.blocks; ++b) {
        const std::string name = block_name("probe", b);
        init.norm(p, name + ".norm_q", config.dim);
        init.norm(p, name + ".norm_kv", config.dim);
        init.attention(p, name + ".attn", config.dim);
        init.norm(p, name + ".norm2", config.dim);
        init.linear(p, name + ".mlp.fc1", config.dim, config.dim * config.mlp_ratio);
        init.linear(p, name + ".mlp.fc2", config.dim * config.mlp_ratio, config.dim);
    }
    init.norm(p, "probe.norm", config.dim);
    init.linear(p, "probe.head", config.dim, config.num_classes);
    return p;
}

Tensor attentive_probe(const Tensor& features, const BoundParameters& probe, const ProbeConfig& config) {
    config.validate();
    if (features.requires_grad()) throw ContractError("attentive_probe: features must be detached from the backbone");
    if (features.rank() != 2 || features.cols() != config.dim || features.rows() == 0) {
        throw DimensionError("attentive_probe: features " + shape_string(features.shape()) + " do not match dim " +
                             std::to_string(config.dim));
    }
    Tensor x = probe["probe.query"];
    for (std::size_t b = 0; b < config.blocks; ++b) {
        const std::string name = block_name("probe", b);
        const Tensor kv = norm(features, probe, name + ".norm_kv");
        x = x + attention(norm(x, probe, name + ".norm_q"), kv, probe, name + ".attn", config.heads);
        x = x + mlp(norm(x, probe, name + ".norm2"), probe, name + ".mlp");
    }
    const Tensor logits = linear(norm(x, probe, "probe.norm"), probe, "probe.head");
    return reshape(logits, {config.num_classes});
}

// ---- UWT1 -----------------------------------------------------------------

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& records) {
    std::vector<std::uint8_t> out{'U', 'W', 'T', '1'};
    put_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        if (element_count(r.shape) != r.values.size()) throw DimensionError("UWT1: record '" + r.name + "' shape mismatch");
        put_u32(out, static_cast<std::uint32_t>(r.name.size()));
        out.insert(out.end(), r.name.begin(), r.name.end());
        put_u32(out, static_cast<std::uint32_t>(r.shape.size()));
        for (std::size_t e : r.shape) put_u64(out, e);
        for (double v : r.values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            put_u64(out, bits);
        }
    }
    return out;
}

std::vector<NamedTensor> decode_tensors(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "UWT1")) throw FormatError("UWT1: bad magic", 0);
    Reader in(bytes);
    in.text(4);
    const std::uint64_t count = in.uint(4, "record count");
    std::vector<NamedTensor> out;
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedTensor r;
        r.name = in.text(in.uint(4, "name length"));
        const std::uint64_t rank = in.uint(4, "rank");
        if (rank > 8) throw FormatError("UWT1: implausible rank", in.position());
        for (std::uint64_t d = 0; d < rank; ++d) r.shape.push_back(in.uint(8, "extent"));
        const std::size_t n = element_count(r.shape);
        if (n > (bytes.size() - in.position()) / 8) throw FormatError("UWT1: truncated values of '" + r.name + "'", in.position());
        r.values.resize(n);
        for (double& v : r.values) {
            const std::uint64_t bits = in.uint(8, "value");
            std::memcpy(&v, &bits, sizeof v);
        }
        out.push_back(std::move(r));
    }
    if (!in.done()) throw FormatError("UWT1: trailing bytes", in.position());
    return out;
}

void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
    if (path.empty()) throw IoError("write_tensor_file: empty path");
    const auto bytes = encode_tensors(records);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_tensors(bytes);
}

std::vector<NamedTensor> to_records(const ParameterSet& params, const std::string& prefix) {
    std::vector<NamedTensor> out;
    for (const auto& [name, t] : params) out.push_back({prefix + name, t.shape, t.values});
    return out;
}

ParameterSet from_records(const std::vector<NamedTensor>& records, const std::string& prefix) {
    ParameterSet out;
    for (const auto& r : records) {
        if (r.name.compare(0, prefix.size(), prefix) == 0) out.add(r.name.substr(prefix.size()), r.shape, r.values);
    }
    return out;
}

void save_parameters(const ParameterSet& params, const std::filesystem::path& path) {
    write_tensor_file(path, to_records(params));
}

ParameterSet load_parameters(const std::filesystem::path& path) { return from_records(read_tensor_file(path)); }

std::vector<double> encode_config(const EncoderConfig& c) {
    auto d = [](std::size_t v) { return static_cast<double>(v); };
    return {d(c.dim),       d(c.depth),      d(c.heads),      d(c.mlp_ratio), d(c.predictor_dim), d(c.predictor_depth),
            d(c.predictor_heads), d(c.max_tokens), d(c.max_frames), d(c.patch_size), d(c.channels), c.init_std};
}

EncoderConfig decode_config(std::span<const double> v) {
    if (v.size() != 12) throw FormatError("encoder config record has " + std::to_string(v.size()) + " values", 0);
    auto u = [&](std::size_t i) { return static_cast<std::size_t>(v[i]); };
    EncoderConfig c;
    c.dim = u(0);
    c.depth = u(1);
    c.heads = u(2);
    c.mlp_ratio = u(3);
    c.predictor_dim = u(4);
    c.predictor_depth = u(5);
    c.predictor_heads = u(6);
    c.max_tokens = u(7);
    c.max_frames = u(8);
    c.patch_size = u(9);
    c.channels = u(10);
    c.init_std = v[11];
    c.validate();
    return c;
}

}  // namespace tubejepa
