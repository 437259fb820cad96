// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0
//
// Context encoder, masked-token predictor, EMA target encoder and the
// attentive probe. All transformers are pre-norm (LayerNorm -> attention,
// LayerNorm -> GELU MLP, residual adds) with a final LayerNorm.
//
// Parameters live in a ParameterSet (plain named arrays). A forward pass
// binds them to a Tape as variables (student) or as constants (teacher,
// frozen backbone), so the same code serves both branches.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tubejepa/random.hpp"
#include "tubejepa/tensor.hpp"
#include "tubejepa/tubes.hpp"
#include "tubejepa/video.hpp"

namespace tubejepa {

struct EncoderConfig {
    std::size_t dim = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t predictor_dim = 32;
    std::size_t predictor_depth = 2;
    std::size_t predictor_heads = 4;
    std::size_t max_tokens = 196;  // rows of the positional table
    std::size_t max_frames = 16;   // the tube projection spans max_frames * P * P * C inputs
    std::size_t patch_size = 16;
    std::size_t channels = 3;
    double init_std = 0.02;

    void validate() const;
    std::size_t tube_input_dim() const { return max_frames * patch_size * patch_size * channels; }
    bool operator==(const EncoderConfig&) const = default;
};

struct ParamTensor {
    Shape shape;
    std::vector<double> values;

    bool operator==(const ParamTensor&) const = default;
};

class ParameterSet {
public:
    void add(const std::string& name, Shape shape, std::vector<double> values);
    bool contains(const std::string& name) const { return tensors_.contains(name); }
    const ParamTensor& at(const std::string& name) const;
    ParamTensor& at(const std::string& name);
    std::size_t size() const { return tensors_.size(); }
    std::size_t element_count() const;

    // Same names and shapes.
    bool congruent_with(const ParameterSet& other) const;
    ParameterSet zeros_like() const;

    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }
    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }

    bool operator==(const ParameterSet&) const = default;

private:
    std::map<std::string, ParamTensor> tensors_;
};

// Parameters materialized as tensors for one forward pass.
class BoundParameters {
public:
    static BoundParameters variables(Tape& tape, const ParameterSet& params);
    static BoundParameters constants(const ParameterSet& params);
    // Caller-built tensors, e.g. finite-difference probes.
    static BoundParameters from_tensors(std::map<std::string, Tensor> tensors);

    const Tensor& operator[](const std::string& name) const;
    bool contains(const std::string& name) const { return tensors_.contains(name); }
    // Accumulated gradients by name (zeros where none reached).
    std::map<std::string, std::vector<double>> gradients() const;
    // True when no parameter received a materialized gradient.
    bool gradients_absent() const;

private:
    std::map<std::string, Tensor> tensors_;
};

ParameterSet init_backbone(const EncoderConfig& config, std::uint64_t seed);

// Rows of [0,1]-scaled tube pixels (T*P*P*C each) for the listed tubes.
Tensor tube_pixels(const VideoClip& clip, const TubeGrid& grid, std::span<const std::size_t> tubes);

// Linear projection of the listed tubes plus their positional embeddings.
Tensor tube_embed(const VideoClip& clip, const TubeGrid& grid, std::span<const std::size_t> tubes,
                  const BoundParameters& params, const EncoderConfig& config);

// Context encoder over the visible tubes only.
Tensor encode_visible(const VideoClip& clip, const TubeGrid& grid, const TubePartition& partition,
                      const BoundParameters& params, const EncoderConfig& config);

// Context encoder over every tube (same weights; used for the target branch).
Tensor encode_full(const VideoClip& clip, const TubeGrid& grid, const BoundParameters& params,
                   const EncoderConfig& config);

struct Prediction {
    Tensor visible;  // |I_v| x D pass-through outputs
    Tensor masked;   // |I_m| x D predicted latents, rows in partition.masked order
};

// Masked tokens m_i = q + e_i are appended to the visible latents and run
// through the predictor.
Prediction predict_masked(const Tensor& visible_latents, const TubePartition& partition,
                          const BoundParameters& params, const EncoderConfig& config);

// Masked tokens before the predictor, one row per masked tube.
Tensor mask_tokens(const TubePartition& partition, const BoundParameters& params);

// Target encoder output N x D, detached from any tape.
Tensor encode_full_ema(const VideoClip& clip, const TubeGrid& grid, const ParameterSet& teacher,
                       const EncoderConfig& config);

// teacher <- alpha * teacher + (1 - alpha) * student
void ema_update(const ParameterSet& student, ParameterSet& teacher, double alpha);

// ---- attentive probe ------------------------------------------------------

struct ProbeConfig {
    std::size_t dim = 64;
    std::size_t blocks = 4;
    std::size_t heads = 16;
    std::size_t mlp_ratio = 4;
    std::size_t num_classes = 2;
    double init_std = 0.02;

    void validate() const;
};

ParameterSet init_probe(const ProbeConfig& config, std::uint64_t seed);

// A learnable query cross-attends to frozen features (N x D) through the
// probe blocks; returns num_classes logits. Features must not require grad.
Tensor attentive_probe(const Tensor& features, const BoundParameters& probe, const ProbeConfig& config);

// ---- UWT1 tensor files ----------------------------------------------------
//
// "UWT1" | u32 count | count x { u32 name_len | name | u32 rank | u64 extents[rank] | f64 values[] }
// Little-endian throughout. Records are written in the order given.

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;

    bool operator==(const NamedTensor&) const = default;
};

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& records);
std::vector<NamedTensor> decode_tensors(const std::vector<std::uint8_t>& bytes);

// Writes via a temporary sibling file and rename.
void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);

std::vector<NamedTensor> to_records(const ParameterSet& params, const std::string& prefix = "");
ParameterSet from_records(const std::vector<NamedTensor>& records, const std::string& prefix = "");

void save_parameters(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet load_parameters(const std::filesystem::path& path);

std::vector<double> encode_config(const EncoderConfig& config);
EncoderConfig decode_config(std::span<const double> values);

}  // namespace tubejepa
