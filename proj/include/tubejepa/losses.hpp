// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives:
//   L = L_motion + lambda_st * L_st + lambda_var * L_var
// Teacher latents are always treated as stop-gradient targets; every
// function detaches them on entry.

#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "tubejepa/tensor.hpp"
#include "tubejepa/tubes.hpp"

namespace tubejepa {

struct LossConfig {
    double lambda_st = 0.1;
    double lambda_var = 0.3;
    double tau = 0.1;
    double sigma0 = 1.0;
    std::size_t top_k = 3;
    double gamma = 2.0;
    // Adds an unweighted l1 term for masked tubes outside the top-K set.
    bool include_all_masked = false;
    // Drops j == i from the affinity softmax (ablation only).
    bool exclude_self_affinity = false;
    double norm_epsilon = 1e-8;

    void validate() const;
};

// sum_{i in I_h} (1 + w_i) * |z_hat_i - sg(z^E_i)|_1
// predicted_masked: |I_m| x D in partition.masked order; teacher_full: N x D.
Tensor motion_loss(const Tensor& predicted_masked, const Tensor& teacher_full, const TubePartition& partition,
                   const LossConfig& config);

// Row-stochastic softmax over cosine similarities / tau, M x M.
Tensor affinity_matrix(const Tensor& latents, double tau, double epsilon = 1e-8, bool exclude_self = false);

// (1/M) sum_i KL(a^E_i || a_hat_i); both inputs M x D, rows aligned.
Tensor st_distillation_loss(const Tensor& predicted_masked, const Tensor& teacher_masked, const LossConfig& config);

// (1/D) sum_d max(0, sigma0 - sigma_d), sample std over the B rows.
Tensor variance_loss(const Tensor& predicted, const LossConfig& config);

struct LossReport {
    double motion = 0.0;
    double st = 0.0;
    double var = 0.0;
    double total = 0.0;
    double mean_sigma = 0.0;        // mean per-dim std of the pooled predictions
    double affinity_entropy = 0.0;  // mean row entropy of the student affinities
    double high_motion = 0.0;       // mean realized |I_h| per clip

    // Flat JSON object: step, motion, st, var, total, mean_sigma, affinity_entropy.
    std::string to_json(std::size_t step) const;
};

struct ClipOutputs {
    Tensor predicted_masked;  // |I_m| x D
    Tensor teacher_full;      // N x D
    const TubePartition* partition = nullptr;
};

struct CompositeLoss {
    Tensor total;
    Tensor motion;
    Tensor st;
    Tensor var;
    LossReport report;
};

// Motion and affinity terms are averaged over clips; the variance term pools
// every predicted masked token of the batch into one matrix.
CompositeLoss composite_loss(std::span<const ClipOutputs> clips, const LossConfig& config);

}  // namespace tubejepa
