// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include "tubejepa/losses.hpp"

#include <cmath>
#include <json.hpp>
#include <vector>

#include "tubejepa/errors.hpp"

namespace tubejepa {

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("loss: tau must be positive");
    if (!(sigma0 > 0.0)) throw ConfigError("loss: sigma0 must be positive");
    if (!(lambda_st >= 0.0) || !(lambda_var >= 0.0)) throw ConfigError("loss: lambdas must be nonnegative");
    if (top_k == 0) throw ConfigError("loss: top_k must be at least 1");
    if (!std::isfinite(gamma)) throw ConfigError("loss: gamma must be finite");
    if (!(norm_epsilon > 0.0)) throw ConfigError("loss: norm_epsilon must be positive");
}

Tensor motion_loss(const Tensor& predicted_masked, const Tensor& teacher_full, const TubePartition& partition,
                   const LossConfig& config) {
    if (partition.high_motion.empty()) throw ContractError("motion_loss: empty high-motion set");
    if (partition.weights.size() != partition.high_motion.size()) {
        throw ContractError("motion_loss: weights do not align with the high-motion set");
    }
    if (predicted_masked.rank() != 2 || predicted_masked.rows() != partition.masked.size()) {
        throw DimensionError("motion_loss: predictions " + shape_string(predicted_masked.shape()) + " for " +
                             std::to_string(partition.masked.size()) + " masked tubes");
    }
    if (teacher_full.rank() != 2 || teacher_full.rows() != partition.tube_count() ||
        teacher_full.cols() != predicted_masked.cols()) {
        throw DimensionError("motion_loss: teacher latents " + shape_string(teacher_full.shape()) +
                             " do not match the partition");
    }
    const Tensor target = teacher_full.detach();
    auto tube_term = [&](std::size_t tube) {
        const std::size_t row = partition.masked_row(tube);
        const std::size_t pred_row[] = {row};
        const std::size_t target_row[] = {tube};
        return l1_distance(gather_rows(predicted_masked, pred_row), gather_rows(target, target_row));
    };

    Tensor total;
    bool first = true;
    auto accumulate = [&](const Tensor& term) {
        total = first ? term : total + term;
        first = false;
    };
    for (std::size_t k = 0; k < partition.high_motion.size(); ++k) {
        accumulate(scale(tube_term(partition.high_motion[k]), 1.0 + partition.weights[k]));
    }
    if (config.include_all_masked) {
        for (std::size_t tube : partition.masked) {
            bool in_top = false;
            for (std::size_t h : partition.high_motion) in_top = in_top || h == tube;
            if (!in_top) accumulate(tube_term(tube));
        }
    }
    return total;
}

Tensor affinity_matrix(const Tensor& latents, double tau, double epsilon, bool exclude_self) {
    if (latents.rank() != 2 || latents.rows() < 2) {
        throw ContractError("affinity_matrix: need at least two masked latents, got " + shape_string(latents.shape()));
    }
    if (!(tau > 0.0)) throw ContractError("affinity_matrix: tau must be positive");
    const Tensor u = l2_normalize(latents, epsilon);
    Tensor similarity = matmul(u, transpose(u));
    if (exclude_self) similarity = fill_diagonal(similarity, -1e30);
    return softmax(similarity, tau);
}

Tensor st_distillation_loss(const Tensor& predicted_masked, const Tensor& teacher_masked, const LossConfig& config) {
    if (predicted_masked.shape() != teacher_masked.shape()) {
        throw DimensionError("st_distillation_loss: shapes " + shape_string(predicted_masked.shape()) + " and " +
                             shape_string(teacher_masked.shape()));
    }
    const Tensor teacher = affinity_matrix(teacher_masked.detach(), config.tau, config.norm_epsilon,
                                           config.exclude_self_affinity);
    const Tensor student = affinity_matrix(predicted_masked, config.tau, config.norm_epsilon,
                                           config.exclude_self_affinity);
    return scale(kl_divergence(teacher, student), 1.0 / static_cast<double>(predicted_masked.rows()));
}

Tensor variance_loss(const Tensor& predicted, const LossConfig& config) {
    if (predicted.rank() != 2 || predicted.rows() < 2) {
        throw ContractError("variance_loss: need at least two rows, got " + shape_string(predicted.shape()));
    }
    const Tensor sigma = std_per_dim(predicted);
    return mean(relu(add_scalar(scale(sigma, -1.0), config.sigma0)));
}

std::string LossReport::to_json(std::size_t step) const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["motion"] = motion;
    j["st"] = st;
    j["var"] = var;
    j["total"] = total;
    j["mean_sigma"] = mean_sigma;
    j["affinity_entropy"] = affinity_entropy;
    return j.dump();
}

namespace {

double mean_row_entropy(const Tensor& affinity) {
    const std::size_t m = affinity.rows();
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double h = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double p = affinity.at(i, j);
            if (p > 0.0) h -= p * std::log(p);
        }
        total += h;
    }
    return total / static_cast<double>(m);
}

}  // namespace

CompositeLoss composite_loss(std::span<const ClipOutputs> clips, const LossConfig& config) {
    config.validate();
    if (clips.empty()) throw ContractError("composite_loss: empty batch");
    const double inv_clips = 1.0 / static_cast<double>(clips.size());

    Tensor motion, st, pooled;
    double entropy = 0.0, high_motion = 0.0;
    for (std::size_t c = 0; c < clips.size(); ++c) {
        const ClipOutputs& clip = clips[c];
        if (clip.partition == nullptr) throw ContractError("composite_loss: clip without partition");
        const TubePartition& part = *clip.partition;
        const Tensor m = motion_loss(clip.predicted_masked, clip.teacher_full, part, config);
        const Tensor teacher_masked = gather_rows(clip.teacher_full.detach(), part.masked);
        const Tensor s = st_distillation_loss(clip.predicted_masked, teacher_masked, config);
        motion = c == 0 ? m : motion + m;
        st = c == 0 ? s : st + s;
        pooled = c == 0 ? clip.predicted_masked : concat_rows(pooled, clip.predicted_masked);

        const Tensor student_affinity = affinity_matrix(clip.predicted_masked.detach(), config.tau,
                                                        config.norm_epsilon, config.exclude_self_affinity);
        entropy += mean_row_entropy(student_affinity);
        high_motion += static_cast<double>(part.high_motion.size());
    }
    if (clips.size() > 1) {
        motion = scale(motion, inv_clips);
        st = scale(st, inv_clips);
    }
    const Tensor var = variance_loss(pooled, config);
    const Tensor total = motion + scale(st, config.lambda_st) + scale(var, config.lambda_var);

    CompositeLoss out{total, motion, st, var, {}};
    out.report.motion = motion.item();
    out.report.st = st.item();
    out.report.var = var.item();
    out.report.total = total.item();
    double sigma_sum = 0.0;
    const Tensor sigma = std_per_dim(pooled.detach());
    for (double s : sigma.values()) sigma_sum += s;
    out.report.mean_sigma = sigma_sum / static_cast<double>(sigma.size());
    out.report.affinity_entropy = entropy * inv_clips;
    out.report.high_motion = high_motion * inv_clips;
    for (double v : {out.report.motion, out.report.st, out.report.var, out.report.total}) {
        if (!std::isfinite(v)) throw NumericError("composite_loss: non-finite loss value");
    }
    return out;
}

}  // namespace tubejepa
