// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include "tubejepa/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "tubejepa/errors.hpp"
#include "tubejepa/random.hpp"

namespace tubejepa {

namespace {

std::vector<double> normals(Rng& rng, std::size_t n, double stddev = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = normal(rng, 0.0, stddev);
    return v;
}

Tensor random_tensor(Rng& rng, Shape shape, double stddev = 1.0) {
    const std::size_t n = element_count(shape);
    return Tensor::constant(std::move(shape), normals(rng, n, stddev));
}

// Values pushed at least `gap` away from zero, so kinks stay out of reach of
// the finite-difference step.
Tensor off_kink_tensor(Rng& rng, Shape shape, double gap = 0.1) {
    std::vector<double> v = normals(rng, element_count(shape));
    for (double& x : v) x = x >= 0.0 ? x + gap : x - gap;
    return Tensor::constant(std::move(shape), std::move(v));
}

// Scalar projection <out, W> with a fixed random W, so every output element
// contributes a distinct weight to the checked gradient.
std::function<Tensor(const Tensor&)> projector(Rng& rng) {
    auto weights = std::make_shared<std::map<Shape, Tensor>>();
    auto seed = static_cast<std::uint64_t>(rng());
    return [weights, seed](const Tensor& out) {
        if (out.size() == 1) return out;
        auto it = weights->find(out.shape());
        if (it == weights->end()) {
            Rng local = make_rng(seed);
            it = weights->emplace(out.shape(), random_tensor(local, out.shape())).first;
        }
        return sum(mul(out, it->second));
    };
}

struct PrimitiveCase {
    std::string name;
    std::function<std::vector<Tensor>(Rng&)> inputs;
    std::function<Tensor(std::span<const Tensor>)> body;
};

std::vector<PrimitiveCase> primitive_cases() {
    using Args = std::span<const Tensor>;
    const std::size_t rows_picked[] = {2, 0, 2};
    std::vector<std::size_t> picked(std::begin(rows_picked), std::end(rows_picked));
    return {
        {"matmul", [](Rng& r) { return std::vector{random_tensor(r, {3, 4}), random_tensor(r, {4, 2})}; },
         [](Args a) { return matmul(a[0], a[1]); }},
        {"transpose", [](Rng& r) { return std::vector{random_tensor(r, {3, 4})}; },
         [](Args a) { return transpose(a[0]); }},
        {"reshape", [](Rng& r) { return std::vector{random_tensor(r, {3, 4})}; },
         [](Args a) { return reshape(a[0], {2, 6}); }},
        {"add", [](Rng& r) { return std::vector{random_tensor(r, {3, 4}), random_tensor(r, {3, 4})}; },
         [](Args a) { return add(a[0], a[1]); }},
        {"sub", [](Rng& r) { return std::vector{random_tensor(r, {3, 4}), random_tensor(r, {3, 4})}; },
         [](Args a) { return sub(a[0], a[1]); }},
        {"mul", [](Rng& r) { return std::vector{random_tensor(r, {3, 4}), random_tensor(r, {3, 4})}; },
         [](Args a) { return mul(a[0], a[1]); }},
        {"add_row", [](Rng& r) { return std::vector{random_tensor(r, {3, 4}), random_tensor(r, {4})}; },
         [](Args a) { return add_row(a[0], a[1]); }},
        {"scale", [](Rng& r) { return std::vector{random_tensor(r, {3, 4})}; },
         [](Args a) { return scale(a[0], -1.7); }},
        {"add_scalar", [](Rng& r) { return std::vector{random_tensor(r, {3, 4})}; },
         [](Args a) { return mul(add_scalar(a[0], 0.3), a[0]); }},
        {"sum", [](Rng& r) { return std::vector{random_tensor(r, {3, 4})}; },
         [](Args a) { return mul(sum(a[0]), sum(mul(a[0], a[0]))); }},
        {"mean", [](Rng& r) { return std::vector{random_tensor(r, {3, 4})}; },
         [](Args a) { return mul(mean(a[0]), mean(a[0])); }},
        {"relu", [](Rng& r) { return std::vector{off_kink_tensor(r, {3, 4})}; },
         [](Args a) { return relu(a[0]); }},
        {"gelu", [](Rng& r) { return std::vector{random_tensor(r, {3, 4}, 2.0)}; },
         [](Args a) { return gelu(a[0]); }},
        {"softmax", [](Rng& r) { return std::vector{random_tensor(r, {3, 5})}; },
         [](Args a) { return softmax(a[0], 0.7); }},
        {"l1_distance", [](Rng& r) {
             const Tensor a = random_tensor(r, {3, 4});
             const Tensor gap = off_kink_tensor(r, {3, 4});
             return std::vector{a, (a - gap).detach()};
         },
         [](Args a) { return l1_distance(a[0], a[1]); }},
        {"l2_normalize", [](Rng& r) { return std::vector{random_tensor(r, {3, 4})}; },
         [](Args a) { return l2_normalize(a[0]); }},
        {"kl_divergence", [](Rng& r) { return std::vector{random_tensor(r, {3, 5}), random_tensor(r, {3, 5})}; },
         [](Args a) { return kl_divergence(softmax(a[0], 0.5), softmax(a[1], 0.5)); }},
        {"std_per_dim", [](Rng& r) { return std::vector{random_tensor(r, {5, 3})}; },
         [](Args a) { return std_per_dim(a[0]); }},
        {"layer_norm",
         [](Rng& r) { return std::vector{random_tensor(r, {3, 6}), random_tensor(r, {6}), random_tensor(r, {6})}; },
         [](Args a) { return layer_norm(a[0], a[1], a[2]); }},
        {"gather_rows", [](Rng& r) { return std::vector{random_tensor(r, {4, 3})}; },
         [picked](Args a) { return gather_rows(a[0], picked); }},
        {"slice_rows", [](Rng& r) { return std::vector{random_tensor(r, {5, 3})}; },
         [](Args a) { return slice_rows(a[0], 1, 4); }},
        {"concat_rows", [](Rng& r) { return std::vector{random_tensor(r, {2, 3}), random_tensor(r, {3, 3})}; },
         [](Args a) { return concat_rows(a[0], a[1]); }},
        {"slice_cols", [](Rng& r) { return std::vector{random_tensor(r, {3, 5})}; },
         [](Args a) { return slice_cols(a[0], 1, 4); }},
        {"concat_cols", [](Rng& r) { return std::vector{random_tensor(r, {3, 2}), random_tensor(r, {3, 3})}; },
         [](Args a) {
             const Tensor parts[] = {a[0], a[1]};
             return concat_cols(parts);
         }},
        {"fill_diagonal", [](Rng& r) { return std::vector{random_tensor(r, {4, 4})}; },
         [](Args a) { return softmax(fill_diagonal(a[0], -2.0)); }},
        {"cross_entropy", [](Rng& r) { return std::vector{random_tensor(r, {5})}; },
         [](Args a) { return cross_entropy(a[0], 2); }},
    };
}

// A small synthetic partition over a 3x3 grid with random motion scores.
TubePartition random_partition(Rng& rng, const LossConfig& config) {
    const TubeGrid grid{1, 3, 3};
    const MaskSample mask = sample_mask(grid, rng);
    std::vector<double> motion(grid.count());
    for (double& g : motion) g = uniform01(rng);
    return make_partition(mask, std::move(motion), config.top_k, config.gamma);
}

void run_tensor_checks(const SuiteOptions& options, std::vector<SuiteCheck>& out) {
    const auto cases = primitive_cases();
    for (std::size_t c = 0; c < cases.size(); ++c) {
        for (std::size_t rep = 0; rep < options.repeats; ++rep) {
            const std::uint64_t seed = options.seed + rep;
            Rng rng = make_rng(seed, 1000 + c);
            const std::vector<Tensor> inputs = cases[c].inputs(rng);
            auto project = projector(rng);
            auto body = cases[c].body;
            const ScalarFunction f = [body, project](std::span<const Tensor> a) { return project(body(a)); };
            out.push_back({"tensor", cases[c].name, seed, gradcheck(f, inputs, options.tolerances)});
        }
    }
}

void run_loss_checks(const SuiteOptions& options, std::vector<SuiteCheck>& out) {
    const LossTerm terms[] = {LossTerm::motion, LossTerm::st, LossTerm::var, LossTerm::total};
    for (LossTerm term : terms) {
        for (std::size_t rep = 0; rep < options.repeats; ++rep) {
            const std::uint64_t seed = options.seed + rep;
            Rng rng = make_rng(seed, 2000 + static_cast<std::uint64_t>(term));
            const LossConfig config;
            const TubePartition partition = random_partition(rng, config);
            const std::size_t d = 6;
            const Tensor teacher = random_tensor(rng, {partition.tube_count(), d});
            // Columns with spreads on both sides of sigma0 exercise both
            // branches of the variance hinge.
            std::vector<double> pred = normals(rng, partition.masked.size() * d);
            for (std::size_t i = 0; i < pred.size(); ++i) pred[i] *= (i % d) % 2 == 0 ? 0.4 : 2.5;
            const Tensor predicted = Tensor::constant({partition.masked.size(), d}, pred);
            const ScalarFunction f = [&partition, teacher, term, config](std::span<const Tensor> a) {
                switch (term) {
                    case LossTerm::motion:
                        return motion_loss(a[0], teacher, partition, config);
                    case LossTerm::st:
                        return st_distillation_loss(a[0], gather_rows(teacher, partition.masked), config);
                    case LossTerm::var:
                        return variance_loss(a[0], config);
                    case LossTerm::total:
                        break;
                }
                const ClipOutputs clip{a[0], teacher, &partition};
                return composite_loss(std::span<const ClipOutputs>(&clip, 1), config).total;
            };
            const Tensor inputs[] = {predicted};
            out.push_back({"losses", loss_term_name(term), seed, gradcheck(f, inputs, options.tolerances)});
        }
    }
}

void run_network_checks(const SuiteOptions& options, std::vector<SuiteCheck>& out) {
    const LossTerm terms[] = {LossTerm::motion, LossTerm::st, LossTerm::var, LossTerm::total};
    for (std::size_t rep = 0; rep < options.repeats; ++rep) {
        const std::uint64_t seed = options.seed + rep;
        const TinyInstance instance = make_tiny_instance(seed);
        for (LossTerm term : terms) {
            out.push_back({"networks", std::string(loss_term_name(term)) + "_wrt_parameters", seed,
                           gradcheck_network(instance, term, options.tolerances)});
        }
    }
}

}  // namespace

const char* loss_term_name(LossTerm term) {
    switch (term) {
        case LossTerm::motion:
            return "motion";
        case LossTerm::st:
            return "st";
        case LossTerm::var:
            return "var";
        case LossTerm::total:
            return "composite";
    }
    return "?";
}

TinyInstance make_tiny_instance(std::uint64_t seed) {
    TinyInstance t;
    t.model.dim = 8;
    t.model.depth = 1;
    t.model.heads = 2;
    t.model.mlp_ratio = 2;
    t.model.predictor_dim = 8;
    t.model.predictor_depth = 1;
    t.model.predictor_heads = 2;
    t.model.max_tokens = 9;
    t.model.max_frames = 2;
    t.model.patch_size = 2;
    t.model.channels = 1;
    t.model.init_std = 0.3;

    Rng rng = make_rng(seed, 3000);
    t.clip.frames = 2;
    t.clip.height = 6;
    t.clip.width = 6;
    t.clip.channels = 1;
    t.clip.pixels.resize(2 * 6 * 6);
    for (auto& p : t.clip.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
    t.grid = TubeGrid::for_clip(t.clip, t.model.patch_size);
    const MaskSample mask = sample_mask(t.grid, rng);
    t.partition = make_partition(mask, motion_scores(t.clip, t.grid), t.loss.top_k, t.loss.gamma);

    t.student = init_backbone(t.model, seed);
    t.teacher = t.student;
    for (auto& [name, p] : t.teacher)
        for (double& v : p.values) v += normal(rng, 0.0, 0.1);
    return t;
}

Tensor tiny_instance_loss(const TinyInstance& t, const BoundParameters& student, LossTerm term) {
    const Tensor visible = encode_visible(t.clip, t.grid, t.partition, student, t.model);
    const Prediction prediction = predict_masked(visible, t.partition, student, t.model);
    const Tensor target = encode_full_ema(t.clip, t.grid, t.teacher, t.model);
    const ClipOutputs clip{prediction.masked, target, &t.partition};
    const CompositeLoss loss = composite_loss(std::span<const ClipOutputs>(&clip, 1), t.loss);
    switch (term) {
        case LossTerm::motion:
            return loss.motion;
        case LossTerm::st:
            return loss.st;
        case LossTerm::var:
            return loss.var;
        case LossTerm::total:
            break;
    }
    return loss.total;
}

GradcheckReport gradcheck_network(const TinyInstance& t, LossTerm term, const GradcheckOptions& options) {
    std::vector<std::string> names;
    std::vector<Tensor> inputs;
    for (const auto& [name, p] : t.student) {
        names.push_back(name);
        inputs.push_back(Tensor::constant(p.shape, p.values));
    }
    const ScalarFunction f = [&](std::span<const Tensor> a) {
        std::map<std::string, Tensor> bound;
        for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], a[i]);
        return tiny_instance_loss(t, BoundParameters::from_tensors(std::move(bound)), term);
    };
    return gradcheck(f, inputs, options);
}

std::vector<std::string> suite_modules() { return {"tensor", "losses", "networks"}; }

std::vector<SuiteCheck> run_gradcheck_suite(const SuiteOptions& options) {
    const auto modules = suite_modules();
    if (!options.module.empty() && std::find(modules.begin(), modules.end(), options.module) == modules.end()) {
        throw ConfigError("gradcheck: unknown module '" + options.module + "' (tensor, losses, networks)");
    }
    if (options.repeats == 0) throw ConfigError("gradcheck: repeats must be positive");
    std::vector<SuiteCheck> out;
    if (options.module.empty() || options.module == "tensor") run_tensor_checks(options, out);
    if (options.module.empty() || options.module == "losses") run_loss_checks(options, out);
    if (options.module.empty() || options.module == "networks") run_network_checks(options, out);
    return out;
}

}  // namespace tubejepa
