// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0
//
// The finite-difference verification suite behind `tubejepa gradcheck`:
// every primitive, every loss term, and the loss terms pulled back through a
// tiny encoder/predictor to all student parameters.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tubejepa/gradcheck.hpp"
#include "tubejepa/losses.hpp"
#include "tubejepa/model.hpp"
#include "tubejepa/tubes.hpp"
#include "tubejepa/video.hpp"

namespace tubejepa {

// D=8, N=9 (6x6 frames, patch 2), T=2, depth 1, one clip. The teacher is a
// perturbed copy of the student so every loss term is nonzero.
struct TinyInstance {
    EncoderConfig model;
    LossConfig loss;
    VideoClip clip;
    TubeGrid grid;
    TubePartition partition;
    ParameterSet student;
    ParameterSet teacher;
};

TinyInstance make_tiny_instance(std::uint64_t seed);

enum class LossTerm { motion, st, var, total };

const char* loss_term_name(LossTerm term);

// Runs the student/teacher passes of one training step and returns the
// requested term.
Tensor tiny_instance_loss(const TinyInstance& instance, const BoundParameters& student, LossTerm term);

// Gradcheck of the term with respect to every student parameter.
GradcheckReport gradcheck_network(const TinyInstance& instance, LossTerm term, const GradcheckOptions& options = {});

struct SuiteCheck {
    std::string module;
    std::string name;
    std::uint64_t seed = 0;
    GradcheckReport report;
};

struct SuiteOptions {
    std::string module;  // empty: all of tensor, losses, networks
    std::uint64_t seed = 0;
    std::size_t repeats = 3;  // seeds per check: seed, seed+1, ...
    GradcheckOptions tolerances;
};

std::vector<std::string> suite_modules();

// Throws ConfigError for an unknown module name.
std::vector<SuiteCheck> run_gradcheck_suite(const SuiteOptions& options);

}  // namespace tubejepa
