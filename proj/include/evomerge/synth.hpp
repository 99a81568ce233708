// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evomerge/lowrank.hpp"
#include "evomerge/matrix.hpp"
#include "evomerge/oracle.hpp"

namespace evomerge {

enum class NoiseSide { A, B };
enum class AdapterRole { Relevant, Irrelevant, Adversarial };

const char* to_string(NoiseSide side);
const char* to_string(AdapterRole role);

struct SynthSpec {
    std::size_t input_dim = 32;   // k
    std::size_t class_count = 8;  // d
    std::size_t rank = 4;
    std::size_t n_adapters = 20;
    std::size_t n_relevant = 5;
    std::size_t n_adversarial = 0;  // exact negations of the target delta
    double noise_level = 0.5;       // std-dev of perturbations on the noisy side
    double signal_scale = 1.0;
    std::size_t n_val = 256;
    std::size_t n_layers = 1;
    NoiseSide noise_side = NoiseSide::A;
    std::uint64_t seed = 0;

    void validate() const;  // throws std::invalid_argument
};

/// A planted benchmark: base weights, a known target delta, a pool of
/// relevant / irrelevant / adversarial adapters and a validation set whose
/// labels were sampled from the teacher (base + target delta).
struct SynthWorld {
    SynthSpec spec;
    Matrix base;     // d x k
    Adapter target;  // planted truth, layer names aligned with the repo
    AdapterRepository repo;
    std::vector<AdapterRole> roles;  // one per adapter
    ValidationSet val;
    double teacher_loss = 0.0;

    std::size_t n() const noexcept { return repo.size(); }
    bool is_relevant(std::size_t i) const { return roles.at(i) == AdapterRole::Relevant; }

    /// Dense sum of the target's per-layer task vectors.
    Matrix target_total_delta() const;
};

/// Deterministic under spec.seed; adapters ordered relevant, irrelevant,
/// then adversarial.
SynthWorld generate_world(const SynthSpec& spec);

/// Loss of the uniform average over relevant adapters only, at alpha = 1.
/// The knows-the-truth comparator; throws when no adapter is relevant.
double relevant_only_loss(const SynthWorld& world);

struct AbStudyRow {
    double alpha;
    double loss_a_sparsified;
    double loss_b_sparsified;
    double gini_a;
    double gini_b;
};

/// For each retention ratio: uniform merge with the pruning operator applied
/// to the A side versus the B side, with loss and |delta| Gini for each.
std::vector<AbStudyRow> ab_sparsify_study(const SynthWorld& world,
                                          std::span<const double> retention_grid);

}  // namespace evomerge
