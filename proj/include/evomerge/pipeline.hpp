// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "evomerge/cmaes.hpp"
#include "evomerge/lowrank.hpp"
#include "evomerge/oracle.hpp"

namespace evomerge {

struct SparsityVector {
    std::vector<double> alphas;  // each in [0,1]
};

struct ScalingVector {
    std::vector<double> betas;  // each in [-beta_bound, beta_bound]
};

struct StageConfig {
    double lambda_reg = 0.05;
    std::size_t generations = 20;
    std::size_t population = 20;
    double sigma0 = 0.05;
    double beta_bound = 1.5;  // stage 2 only
    std::uint64_t seed = 0;

    void validate() const;  // throws std::invalid_argument
};

struct GenerationRecord {
    int stage = 0;
    std::size_t generation = 0;  // 1-based within the stage
    double best_fitness = 0.0;   // best-so-far, non-increasing per stage
    double mean_fitness = 0.0;   // mean over this generation's candidates
    double sigma = 0.0;          // step size used to sample this generation
    std::int64_t wall_ms = 0;
};

/// One fitness evaluation as the search saw it; kept so the
/// fitness = loss + lambda * L1 decomposition stays checkable after the run.
struct EvalRecord {
    int stage = 0;
    std::size_t generation = 0;
    std::vector<double> x;
    double loss = 0.0;
    double l1 = 0.0;
    double fitness = 0.0;
};

struct StageResult {
    std::vector<double> best_x;
    double best_fitness = 0.0;
    double best_loss = 0.0;  // oracle loss of the best candidate, without the L1 term
    std::vector<GenerationRecord> history;
    std::vector<EvalRecord> evals;
};

struct MergeSolution {
    SparsityVector alphas_star;
    ScalingVector betas_star;
    double best_fitness_stage1 = 0.0;
    double best_fitness_stage2 = 0.0;
    double best_loss_stage2 = 0.0;
    std::vector<GenerationRecord> history;  // stage 1 then stage 2
    std::vector<EvalRecord> evals;
    MergedAdapter merged;
};

/// Oracle loss of the uniform-weight pre-merge at these alphas,
/// plus lambda1 * ||alphas||_1. Failed oracle calls are retried once.
double stage1_fitness(const SparsityVector& alphas, FitnessOracle& oracle, double lambda1);

/// Oracle loss of the merge with weights = betas over the alpha*-sparsified
/// pool, plus lambda2 * ||betas||_1.
double stage2_fitness(const ScalingVector& betas, const SparsityVector& alphas_star,
                      FitnessOracle& oracle, double lambda2);

/// CMA-ES over [0,1]^N from 0.5*ones; returns the best-so-far alpha*.
StageResult run_stage1(const AdapterRepository& repo, FitnessOracle& oracle,
                       const StageConfig& cfg);

/// CMA-ES over [-beta_bound, beta_bound]^N from (1/N)*ones with alphas
/// frozen; returns the best-so-far beta*.
StageResult run_stage2(const AdapterRepository& repo, const SparsityVector& alphas_star,
                       FitnessOracle& oracle, const StageConfig& cfg);

/// Both stages in sequence, then the final construction
/// A_m = sum_i beta*_i sparsify(A_i, alpha*_i), B_m = sum_i beta*_i B_i.
MergeSolution evo_merge(const AdapterRepository& repo, FitnessOracle& oracle,
                        const StageConfig& cfg1, const StageConfig& cfg2);

}  // namespace evomerge
