// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "evomerge/matrix.hpp"
#include "evomerge/rng.hpp"

namespace evomerge {

struct CmaConfig {
    std::size_t dim = 0;
    std::size_t population = 20;  // lambda
    double sigma0 = 0.0;
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<double> x0;
    std::uint64_t seed = 0;
    std::size_t max_generations = 1;

    void validate() const;  // throws std::invalid_argument
};

struct Candidate {
    std::vector<double> x;
    std::optional<double> fitness;
};

/// Non-elitist (mu/mu_w, lambda)-CMA-ES with cumulative step-size adaptation,
/// rank-1 + rank-mu covariance updates and log-rank recombination weights.
/// Box constraints are enforced by clipping sampled coordinates; the update
/// uses the repaired points. Minimization convention throughout.
///
/// ask/tell must be driven by a single coordinator; the returned candidates
/// are plain values and may be evaluated concurrently.
class CmaEs {
public:
    explicit CmaEs(CmaConfig config);

    /// Samples one generation of candidates, all inside the box.
    std::vector<Candidate> ask();

    /// Ranks the generation (lower fitness wins, ties keep ask order) and
    /// applies the mean / step-size / covariance updates. Non-finite fitness
    /// rejects the whole generation without touching the state.
    void tell(const std::vector<Candidate>& candidates, const std::vector<double>& fitnesses);

    /// Best-so-far candidate ever told (greedy checkpointing).
    /// Throws std::logic_error before the first tell.
    const Candidate& best() const;

    std::size_t generation() const noexcept { return generation_; }
    double sigma() const noexcept { return sigma_; }
    const std::vector<double>& mean() const noexcept { return mean_; }
    const Matrix& covariance() const noexcept { return cov_; }
    const std::vector<double>& path_sigma() const noexcept { return path_sigma_; }
    const std::vector<double>& path_c() const noexcept { return path_c_; }
    const CmaConfig& config() const noexcept { return config_; }

private:
    void refresh_eigensystem();

    CmaConfig config_;
    std::size_t mu_;
    std::vector<double> weights_;  // log-rank, sum 1
    double mu_eff_;
    double c_sigma_, d_sigma_, c_c_, c_1_, c_mu_, chi_n_;

    std::vector<double> mean_;
    double sigma_;
    Matrix cov_;
    std::vector<double> path_sigma_;
    std::vector<double> path_c_;
    std::size_t generation_ = 0;

    // eigendecomposition cache: cov_ = basis * diag(eigvals) * basis^T
    Matrix basis_;
    std::vector<double> eigvals_;

    NormalRng rng_;
    std::optional<Candidate> best_;
};

}  // namespace evomerge
