// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#include "evomerge/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "evomerge/log.hpp"

namespace evomerge {

namespace {

double l1_norm(std::span<const double> x) {
    double acc = 0.0;
    for (double v : x) acc += std::abs(v);
    return acc;
}

std::string session_token() {
    std::random_device rd;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%08x%08x", rd(), rd());
    return buf;
}

FitnessReply evaluate_with_retry(FitnessOracle& oracle, const FitnessQuery& query) {
    try {
        return oracle.evaluate(query);
    } catch (const std::exception& first) {
        log_debug("oracle call %s failed (%s), retrying once", query.request_id.c_str(),
                  first.what());
        try {
            return oracle.evaluate(query);
        } catch (const std::exception& second) {
            throw OracleError("oracle failed twice for request '" + query.request_id +
                              "': " + second.what());
        }
    }
}

std::string cache_key(std::span<const double> x) {
    std::string key(x.size() * sizeof(double), '\0');
    std::memcpy(key.data(), x.data(), key.size());
    return key;
}

std::atomic<std::uint64_t> g_query_counter{0};

FitnessQuery make_query(int stage, std::span<const double> alphas,
                        const std::vector<double>* betas, const std::string& session) {
    FitnessQuery query;
    query.stage = stage;
    query.alphas.assign(alphas.begin(), alphas.end());
    if (betas != nullptr) query.betas = *betas;
    query.request_id = session + "-s" + std::to_string(stage) + "-" +
                       std::to_string(g_query_counter.fetch_add(1));
    return query;
}

// Oracle losses keyed by the exact decision-vector bytes; bound clipping can
// resample identical points and oracle calls are the cost center.
class CachedStageOracle {
public:
    CachedStageOracle(FitnessOracle& oracle, int stage, const std::vector<double>* frozen_alphas)
        : oracle_(oracle), stage_(stage), frozen_alphas_(frozen_alphas),
          session_(session_token()) {}

    double loss(std::span<const double> x) {
        const std::string key = cache_key(x);
        auto hit = cache_.find(key);
        if (hit != cache_.end()) return hit->second;
        FitnessQuery query;
        if (stage_ == 1) {
            query = make_query(1, x, nullptr, session_);
        } else {
            const std::vector<double> betas(x.begin(), x.end());
            query = make_query(2, *frozen_alphas_, &betas, session_);
        }
        const FitnessReply reply = evaluate_with_retry(oracle_, query);
        cache_.emplace(std::move(key), reply.loss);
        return reply.loss;
    }

private:
    FitnessOracle& oracle_;
    int stage_;
    const std::vector<double>* frozen_alphas_;
    std::string session_;
    std::unordered_map<std::string, double> cache_;
};

StageResult run_stage(const StageConfig& cfg, int stage, std::size_t dim,
                      std::vector<double> lower, std::vector<double> upper,
                      std::vector<double> x0, CachedStageOracle& oracle, double lambda) {
    CmaConfig cma_cfg;
    cma_cfg.dim = dim;
    cma_cfg.population = cfg.population;
    cma_cfg.sigma0 = cfg.sigma0;
    cma_cfg.lower = std::move(lower);
    cma_cfg.upper = std::move(upper);
    cma_cfg.x0 = std::move(x0);
    cma_cfg.seed = cfg.seed;
    cma_cfg.max_generations = cfg.generations;
    CmaEs search(cma_cfg);

    StageResult result;
    result.history.reserve(cfg.generations);
    result.evals.reserve(cfg.generations * cfg.population);
    bool have_best = false;

    for (std::size_t g = 1; g <= cfg.generations; ++g) {
        const auto started = std::chrono::steady_clock::now();
        const double sampling_sigma = search.sigma();
        const std::vector<Candidate> candidates = search.ask();

        std::vector<double> fitnesses(candidates.size());
        double fitness_sum = 0.0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const auto& x = candidates[i].x;
            const double loss = oracle.loss(x);
            const double l1 = l1_norm(x);
            const double fitness = loss + lambda * l1;
            fitnesses[i] = fitness;
            fitness_sum += fitness;
            result.evals.push_back({stage, g, x, loss, l1, fitness});
            if (!have_best || fitness < result.best_fitness) {
                have_best = true;
                result.best_fitness = fitness;
                result.best_loss = loss;
                result.best_x = x;
            }
        }
        search.tell(candidates, fitnesses);

        const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - started)
                              .count();
        result.history.push_back(
            {stage, g, result.best_fitness,
             fitness_sum / static_cast<double>(candidates.size()), sampling_sigma,
             static_cast<std::int64_t>(wall)});
        log_debug("stage %d generation %zu best %.6f mean %.6f sigma %.4f", stage, g,
                  result.best_fitness, fitness_sum / static_cast<double>(candidates.size()),
                  sampling_sigma);
    }
    return result;
}

}  // namespace

void StageConfig::validate() const {
    if (!(lambda_reg >= 0.0) || !std::isfinite(lambda_reg)) {
        throw std::invalid_argument("StageConfig: lambda_reg must be >= 0");
    }
    if (generations == 0) throw std::invalid_argument("StageConfig: generations must be >= 1");
    if (population < 2) throw std::invalid_argument("StageConfig: population must be >= 2");
    if (!(sigma0 > 0.0)) throw std::invalid_argument("StageConfig: sigma0 must be > 0");
    if (!(beta_bound > 0.0)) throw std::invalid_argument("StageConfig: beta_bound must be > 0");
}

double stage1_fitness(const SparsityVector& alphas, FitnessOracle& oracle, double lambda1) {
    static const std::string session = session_token();
    const FitnessQuery query = make_query(1, alphas.alphas, nullptr, session);
    const FitnessReply reply = evaluate_with_retry(oracle, query);
    return reply.loss + lambda1 * l1_norm(alphas.alphas);
}

double stage2_fitness(const ScalingVector& betas, const SparsityVector& alphas_star,
                      FitnessOracle& oracle, double lambda2) {
    static const std::string session = session_token();
    const FitnessQuery query = make_query(2, alphas_star.alphas, &betas.betas, session);
    const FitnessReply reply = evaluate_with_retry(oracle, query);
    return reply.loss + lambda2 * l1_norm(betas.betas);
}

StageResult run_stage1(const AdapterRepository& repo, FitnessOracle& oracle,
                       const StageConfig& cfg) {
    cfg.validate();
    const std::size_t n = repo.size();
    CachedStageOracle cached(oracle, 1, nullptr);
    return run_stage(cfg, 1, n, std::vector<double>(n, 0.0), std::vector<double>(n, 1.0),
                     std::vector<double>(n, 0.5), cached, cfg.lambda_reg);
}

StageResult run_stage2(const AdapterRepository& repo, const SparsityVector& alphas_star,
                       FitnessOracle& oracle, const StageConfig& cfg) {
    cfg.validate();
    const std::size_t n = repo.size();
    if (alphas_star.alphas.size() != n) {
        throw std::invalid_argument("run_stage2: alphas_star length must equal repository size");
    }
    CachedStageOracle cached(oracle, 2, &alphas_star.alphas);
    return run_stage(cfg, 2, n, std::vector<double>(n, -cfg.beta_bound),
                     std::vector<double>(n, cfg.beta_bound),
                     std::vector<double>(n, 1.0 / static_cast<double>(n)), cached,
                     cfg.lambda_reg);
}

MergeSolution evo_merge(const AdapterRepository& repo, FitnessOracle& oracle,
                        const StageConfig& cfg1, const StageConfig& cfg2) {
    StageResult stage1 = run_stage1(repo, oracle, cfg1);
    const SparsityVector alphas_star{stage1.best_x};
    StageResult stage2 = run_stage2(repo, alphas_star, oracle, cfg2);

    MergeSolution solution;
    solution.alphas_star = alphas_star;
    solution.betas_star = ScalingVector{stage2.best_x};
    solution.best_fitness_stage1 = stage1.best_fitness;
    solution.best_fitness_stage2 = stage2.best_fitness;
    solution.best_loss_stage2 = stage2.best_loss;
    solution.history = std::move(stage1.history);
    solution.history.insert(solution.history.end(), stage2.history.begin(),
                            stage2.history.end());
    solution.evals = std::move(stage1.evals);
    solution.evals.insert(solution.evals.end(), stage2.evals.begin(), stage2.evals.end());
    solution.merged = merge(repo, solution.betas_star.betas, solution.alphas_star.alphas);
    return solution;
}

}  // namespace evomerge
