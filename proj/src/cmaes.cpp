// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#include "evomerge/cmaes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

namespace evomerge {

void CmaConfig::validate() const {
    if (dim == 0) throw std::invalid_argument("CmaConfig: dim must be positive");
    if (population < 2) throw std::invalid_argument("CmaConfig: population must be >= 2");
    if (!(sigma0 > 0.0) || !std::isfinite(sigma0)) {
        throw std::invalid_argument("CmaConfig: sigma0 must be positive and finite");
    }
    if (max_generations == 0) {
        throw std::invalid_argument("CmaConfig: max_generations must be positive");
    }
    if (lower.size() != dim || upper.size() != dim || x0.size() != dim) {
        throw std::invalid_argument("CmaConfig: lower/upper/x0 must have length dim");
    }
    for (std::size_t i = 0; i < dim; ++i) {
        if (!(lower[i] < upper[i])) {
            throw std::invalid_argument("CmaConfig: bounds inverted or degenerate");
        }
        if (!(x0[i] >= lower[i] && x0[i] <= upper[i])) {
            throw std::invalid_argument("CmaConfig: x0 outside bounds");
        }
    }
}

CmaEs::CmaEs(CmaConfig config)
    : config_(std::move(config)),
      mu_(config_.population / 2),
      mean_(),
      sigma_(0.0),
      rng_(0) {
    config_.validate();
    const auto n = static_cast<double>(config_.dim);

    weights_.resize(mu_);
    for (std::size_t i = 0; i < mu_; ++i) {
        weights_[i] = std::log(static_cast<double>(mu_) + 0.5) -
                      std::log(static_cast<double>(i + 1));
    }
    const double wsum = std::accumulate(weights_.begin(), weights_.end(), 0.0);
    for (double& w : weights_) w /= wsum;
    double wsq = 0.0;
    for (double w : weights_) wsq += w * w;
    mu_eff_ = 1.0 / wsq;

    c_sigma_ = (mu_eff_ + 2.0) / (n + mu_eff_ + 5.0);
    d_sigma_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff_ - 1.0) / (n + 1.0)) - 1.0) + c_sigma_;
    c_c_ = (4.0 + mu_eff_ / n) / (n + 4.0 + 2.0 * mu_eff_ / n);
    c_1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff_);
    c_mu_ = std::min(1.0 - c_1_, 2.0 * (mu_eff_ - 2.0 + 1.0 / mu_eff_) /
                                     ((n + 2.0) * (n + 2.0) + mu_eff_));
    chi_n_ = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

    mean_ = config_.x0;
    sigma_ = config_.sigma0;
    cov_ = Matrix::identity(config_.dim);
    path_sigma_.assign(config_.dim, 0.0);
    path_c_.assign(config_.dim, 0.0);
    basis_ = Matrix::identity(config_.dim);
    eigvals_.assign(config_.dim, 1.0);
    rng_ = NormalRng(config_.seed);
}

std::vector<Candidate> CmaEs::ask() {
    const std::size_t n = config_.dim;
    if (!std::isfinite(sigma_) || sigma_ <= 0.0) {
        throw std::runtime_error("CmaEs::ask: step size diverged");
    }
    for (double ev : eigvals_) {
        if (!(ev > 0.0) || !std::isfinite(ev)) {
            throw std::runtime_error("CmaEs::ask: covariance not positive definite");
        }
    }

    std::vector<Candidate> out(config_.population);
    std::vector<double> z(n);
    for (auto& cand : out) {
        for (double& zi : z) zi = rng_.normal();
        cand.x.assign(n, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                acc += basis_(r, c) * std::sqrt(eigvals_[c]) * z[c];
            }
            double x = mean_[r] + sigma_ * acc;
            x = std::clamp(x, config_.lower[r], config_.upper[r]);
            cand.x[r] = x;
        }
    }
    return out;
}

void CmaEs::tell(const std::vector<Candidate>& candidates, const std::vector<double>& fitnesses) {
    const std::size_t lambda = config_.population;
    const std::size_t n = config_.dim;
    if (candidates.size() != lambda || fitnesses.size() != lambda) {
        throw std::invalid_argument("CmaEs::tell: expected exactly one population");
    }
    for (const auto& cand : candidates) {
        if (cand.x.size() != n) throw std::invalid_argument("CmaEs::tell: candidate dim mismatch");
    }
    for (double f : fitnesses) {
        if (!std::isfinite(f)) {
            throw std::invalid_argument("CmaEs::tell: non-finite fitness, generation rejected");
        }
    }

    std::vector<std::size_t> order(lambda);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (fitnesses[a] != fitnesses[b]) return fitnesses[a] < fitnesses[b];
        return a < b;
    });

    // steps of the selected mu, in the pre-update coordinate frame
    std::vector<std::vector<double>> steps(mu_, std::vector<double>(n));
    for (std::size_t i = 0; i < mu_; ++i) {
        const auto& x = candidates[order[i]].x;
        for (std::size_t r = 0; r < n; ++r) steps[i][r] = (x[r] - mean_[r]) / sigma_;
    }
    std::vector<double> step_w(n, 0.0);
    for (std::size_t i = 0; i < mu_; ++i) {
        for (std::size_t r = 0; r < n; ++r) step_w[r] += weights_[i] * steps[i][r];
    }

    for (std::size_t r = 0; r < n; ++r) mean_[r] += sigma_ * step_w[r];

    // C^{-1/2} * step_w through the cached eigensystem
    std::vector<double> tmp(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < n; ++r) acc += basis_(r, c) * step_w[r];
        tmp[c] = acc / std::sqrt(eigvals_[c]);
    }
    std::vector<double> whitened(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n; ++c) acc += basis_(r, c) * tmp[c];
        whitened[r] = acc;
    }

    const double cs_in = std::sqrt(c_sigma_ * (2.0 - c_sigma_) * mu_eff_);
    double ps_sq = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        path_sigma_[r] = (1.0 - c_sigma_) * path_sigma_[r] + cs_in * whitened[r];
        ps_sq += path_sigma_[r] * path_sigma_[r];
    }
    const double ps_norm = std::sqrt(ps_sq);

    const double expected = 1.0 - std::pow(1.0 - c_sigma_,
                                           2.0 * static_cast<double>(generation_ + 1));
    const bool h_sigma =
        ps_norm / std::sqrt(expected) / chi_n_ < 1.4 + 2.0 / (static_cast<double>(n) + 1.0);

    const double cc_in = std::sqrt(c_c_ * (2.0 - c_c_) * mu_eff_);
    for (std::size_t r = 0; r < n; ++r) {
        path_c_[r] = (1.0 - c_c_) * path_c_[r] + (h_sigma ? cc_in * step_w[r] : 0.0);
    }

    const double old_decay = 1.0 - c_1_ - c_mu_;
    const double hsig_fix = (1.0 - (h_sigma ? 1.0 : 0.0)) * c_c_ * (2.0 - c_c_);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            double v = (old_decay + c_1_ * hsig_fix) * cov_(r, c);
            v += c_1_ * path_c_[r] * path_c_[c];
            double rank_mu = 0.0;
            for (std::size_t i = 0; i < mu_; ++i) rank_mu += weights_[i] * steps[i][r] * steps[i][c];
            v += c_mu_ * rank_mu;
            cov_(r, c) = v;
        }
    }

    sigma_ *= std::exp((c_sigma_ / d_sigma_) * (ps_norm / chi_n_ - 1.0));
    ++generation_;

    for (std::size_t i = 0; i < lambda; ++i) {
        if (!best_ || fitnesses[i] < *best_->fitness) {
            best_ = Candidate{candidates[i].x, fitnesses[i]};
        }
    }

    refresh_eigensystem();
}

const Candidate& CmaEs::best() const {
    if (!best_) throw std::logic_error("CmaEs::best: no generation told yet");
    return *best_;
}

void CmaEs::refresh_eigensystem() {
    const std::size_t n = config_.dim;
    // enforce exact symmetry before decomposing
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = r + 1; c < n; ++c) {
            const double v = 0.5 * (cov_(r, c) + cov_(c, r));
            cov_(r, c) = v;
            cov_(c, r) = v;
        }
    }

    Eigen::MatrixXd sym(n, n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) sym(static_cast<Eigen::Index>(r),
                                                static_cast<Eigen::Index>(c)) = cov_(r, c);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("CmaEs: eigendecomposition failed");
    }

    double max_ev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        max_ev = std::max(max_ev, solver.eigenvalues()[static_cast<Eigen::Index>(i)]);
    }
    if (!(max_ev > 0.0) || !std::isfinite(max_ev)) {
        throw std::runtime_error("CmaEs: covariance lost positive definiteness");
    }

    const double floor = 1e-14 * max_ev;
    bool repaired = false;
    for (std::size_t i = 0; i < n; ++i) {
        double ev = solver.eigenvalues()[static_cast<Eigen::Index>(i)];
        if (ev <= floor) {
            ev = floor;
            repaired = true;
        }
        eigvals_[i] = ev;
        for (std::size_t r = 0; r < n; ++r) {
            basis_(r, i) = solver.eigenvectors()(static_cast<Eigen::Index>(r),
                                                 static_cast<Eigen::Index>(i));
        }
    }

    if (repaired) {
        // keep the stored covariance consistent with the floored spectrum
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = r; c < n; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += basis_(r, i) * eigvals_[i] * basis_(c, i);
                }
                cov_(r, c) = acc;
                cov_(c, r) = acc;
            }
        }
    }
}

}  // namespace evomerge
