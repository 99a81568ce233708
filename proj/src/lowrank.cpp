// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#include "evomerge/lowrank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace evomerge {

void LowRankPair::validate() const {
    if (rank == 0) throw std::invalid_argument("LowRankPair: rank must be >= 1");
    if (a.rows() != rank || b.cols() != rank) {
        throw std::invalid_argument("LowRankPair: factor shapes disagree with rank");
    }
    if (rank > std::min(b.rows(), a.cols())) {
        throw std::invalid_argument("LowRankPair: rank exceeds min(d, k)");
    }
}

const LowRankPair* Adapter::find_layer(const std::string& layer_name) const {
    for (const auto& [name, pair] : layers) {
        if (name == layer_name) return &pair;
    }
    return nullptr;
}

AdapterRepository::AdapterRepository(std::vector<Adapter> adapters)
    : adapters_(std::move(adapters)) {
    if (adapters_.empty()) {
        throw std::invalid_argument("AdapterRepository: need at least one adapter");
    }
    const Adapter& first = adapters_.front();
    if (first.layers.empty()) {
        throw std::invalid_argument("AdapterRepository: adapter has no layers");
    }
    layer_names_.reserve(first.layers.size());
    for (const auto& [name, pair] : first.layers) {
        pair.validate();
        layer_names_.push_back(name);
    }
    for (std::size_t i = 1; i < adapters_.size(); ++i) {
        const Adapter& ad = adapters_[i];
        if (ad.layers.size() != layer_names_.size()) {
            throw std::invalid_argument("AdapterRepository: adapter '" + ad.name +
                                        "' layer count differs");
        }
        for (std::size_t l = 0; l < layer_names_.size(); ++l) {
            const auto& [name, pair] = ad.layers[l];
            if (name != layer_names_[l]) {
                throw std::invalid_argument("AdapterRepository: adapter '" + ad.name +
                                            "' layer names differ");
            }
            pair.validate();
            const LowRankPair& ref = first.layers[l].second;
            if (pair.rank != ref.rank || pair.d() != ref.d() || pair.k() != ref.k()) {
                throw std::invalid_argument("AdapterRepository: adapter '" + ad.name +
                                            "' shape differs at layer '" + name + "'");
            }
        }
    }
}

Matrix task_vector(const LowRankPair& pair) {
    pair.validate();
    return matmul(pair.b, pair.a);
}

Matrix sparsify(const Matrix& a, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("sparsify: alpha must lie in [0,1]");
    }
    const std::size_t n = a.size();
    auto keep = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n)));
    keep = std::min(keep, n);
    if (keep == n) return a;
    Matrix out(a.rows(), a.cols());
    if (keep == 0) return out;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto values = a.data();
    // total order: |value| descending, then row-major index ascending
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                      order.end(), [&](std::size_t lhs, std::size_t rhs) {
                          const double la = std::abs(values[lhs]);
                          const double ra = std::abs(values[rhs]);
                          if (la != ra) return la > ra;
                          return lhs < rhs;
                      });
    for (std::size_t i = 0; i < keep; ++i) {
        out.data()[order[i]] = values[order[i]];
    }
    return out;
}

MergedAdapter merge(const AdapterRepository& repo, std::span<const double> weights,
                    std::span<const double> alphas) {
    const std::size_t n = repo.size();
    if (weights.size() != n || alphas.size() != n) {
        throw std::invalid_argument("merge: weights/alphas length must equal repository size");
    }
    for (double al : alphas) {
        if (!(al >= 0.0 && al <= 1.0)) {
            throw std::invalid_argument("merge: alpha outside [0,1]");
        }
    }
    MergedAdapter out;
    const auto& names = repo.layer_names();
    for (std::size_t l = 0; l < names.size(); ++l) {
        const LowRankPair& ref = repo.pair(0, l);
        LowRankPair acc{Matrix(ref.a.rows(), ref.a.cols()), Matrix(ref.b.rows(), ref.b.cols()),
                        ref.rank};
        for (std::size_t i = 0; i < n; ++i) {
            const LowRankPair& p = repo.pair(i, l);
            const Matrix sparse_a = sparsify(p.a, alphas[i]);
            const double w = weights[i];
            for (std::size_t e = 0; e < acc.a.size(); ++e) {
                acc.a.data()[e] += w * sparse_a.data()[e];
            }
            for (std::size_t e = 0; e < acc.b.size(); ++e) {
                acc.b.data()[e] += w * p.b.data()[e];
            }
        }
        out.emplace(names[l], std::move(acc));
    }
    return out;
}

MergedAdapter premerge_uniform(const AdapterRepository& repo, std::span<const double> alphas) {
    const std::vector<double> weights(repo.size(), 1.0 / static_cast<double>(repo.size()));
    return merge(repo, weights, alphas);
}

BoundCheck error_bound_check(const Matrix& a, double alpha, const Matrix& b) {
    if (b.cols() != a.rows()) {
        throw std::invalid_argument("error_bound_check: b.cols must equal a.rows");
    }
    const Matrix sparse = sparsify(a, alpha);
    const double lhs = frobenius_norm(matmul(b, a) - matmul(b, sparse));
    const double rhs = frobenius_norm(b) * frobenius_norm(a - sparse);
    return {lhs, rhs};
}

ConcentrationReport concentration(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("concentration: empty input");
    }
    for (double v : values) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("concentration: values must be finite and non-negative");
        }
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());

    const std::size_t n = sorted.size();
    double total = 0.0;
    for (double v : sorted) total += v;
    if (total <= 0.0) {
        throw std::invalid_argument("concentration: all-zero input, Gini undefined");
    }

    double weighted = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        // sorted-ascending formula with 1-based rank
        weighted += (2.0 * static_cast<double>(i + 1) - static_cast<double>(n) - 1.0) * sorted[i];
    }

    ConcentrationReport report;
    report.gini = weighted / (static_cast<double>(n) * total);
    report.lorenz.reserve(n + 1);
    report.lorenz.emplace_back(0.0, 0.0);
    double cumulative = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cumulative += sorted[i];
        report.lorenz.emplace_back(static_cast<double>(i + 1) / static_cast<double>(n),
                                   cumulative / total);
    }
    return report;
}

}  // namespace evomerge
