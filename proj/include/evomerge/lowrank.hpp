// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evomerge/matrix.hpp"

namespace evomerge {

/// One adapter's factor pair for one layer: delta = b * a, with
/// a: rank x k and b: d x rank.
struct LowRankPair {
    Matrix a;
    Matrix b;
    std::size_t rank = 0;

    std::size_t d() const noexcept { return b.rows(); }
    std::size_t k() const noexcept { return a.cols(); }

    /// Throws std::invalid_argument when the factor shapes disagree with rank.
    void validate() const;
};

struct Adapter {
    std::string name;
    // layer order follows the manifest; all adapters in a repository agree on it
    std::vector<std::pair<std::string, LowRankPair>> layers;

    const LowRankPair* find_layer(const std::string& layer_name) const;
};

/// Pool of shape-compatible adapters. Construction validates that every
/// adapter carries the same layer names with identical (d, k, rank).
class AdapterRepository {
public:
    AdapterRepository() = default;
    explicit AdapterRepository(std::vector<Adapter> adapters);

    std::size_t size() const noexcept { return adapters_.size(); }
    const std::vector<std::string>& layer_names() const noexcept { return layer_names_; }
    const Adapter& adapter(std::size_t i) const { return adapters_.at(i); }
    const std::vector<Adapter>& adapters() const noexcept { return adapters_; }
    const LowRankPair& pair(std::size_t i, std::size_t layer_index) const {
        return adapters_.at(i).layers.at(layer_index).second;
    }

private:
    std::vector<Adapter> adapters_;
    std::vector<std::string> layer_names_;
};

using MergedAdapter = std::map<std::string, LowRankPair>;

/// Dense task vector delta = b * a (d x k).
Matrix task_vector(const LowRankPair& pair);

/// Keeps the ceil(alpha * numel) entries of largest absolute value, zeroing
/// the rest. Ties break toward the smaller row-major index, which makes the
/// retained support nested across alpha values.
Matrix sparsify(const Matrix& a, double alpha);

/// Per layer: A_m = sum_i weights[i] * sparsify(A_i, alphas[i]),
///            B_m = sum_i weights[i] * B_i.
MergedAdapter merge(const AdapterRepository& repo, std::span<const double> weights,
                    std::span<const double> alphas);

/// merge() with every weight fixed to 1/N.
MergedAdapter premerge_uniform(const AdapterRepository& repo, std::span<const double> alphas);

struct BoundCheck {
    double lhs;  // ||b*a - b*sparsify(a,alpha)||_F
    double rhs;  // ||b||_F * ||a - sparsify(a,alpha)||_F
};

/// Both sides of the pruning-error bound; callers assert lhs <= rhs.
BoundCheck error_bound_check(const Matrix& a, double alpha, const Matrix& b);

struct ConcentrationReport {
    double gini = 0.0;
    // (population fraction, mass fraction), n+1 points from (0,0) to (1,1)
    std::vector<std::pair<double, double>> lorenz;
};

/// Gini coefficient and Lorenz curve of a non-negative vector.
/// Throws when the input has no strictly positive entry.
ConcentrationReport concentration(std::span<const double> values);

}  // namespace evomerge
