// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#include "evomerge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "evomerge/rng.hpp"

namespace evomerge {

const char* to_string(NoiseSide side) { return side == NoiseSide::A ? "A" : "B"; }

const char* to_string(AdapterRole role) {
    switch (role) {
        case AdapterRole::Relevant: return "relevant";
        case AdapterRole::Irrelevant: return "irrelevant";
        case AdapterRole::Adversarial: return "adversarial";
    }
    return "irrelevant";
}

void SynthSpec::validate() const {
    if (input_dim == 0 || class_count == 0 || rank == 0 || n_adapters == 0 || n_val == 0 ||
        n_layers == 0) {
        throw std::invalid_argument("SynthSpec: counts must be positive");
    }
    if (rank > std::min(class_count, input_dim)) {
        throw std::invalid_argument("SynthSpec: rank exceeds min(class_count, input_dim)");
    }
    if (n_relevant + n_adversarial > n_adapters) {
        throw std::invalid_argument("SynthSpec: n_relevant + n_adversarial exceeds n_adapters");
    }
    if (!(noise_level >= 0.0) || !std::isfinite(noise_level)) {
        throw std::invalid_argument("SynthSpec: noise_level must be >= 0");
    }
    if (!(signal_scale > 0.0) || !std::isfinite(signal_scale)) {
        throw std::invalid_argument("SynthSpec: signal_scale must be > 0");
    }
}

Matrix SynthWorld::target_total_delta() const {
    Matrix delta;
    for (const auto& [name, pair] : target.layers) {
        if (delta.empty()) {
            delta = task_vector(pair);
        } else {
            delta += task_vector(pair);
        }
    }
    return delta;
}

namespace {

Matrix random_matrix(NormalRng& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

Matrix add_noise(const Matrix& m, NormalRng& rng, double level) {
    Matrix out = m;
    for (double& v : out.data()) v += level * rng.normal();
    return out;
}

std::string layer_name(std::size_t index) { return "layer" + std::to_string(index); }

std::string adapter_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "adapter_%03zu", index);
    return buf;
}

}  // namespace

SynthWorld generate_world(const SynthSpec& spec) {
    spec.validate();
    NormalRng rng(spec.seed);

    const std::size_t k = spec.input_dim;
    const std::size_t d = spec.class_count;
    const std::size_t r = spec.rank;

    SynthWorld world;
    world.spec = spec;
    world.base = random_matrix(rng, d, k, 1.0 / std::sqrt(static_cast<double>(k)));

    world.target.name = "target";
    world.target.layers.reserve(spec.n_layers);
    for (std::size_t l = 0; l < spec.n_layers; ++l) {
        LowRankPair pair;
        pair.b = random_matrix(rng, d, r, spec.signal_scale);
        pair.a = random_matrix(rng, r, k, spec.signal_scale);
        pair.rank = r;
        world.target.layers.emplace_back(layer_name(l), std::move(pair));
    }

    world.roles.reserve(spec.n_adapters);
    std::vector<Adapter> adapters;
    adapters.reserve(spec.n_adapters);
    const std::size_t n_noise_free = spec.n_adapters - spec.n_adversarial;
    for (std::size_t i = 0; i < spec.n_adapters; ++i) {
        AdapterRole role = AdapterRole::Irrelevant;
        if (i < spec.n_relevant) {
            role = AdapterRole::Relevant;
        } else if (i >= n_noise_free) {
            role = AdapterRole::Adversarial;
        }
        world.roles.push_back(role);

        Adapter adapter;
        adapter.name = adapter_name(i);
        adapter.layers.reserve(spec.n_layers);
        for (std::size_t l = 0; l < spec.n_layers; ++l) {
            const LowRankPair& truth = world.target.layers[l].second;
            LowRankPair pair;
            pair.rank = r;
            switch (role) {
                case AdapterRole::Relevant:
                    if (spec.noise_side == NoiseSide::A) {
                        pair.b = truth.b;
                        pair.a = add_noise(truth.a, rng, spec.noise_level);
                    } else {
                        pair.b = add_noise(truth.b, rng, spec.noise_level);
                        pair.a = truth.a;
                    }
                    break;
                case AdapterRole::Irrelevant:
                    pair.b = random_matrix(rng, d, r, spec.signal_scale);
                    pair.a = random_matrix(rng, r, k, spec.signal_scale);
                    break;
                case AdapterRole::Adversarial:
                    pair.b = truth.b * -1.0;
                    pair.a = truth.a;
                    break;
            }
            adapter.layers.emplace_back(layer_name(l), std::move(pair));
        }
        adapters.push_back(std::move(adapter));
    }
    world.repo = AdapterRepository(std::move(adapters));

    world.val.inputs.reserve(spec.n_val);
    for (std::size_t i = 0; i < spec.n_val; ++i) {
        std::vector<double> x(k);
        for (double& v : x) v = rng.normal();
        world.val.inputs.push_back(std::move(x));
    }

    const Matrix teacher = world.base + world.target_total_delta();
    std::vector<double> probs(d);
    world.val.labels.reserve(spec.n_val);
    for (const auto& x : world.val.inputs) {
        double max_logit = -HUGE_VAL;
        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += teacher(c, j) * x[j];
            probs[c] = acc;
            max_logit = std::max(max_logit, acc);
        }
        double sum_exp = 0.0;
        for (double& p : probs) {
            p = std::exp(p - max_logit);
            sum_exp += p;
        }
        const double u = rng.uniform() * sum_exp;
        double cumulative = 0.0;
        std::size_t label = d - 1;
        for (std::size_t c = 0; c < d; ++c) {
            cumulative += probs[c];
            if (u < cumulative) {
                label = c;
                break;
            }
        }
        world.val.labels.push_back(label);
    }

    world.teacher_loss = mean_cross_entropy(teacher, world.val);
    return world;
}

double relevant_only_loss(const SynthWorld& world) {
    std::vector<Adapter> relevant;
    for (std::size_t i = 0; i < world.n(); ++i) {
        if (world.is_relevant(i)) relevant.push_back(world.repo.adapter(i));
    }
    if (relevant.empty()) {
        throw std::invalid_argument("relevant_only_loss: world has no relevant adapters");
    }
    const AdapterRepository subset(std::move(relevant));
    const std::vector<double> alphas(subset.size(), 1.0);
    const MergedAdapter merged = premerge_uniform(subset, alphas);

    Matrix delta;
    for (const auto& [name, pair] : merged) {
        if (delta.empty()) {
            delta = task_vector(pair);
        } else {
            delta += task_vector(pair);
        }
    }
    return loss_for_delta(world, delta);
}

std::vector<AbStudyRow> ab_sparsify_study(const SynthWorld& world,
                                          std::span<const double> retention_grid) {
    for (double alpha : retention_grid) {
        if (!(alpha > 0.0 && alpha <= 1.0)) {
            throw std::invalid_argument("ab_sparsify_study: grid values must lie in (0,1]");
        }
    }
    const AdapterRepository& repo = world.repo;
    const std::size_t n = repo.size();
    const double w = 1.0 / static_cast<double>(n);

    std::vector<AbStudyRow> rows;
    rows.reserve(retention_grid.size());
    for (double alpha : retention_grid) {
        const std::vector<double> alphas(n, alpha);

        // A-side pruning: the pipeline's operator
        Matrix delta_a;
        for (const auto& [name, pair] : premerge_uniform(repo, alphas)) {
            if (delta_a.empty()) {
                delta_a = task_vector(pair);
            } else {
                delta_a += task_vector(pair);
            }
        }

        // B-side pruning: same operator applied to the other factor
        Matrix delta_b;
        const auto& names = repo.layer_names();
        for (std::size_t l = 0; l < names.size(); ++l) {
            const LowRankPair& ref = repo.pair(0, l);
            LowRankPair acc{Matrix(ref.a.rows(), ref.a.cols()),
                            Matrix(ref.b.rows(), ref.b.cols()), ref.rank};
            for (std::size_t i = 0; i < n; ++i) {
                const LowRankPair& p = repo.pair(i, l);
                const Matrix sparse_b = sparsify(p.b, alpha);
                for (std::size_t e = 0; e < acc.a.size(); ++e) {
                    acc.a.data()[e] += w * p.a.data()[e];
                }
                for (std::size_t e = 0; e < acc.b.size(); ++e) {
                    acc.b.data()[e] += w * sparse_b.data()[e];
                }
            }
            if (delta_b.empty()) {
                delta_b = task_vector(acc);
            } else {
                delta_b += task_vector(acc);
            }
        }

        auto abs_entries = [](const Matrix& m) {
            std::vector<double> out(m.data().begin(), m.data().end());
            for (double& v : out) v = std::abs(v);
            return out;
        };

        AbStudyRow row;
        row.alpha = alpha;
        row.loss_a_sparsified = loss_for_delta(world, delta_a);
        row.loss_b_sparsified = loss_for_delta(world, delta_b);
        row.gini_a = concentration(abs_entries(delta_a)).gini;
        row.gini_b = concentration(abs_entries(delta_b)).gini;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace evomerge
