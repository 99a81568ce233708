// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "evomerge/oracle.hpp"
#include "evomerge/rng.hpp"
#include "evomerge/synth.hpp"

using namespace evomerge;

namespace {

double cosine(const Matrix& a, const Matrix& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a.data()[i] * b.data()[i];
        na += a.data()[i] * a.data()[i];
        nb += b.data()[i] * b.data()[i];
    }
    return dot / std::sqrt(na * nb);
}

Matrix adapter_delta(const SynthWorld& world, std::size_t i) {
    Matrix delta;
    for (const auto& [name, pair] : world.repo.adapter(i).layers) {
        if (delta.empty()) {
            delta = task_vector(pair);
        } else {
            delta += task_vector(pair);
        }
    }
    return delta;
}

bool worlds_equal(const SynthWorld& a, const SynthWorld& b) {
    if (a.base != b.base) return false;
    if (a.val.labels != b.val.labels) return false;
    if (a.val.inputs != b.val.inputs) return false;
    if (a.roles != b.roles) return false;
    if (a.teacher_loss != b.teacher_loss) return false;
    if (a.repo.size() != b.repo.size()) return false;
    for (std::size_t i = 0; i < a.repo.size(); ++i) {
        const Adapter& left = a.repo.adapter(i);
        const Adapter& right = b.repo.adapter(i);
        if (left.layers.size() != right.layers.size()) return false;
        for (std::size_t l = 0; l < left.layers.size(); ++l) {
            if (left.layers[l].second.a != right.layers[l].second.a) return false;
            if (left.layers[l].second.b != right.layers[l].second.b) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("spec validation") {
    SynthSpec spec;
    CHECK_NOTHROW(spec.validate());
    spec.rank = 100;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = SynthSpec{};
    spec.n_relevant = 30;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = SynthSpec{};
    spec.n_relevant = 15;
    spec.n_adversarial = 10;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = SynthSpec{};
    spec.signal_scale = 0.0;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("worlds are deterministic under the seed") {
    SynthSpec spec;
    spec.seed = 1234;
    spec.n_val = 64;
    const SynthWorld a = generate_world(spec);
    const SynthWorld b = generate_world(spec);
    CHECK(worlds_equal(a, b));

    spec.seed = 1235;
    const SynthWorld c = generate_world(spec);
    CHECK_FALSE(worlds_equal(a, c));
}

TEST_CASE("zero noise with a single relevant adapter reproduces the target exactly") {
    SynthSpec spec;
    spec.n_adapters = 1;
    spec.n_relevant = 1;
    spec.noise_level = 0.0;
    spec.seed = 9;
    const SynthWorld world = generate_world(spec);
    CHECK(adapter_delta(world, 0) == world.target_total_delta());
}

TEST_CASE("roles are assigned relevant, irrelevant, adversarial in order") {
    SynthSpec spec;
    spec.n_adapters = 6;
    spec.n_relevant = 2;
    spec.n_adversarial = 1;
    spec.n_val = 16;
    spec.seed = 3;
    const SynthWorld world = generate_world(spec);
    REQUIRE(world.roles.size() == 6);
    CHECK(world.roles[0] == AdapterRole::Relevant);
    CHECK(world.roles[1] == AdapterRole::Relevant);
    CHECK(world.roles[2] == AdapterRole::Irrelevant);
    CHECK(world.roles[4] == AdapterRole::Irrelevant);
    CHECK(world.roles[5] == AdapterRole::Adversarial);

    // the adversarial adapter is the exact negation of the target delta
    const Matrix delta = adapter_delta(world, 5);
    const Matrix negated = world.target_total_delta() * -1.0;
    for (std::size_t i = 0; i < delta.size(); ++i) {
        CHECK(delta.data()[i] == doctest::Approx(negated.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("zero-delta student CE sits in the ln(d) + logit-variance band") {
    // base logits are ~N(0,1) per class (base entries scaled 1/sqrt(k)), so the
    // zero-delta CE exceeds ln(d) by up to Var(logit)/2 = 0.5 plus sampling noise
    for (std::uint64_t s : {21, 22, 23, 24, 25}) {
        SynthSpec spec;
        spec.class_count = 8;
        spec.seed = s;
        const SynthWorld world = generate_world(spec);
        const double loss = loss_for_delta(world, Matrix(8, spec.input_dim));
        CHECK(loss >= std::log(8.0) - 0.15);
        CHECK(loss <= std::log(8.0) + 0.65);
    }
}

TEST_CASE("relevant_only_loss equals the teacher loss at zero noise") {
    SynthSpec spec;
    spec.n_adapters = 8;
    spec.n_relevant = 1;
    spec.noise_level = 0.0;
    spec.seed = 33;
    const SynthWorld world = generate_world(spec);
    CHECK(relevant_only_loss(world) == doctest::Approx(world.teacher_loss).epsilon(1e-12));
}

TEST_CASE("relevant_only_loss requires a relevant adapter") {
    SynthSpec spec;
    spec.n_relevant = 0;
    spec.n_adapters = 3;
    spec.n_val = 16;
    spec.seed = 4;
    const SynthWorld world = generate_world(spec);
    CHECK_THROWS_AS(relevant_only_loss(world), std::invalid_argument);
}

TEST_CASE("averaging more relevant adapters suppresses the A-side noise") {
    double mean_single = 0.0;
    double mean_five = 0.0;
    for (std::uint64_t s = 1; s <= 10; ++s) {
        SynthSpec one;
        one.seed = 300 + s;
        one.n_relevant = 1;
        SynthSpec five = one;
        five.n_relevant = 5;
        mean_single += relevant_only_loss(generate_world(one));
        mean_five += relevant_only_loss(generate_world(five));
    }
    CHECK(mean_five < mean_single);
}

TEST_CASE("overwhelming noise erases the relevant adapters' advantage") {
    SynthSpec spec;
    spec.noise_level = 100.0;  // 100 * signal_scale
    spec.seed = 77;
    const SynthWorld world = generate_world(spec);
    const double zero_delta =
        loss_for_delta(world, Matrix(spec.class_count, spec.input_dim));
    CHECK(relevant_only_loss(world) >= zero_delta);
}

TEST_CASE("planted relevance separates cleanly in cosine similarity") {
    for (std::uint64_t s = 1; s <= 5; ++s) {
        SynthSpec spec;
        spec.seed = 200 + s;
        spec.noise_level = 0.1;  // separation regime: eta <= 0.1 * signal_scale
        const SynthWorld world = generate_world(spec);
        const Matrix target = world.target_total_delta();
        for (std::size_t i = 0; i < world.n(); ++i) {
            const double c = cosine(adapter_delta(world, i), target);
            if (world.is_relevant(i)) {
                CHECK(c > 0.9);
            } else {
                CHECK(std::abs(c) < 0.3);
            }
        }
    }
}

TEST_CASE("ab study reports identical losses when nothing is pruned") {
    SynthSpec spec;
    spec.seed = 41;
    spec.n_val = 64;
    const SynthWorld world = generate_world(spec);
    const std::vector<double> grid{1.0};
    const auto rows = ab_sparsify_study(world, grid);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].loss_a_sparsified == rows[0].loss_b_sparsified);
    CHECK(rows[0].gini_a == rows[0].gini_b);
}

TEST_CASE("ab study rejects out-of-range retention grids") {
    SynthSpec spec;
    spec.seed = 42;
    spec.n_val = 16;
    const SynthWorld world = generate_world(spec);
    const std::vector<double> zero{0.0};
    CHECK_THROWS_AS(ab_sparsify_study(world, zero), std::invalid_argument);
    const std::vector<double> above{1.2};
    CHECK_THROWS_AS(ab_sparsify_study(world, above), std::invalid_argument);
}

TEST_CASE("pruning the noisy factor retains more performance") {
    // mostly-relevant pools make the asymmetry visible; with only a few
    // relevant adapters the random pool dominates the uniform merge
    int a_wins = 0;
    int b_wins = 0;
    for (std::uint64_t s = 1; s <= 10; ++s) {
        SynthSpec spec;
        spec.seed = 7000 + s;
        spec.n_relevant = 15;
        spec.noise_level = 1.0;
        const std::vector<double> grid{0.3};

        const auto a_noise = ab_sparsify_study(generate_world(spec), grid);
        if (a_noise[0].loss_a_sparsified <= a_noise[0].loss_b_sparsified) ++a_wins;

        spec.noise_side = NoiseSide::B;  // negative control flips the outcome
        spec.seed = 8000 + s;
        const auto b_noise = ab_sparsify_study(generate_world(spec), grid);
        if (b_noise[0].loss_b_sparsified <= b_noise[0].loss_a_sparsified) ++b_wins;
    }
    CHECK(a_wins >= 6);
    CHECK(b_wins >= 6);
}

TEST_CASE("sparsified merges concentrate the task vector") {
    int wins = 0;
    for (std::uint64_t s = 1; s <= 20; ++s) {
        SynthSpec spec;
        spec.seed = 40000 + s;
        spec.n_relevant = 15;
        spec.noise_level = 1.0;
        spec.n_val = 32;  // gini does not touch the validation set
        const SynthWorld world = generate_world(spec);
        const std::vector<double> grid{0.1, 1.0};
        const auto rows = ab_sparsify_study(world, grid);
        if (rows[0].gini_a > rows[1].gini_a) ++wins;
    }
    CHECK(wins >= 19);
}

TEST_CASE("multi-layer worlds broadcast one alpha per adapter across layers") {
    SynthSpec spec;
    spec.n_layers = 3;
    spec.n_adapters = 4;
    spec.n_relevant = 2;
    spec.n_val = 32;
    spec.seed = 11;
    const SynthWorld world = generate_world(spec);
    CHECK(world.repo.layer_names() ==
          std::vector<std::string>{"layer0", "layer1", "layer2"});
    CHECK(world.target.layers.size() == 3);

    FitnessQuery query;
    query.stage = 1;
    query.alphas.assign(4, 0.5);
    query.request_id = "ml";
    const FitnessReply reply = evaluate_local(world, query);
    CHECK(std::isfinite(reply.loss));
    CHECK(reply.loss >= 0.0);

    const Matrix delta = world.target_total_delta();
    CHECK(delta.rows() == spec.class_count);
    CHECK(delta.cols() == spec.input_dim);
}
