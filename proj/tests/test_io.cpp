// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "evomerge/io.hpp"
#include "evomerge/rng.hpp"
#include "evomerge/synth.hpp"

using namespace evomerge;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("evomerge_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path path;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

Matrix random_matrix(NormalRng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

Adapter sample_adapter(NormalRng& rng, std::size_t layers = 2, std::size_t rank = 4,
                       std::size_t d = 8, std::size_t k = 6) {
    Adapter adapter;
    adapter.name = "sample";
    for (std::size_t l = 0; l < layers; ++l) {
        adapter.layers.emplace_back(
            "layer" + std::to_string(l),
            LowRankPair{random_matrix(rng, rank, k), random_matrix(rng, d, rank), rank});
    }
    return adapter;
}

bool trees_identical(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> rel_a;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (entry.is_regular_file()) rel_a.push_back(fs::relative(entry.path(), a));
    }
    std::vector<fs::path> rel_b;
    for (const auto& entry : fs::recursive_directory_iterator(b)) {
        if (entry.is_regular_file()) rel_b.push_back(fs::relative(entry.path(), b));
    }
    std::sort(rel_a.begin(), rel_a.end());
    std::sort(rel_b.begin(), rel_b.end());
    if (rel_a != rel_b) return false;
    for (const auto& rel : rel_a) {
        if (slurp(a / rel) != slurp(b / rel)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("tensor files narrow to f32 and round-trip bitwise thereafter") {
    TempDir tmp;
    NormalRng rng(5);
    const Matrix original = random_matrix(rng, 3, 5);
    const fs::path first = tmp.path / "a.lrt";
    const fs::path second = tmp.path / "b.lrt";

    write_tensor(first, original);
    const Matrix loaded = read_tensor(first);
    REQUIRE(loaded.rows() == 3);
    REQUIRE(loaded.cols() == 5);
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded.data()[i] == static_cast<double>(static_cast<float>(original.data()[i])));
    }

    write_tensor(second, loaded);
    CHECK(slurp(first) == slurp(second));
}

TEST_CASE("the 1.5 payload encodes as 00 00 C0 3F little-endian") {
    TempDir tmp;
    const fs::path file = tmp.path / "v.lrt";
    write_tensor(file, Matrix(1, 1, {1.5}));
    const std::string bytes = slurp(file);
    REQUIRE(bytes.size() == 16);
    CHECK(bytes.substr(0, 4) == "LRT1");
    // rows = 1, cols = 1, little-endian u32
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[8] == 1);
    const auto payload = reinterpret_cast<const unsigned char*>(bytes.data()) + 12;
    CHECK(payload[0] == 0x00);
    CHECK(payload[1] == 0x00);
    CHECK(payload[2] == 0xC0);
    CHECK(payload[3] == 0x3F);
}

TEST_CASE("tensor corruption classes raise distinct errors") {
    TempDir tmp;
    NormalRng rng(7);
    const fs::path file = tmp.path / "t.lrt";
    write_tensor(file, random_matrix(rng, 4, 4));
    const std::string good = slurp(file);

    spit(file, "XXXX" + good.substr(4));
    CHECK_THROWS_AS(read_tensor(file), BadMagicError);

    spit(file, good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(read_tensor(file), TruncatedFileError);

    spit(file, good + "ZZ");
    CHECK_THROWS_AS(read_tensor(file), SizeMismatchError);

    spit(file, "LR");
    CHECK_THROWS_AS(read_tensor(file), TruncatedFileError);

    CHECK_THROWS_AS(read_tensor(tmp.path / "missing.lrt"), IoError);
}

TEST_CASE("adapter containers round-trip bitwise") {
    TempDir tmp;
    NormalRng rng(11);
    const Adapter adapter = sample_adapter(rng);
    const fs::path first = tmp.path / "one";
    const fs::path second = tmp.path / "two";

    write_adapter(first, adapter);
    const Adapter loaded = read_adapter(first);
    CHECK(loaded.name == adapter.name);
    REQUIRE(loaded.layers.size() == adapter.layers.size());
    for (std::size_t l = 0; l < loaded.layers.size(); ++l) {
        CHECK(loaded.layers[l].first == adapter.layers[l].first);
        CHECK(loaded.layers[l].second.rank == adapter.layers[l].second.rank);
    }

    write_adapter(second, loaded);
    CHECK(trees_identical(first, second));
}

TEST_CASE("manifest-payload disagreements are size mismatches") {
    TempDir tmp;
    NormalRng rng(13);
    const fs::path dir = tmp.path / "adapter";
    write_adapter(dir, sample_adapter(rng));

    // manifest promises 8x4 B factors; hand it a 7x4 payload
    write_tensor(dir / "layer0.b.lrt", random_matrix(rng, 7, 4));
    CHECK_THROWS_AS(read_adapter(dir), SizeMismatchError);
}

TEST_CASE("broken manifests raise manifest errors") {
    TempDir tmp;
    NormalRng rng(17);
    const fs::path dir = tmp.path / "adapter";
    write_adapter(dir, sample_adapter(rng));

    spit(dir / "manifest.json", "{ not json");
    CHECK_THROWS_AS(read_adapter(dir), ManifestError);

    spit(dir / "manifest.json", "{\"name\":\"x\"}");
    CHECK_THROWS_AS(read_adapter(dir), ManifestError);

    CHECK_THROWS_AS(read_adapter(tmp.path / "nowhere"), IoError);
}

TEST_CASE("worlds round-trip through disk with deterministic bytes") {
    TempDir tmp;
    SynthSpec spec;
    spec.n_adapters = 4;
    spec.n_relevant = 2;
    spec.n_adversarial = 1;
    spec.n_val = 32;
    spec.n_layers = 2;
    spec.seed = 77;
    const SynthWorld world = generate_world(spec);

    const fs::path first = tmp.path / "w1";
    const fs::path second = tmp.path / "w2";
    write_world(first, world);
    write_world(second, world);
    CHECK(trees_identical(first, second));

    const SynthWorld loaded = read_world(first);
    CHECK(loaded.spec.seed == spec.seed);
    CHECK(loaded.spec.n_layers == 2);
    CHECK(loaded.roles == world.roles);
    CHECK(loaded.val.labels == world.val.labels);
    CHECK(loaded.teacher_loss == world.teacher_loss);
    REQUIRE(loaded.repo.size() == world.repo.size());
    CHECK(loaded.repo.layer_names() == world.repo.layer_names());
    for (std::size_t i = 0; i < loaded.base.size(); ++i) {
        CHECK(loaded.base.data()[i] ==
              static_cast<double>(static_cast<float>(world.base.data()[i])));
    }

    // a reloaded world re-serializes to the same bytes
    const fs::path third = tmp.path / "w3";
    write_world(third, loaded);
    CHECK(trees_identical(first, third));
}

TEST_CASE("world manifests validate roles and labels") {
    TempDir tmp;
    SynthSpec spec;
    spec.n_adapters = 2;
    spec.n_relevant = 1;
    spec.n_val = 8;
    spec.seed = 3;
    const fs::path dir = tmp.path / "w";
    write_world(dir, generate_world(spec));

    nlohmann::json manifest = nlohmann::json::parse(slurp(dir / "world.json"));
    manifest["roles"] = {"relevant"};
    spit(dir / "world.json", manifest.dump(2));
    CHECK_THROWS_AS(read_world(dir), ManifestError);
}

TEST_CASE("experiment configs parse, derive seeds and validate") {
    TempDir tmp;
    const fs::path file = tmp.path / "config.json";

    spit(file, R"({
        "seed": 9,
        "out": "out-dir",
        "world": {"synth": {"n_adapters": 6, "n_relevant": 2}},
        "stage1": {"lambda": 0.1, "generations": 7},
        "stage2": {"generations": 11, "beta_bound": 2.0},
        "oracle": {"mode": "local"}
    })");
    const ExperimentConfig config = load_experiment_config(file);
    CHECK(config.seed == 9);
    CHECK(config.out_dir == "out-dir");
    REQUIRE(config.synth.has_value());
    CHECK(config.synth->n_adapters == 6);
    CHECK(config.synth->seed == split_seed(9, 0));
    CHECK(config.stage1.lambda_reg == 0.1);
    CHECK(config.stage1.generations == 7);
    CHECK(config.stage1.seed == split_seed(9, 1));
    CHECK(config.stage2.generations == 11);
    CHECK(config.stage2.beta_bound == 2.0);
    CHECK(config.stage2.seed == split_seed(9, 2));

    // both or neither world source is a config error
    spit(file, R"({"world": {"synth": {}, "path": "w"}})");
    CHECK_THROWS_AS(load_experiment_config(file), ConfigError);
    spit(file, R"({"seed": 1})");
    CHECK_THROWS_AS(load_experiment_config(file), ConfigError);
    spit(file, "not json at all");
    CHECK_THROWS_AS(load_experiment_config(file), ConfigError);

    spit(file, R"({"world": {"path": "w"}, "oracle": {"mode": "remote", "endpoint": "http://h:1"}})");
    const ExperimentConfig remote = load_experiment_config(file);
    CHECK(remote.oracle.mode == OracleConfig::Mode::Remote);
    CHECK(remote.oracle.endpoint == "http://h:1");
    REQUIRE(remote.world_path.has_value());
    CHECK(*remote.world_path == "w");
}

TEST_CASE("experiment config write/load round-trip") {
    TempDir tmp;
    ExperimentConfig config = default_experiment_config(123);
    config.out_dir = "somewhere";
    config.stage2.generations = 33;
    const fs::path file = tmp.path / "c.json";
    write_experiment_config(file, config);
    const ExperimentConfig loaded = load_experiment_config(file);
    CHECK(loaded.seed == 123);
    CHECK(loaded.out_dir == "somewhere");
    CHECK(loaded.stage2.generations == 33);
    CHECK(loaded.stage1.seed == config.stage1.seed);
    REQUIRE(loaded.synth.has_value());
    CHECK(loaded.synth->seed == config.synth->seed);
}

TEST_CASE("run logs keep a stable schema and round-trip") {
    TempDir tmp;
    const std::vector<GenerationRecord> records{
        {1, 1, 2.5, 3.5, 0.05, 12},
        {1, 2, 2.25, 3.1, 0.048, 11},
        {2, 1, 1.5, 2.0, 0.05, 13},
    };
    const fs::path file = tmp.path / "log.jsonl";
    write_run_log(file, records);

    const std::string text = slurp(file);
    std::size_t lines = 0;
    std::size_t start = 0;
    const std::vector<std::string> expected_keys{"stage",        "generation", "best_fitness",
                                                 "mean_fitness", "sigma",      "wall_ms"};
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) break;
        const auto parsed = nlohmann::json::parse(text.substr(start, end - start));
        CHECK(parsed.size() == expected_keys.size());
        for (const auto& key : expected_keys) CHECK(parsed.contains(key));
        ++lines;
        start = end + 1;
    }
    CHECK(lines == records.size());

    const auto loaded = read_run_log(file);
    REQUIRE(loaded.size() == records.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].stage == records[i].stage);
        CHECK(loaded[i].generation == records[i].generation);
        CHECK(loaded[i].best_fitness == records[i].best_fitness);
        CHECK(loaded[i].mean_fitness == records[i].mean_fitness);
        CHECK(loaded[i].sigma == records[i].sigma);
        CHECK(loaded[i].wall_ms == records[i].wall_ms);
    }
}

TEST_CASE("solution records round-trip") {
    TempDir tmp;
    MergeSolution solution;
    solution.alphas_star.alphas = {0.25, 1.0, 0.0};
    solution.betas_star.betas = {-0.5, 1.5, 0.125};
    solution.best_fitness_stage1 = 1.25;
    solution.best_fitness_stage2 = 0.75;
    solution.best_loss_stage2 = 0.7;

    const fs::path file = tmp.path / "solution.json";
    write_solution(file, solution);
    const SolutionRecord record = read_solution(file);
    CHECK(record.alphas_star == solution.alphas_star.alphas);
    CHECK(record.betas_star == solution.betas_star.betas);
    CHECK(record.best_fitness_stage1 == solution.best_fitness_stage1);
    CHECK(record.best_fitness_stage2 == solution.best_fitness_stage2);
    CHECK(record.best_loss_stage2 == solution.best_loss_stage2);
}

TEST_CASE("csv exports carry headers") {
    TempDir tmp;
    const std::vector<AbStudyRow> rows{{0.3, 1.0, 2.0, 0.5, 0.4}};
    write_ab_study_csv(tmp.path / "ab.csv", rows);
    const std::string ab = slurp(tmp.path / "ab.csv");
    CHECK(ab.rfind("alpha,loss_a_sparsified,loss_b_sparsified,gini_a,gini_b\n", 0) == 0);
    CHECK(ab.find("0.29999999999999999,1,2,0.5,") != std::string::npos);

    ConcentrationReport report;
    report.gini = 0.5;
    report.lorenz = {{0.0, 0.0}, {0.5, 0.25}, {1.0, 1.0}};
    write_lorenz_csv(tmp.path / "lorenz.csv", report);
    const std::string lorenz = slurp(tmp.path / "lorenz.csv");
    CHECK(lorenz.rfind("population_fraction,mass_fraction\n", 0) == 0);
    CHECK(lorenz.find("\n0.5,0.25\n") != std::string::npos);
}
