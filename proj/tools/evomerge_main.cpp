// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: gen | merge | serve | eval | analyze | bound-check.

#include <atomic>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "evomerge/io.hpp"
#include "evomerge/log.hpp"
#include "evomerge/lowrank.hpp"
#include "evomerge/oracle.hpp"
#include "evomerge/pipeline.hpp"
#include "evomerge/rng.hpp"
#include "evomerge/synth.hpp"

namespace {

using namespace evomerge;

std::atomic<FitnessServer*> g_server{nullptr};

void handle_signal(int) {
    if (FitnessServer* server = g_server.load()) server->stop();
}

ExperimentConfig resolve_config(const std::optional<std::string>& config_path,
                                const std::optional<std::uint64_t>& seed_override,
                                const std::optional<std::string>& out_override,
                                const std::optional<std::string>& endpoint_override) {
    ExperimentConfig config;
    if (config_path) {
        config = load_experiment_config(*config_path);
        if (seed_override) {
            // re-derive only the seeds the file left unpinned
            const ExperimentConfig file_defaults = default_experiment_config(config.seed);
            const ExperimentConfig derived = default_experiment_config(*seed_override);
            config.seed = *seed_override;
            if (config.stage1.seed == file_defaults.stage1.seed) {
                config.stage1.seed = derived.stage1.seed;
            }
            if (config.stage2.seed == file_defaults.stage2.seed) {
                config.stage2.seed = derived.stage2.seed;
            }
            if (config.synth && config.synth->seed == file_defaults.synth->seed) {
                config.synth->seed = derived.synth->seed;
            }
        }
    } else {
        config = default_experiment_config(seed_override.value_or(42));
    }
    if (out_override) config.out_dir = *out_override;
    if (endpoint_override) {
        config.oracle.mode = OracleConfig::Mode::Remote;
        config.oracle.endpoint = *endpoint_override;
    }
    return config;
}

Matrix adapter_total_delta(const Adapter& adapter) {
    Matrix delta;
    for (const auto& [name, pair] : adapter.layers) {
        if (delta.empty()) {
            delta = task_vector(pair);
        } else {
            delta += task_vector(pair);
        }
    }
    return delta;
}

int run_gen(const std::optional<std::string>& config_path,
            const std::optional<std::uint64_t>& seed, const std::string& out_dir) {
    ExperimentConfig config = resolve_config(config_path, seed, out_dir, std::nullopt);
    if (!config.synth) {
        throw ConfigError("gen requires a synth spec (world.path configs have no generator)");
    }
    const SynthWorld world = generate_world(*config.synth);
    write_world(out_dir, world);
    log_info("world written to %s (teacher loss %.6f)", out_dir.c_str(), world.teacher_loss);
    return 0;
}

int run_merge(const std::string& config_path, const std::optional<std::uint64_t>& seed,
              const std::optional<std::string>& out_dir,
              const std::optional<std::string>& endpoint) {
    const ExperimentConfig config = resolve_config(config_path, seed, out_dir, endpoint);
    const std::filesystem::path out(config.out_dir);
    std::filesystem::create_directories(out);

    SynthWorld world;
    if (config.synth) {
        // persist first and run against the stored (32-bit) world so replays
        // through `eval` and `serve` see identical data
        write_world(out / "world", generate_world(*config.synth));
        world = read_world(out / "world");
    } else {
        world = read_world(*config.world_path);
    }

    std::unique_ptr<FitnessOracle> oracle;
    if (config.oracle.mode == OracleConfig::Mode::Remote) {
        oracle = std::make_unique<RemoteOracle>(config.oracle.endpoint);
        log_info("using remote oracle at %s", config.oracle.endpoint.c_str());
    } else {
        oracle = std::make_unique<LocalOracle>(world);
    }

    const MergeSolution solution = evo_merge(world.repo, *oracle, config.stage1, config.stage2);

    Adapter merged;
    merged.name = "merged";
    for (const auto& [name, pair] : solution.merged) merged.layers.emplace_back(name, pair);
    write_adapter(out / "merged", merged);
    write_solution(out / "solution.json", solution);
    write_run_log(out / "run_log.jsonl", solution.history);
    write_experiment_config(out / "config.json", config);

    log_info("merge finished: stage-1 best %.6f, stage-2 best %.6f (oracle loss %.6f)",
             solution.best_fitness_stage1, solution.best_fitness_stage2,
             solution.best_loss_stage2);
    std::printf("%.17g\n", solution.best_loss_stage2);
    return 0;
}

int run_serve(const std::string& world_dir, const std::string& bind) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) {
        throw ConfigError("--bind expects host:port, got '" + bind + "'");
    }
    const std::string host = bind.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(bind.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("--bind port is not a number: '" + bind + "'");
    }

    const SynthWorld world = read_world(world_dir);
    FitnessServer server(world);
    g_server.store(&server);
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    server.start(host, port);
    server.wait();
    g_server.store(nullptr);
    return 0;
}

int run_eval(const std::string& world_dir, const std::optional<std::string>& adapter_dir,
             const std::optional<std::string>& solution_path) {
    if (adapter_dir.has_value() == solution_path.has_value()) {
        throw ConfigError("eval requires exactly one of --adapter / --solution");
    }
    const SynthWorld world = read_world(world_dir);
    double loss = 0.0;
    if (adapter_dir) {
        const Adapter adapter = read_adapter(*adapter_dir);
        loss = loss_for_delta(world, adapter_total_delta(adapter));
    } else {
        // replay the recorded decision vectors against the world's own pool
        const SolutionRecord record = read_solution(*solution_path);
        const MergedAdapter merged =
            merge(world.repo, record.betas_star, record.alphas_star);
        Adapter adapter;
        adapter.name = "replay";
        for (const auto& [name, pair] : merged) adapter.layers.emplace_back(name, pair);
        loss = loss_for_delta(world, adapter_total_delta(adapter));
    }
    std::printf("%.17g\n", loss);
    return 0;
}

int run_analyze(const std::string& world_dir, const std::string& out_dir,
                const std::string& grid_arg) {
    std::vector<double> grid;
    std::size_t start = 0;
    while (start <= grid_arg.size()) {
        std::size_t end = grid_arg.find(',', start);
        if (end == std::string::npos) end = grid_arg.size();
        const std::string token = grid_arg.substr(start, end - start);
        if (!token.empty()) {
            try {
                grid.push_back(std::stod(token));
            } catch (const std::exception&) {
                throw ConfigError("--grid expects comma-separated numbers, got '" + token + "'");
            }
        }
        start = end + 1;
    }
    if (grid.empty()) throw ConfigError("--grid parsed to an empty retention list");

    const SynthWorld world = read_world(world_dir);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path out(out_dir);

    const std::vector<AbStudyRow> rows = ab_sparsify_study(world, grid);
    write_ab_study_csv(out / "ab_study.csv", rows);

    const std::vector<double> ones(world.repo.size(), 1.0);
    Matrix delta;
    for (const auto& [name, pair] : premerge_uniform(world.repo, ones)) {
        if (delta.empty()) {
            delta = task_vector(pair);
        } else {
            delta += task_vector(pair);
        }
    }
    std::vector<double> magnitudes(delta.data().begin(), delta.data().end());
    for (double& v : magnitudes) v = std::abs(v);
    const ConcentrationReport report = concentration(magnitudes);
    write_lorenz_csv(out / "lorenz.csv", report);

    log_info("analysis written to %s", out_dir.c_str());
    std::printf("gini=%.17g\n", report.gini);
    return 0;
}

int run_bound_check(std::size_t trials, std::uint64_t seed) {
    NormalRng rng(seed);
    double max_ratio = 0.0;
    std::size_t violations = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        const auto rows_a = static_cast<std::size_t>(rng.next_u64() % 16 + 1);
        const auto cols_a = static_cast<std::size_t>(rng.next_u64() % 16 + 1);
        const auto rows_b = static_cast<std::size_t>(rng.next_u64() % 16 + 1);
        Matrix a(rows_a, cols_a);
        for (double& v : a.data()) v = rng.normal();
        Matrix b(rows_b, rows_a);
        for (double& v : b.data()) v = rng.normal();
        const double alpha = rng.uniform();

        const BoundCheck check = error_bound_check(a, alpha, b);
        if (check.rhs == 0.0) {
            if (check.lhs != 0.0) ++violations;
            continue;
        }
        const double ratio = check.lhs / check.rhs;
        max_ratio = std::max(max_ratio, ratio);
        if (check.lhs > check.rhs * (1.0 + 1e-9)) ++violations;
    }
    std::printf("trials=%zu max_ratio=%.17g violations=%zu\n", trials, max_ratio, violations);
    return violations == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"derivative-free black-box adapter merging toolkit"};
    app.require_subcommand(1);

    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_override;
    std::optional<std::string> endpoint;

    auto* gen = app.add_subcommand("gen", "materialize a synthetic world to disk");
    std::string gen_out = "world";
    gen->add_option("--config", config_path, "experiment config file");
    gen->add_option("--seed", seed, "seed override");
    gen->add_option("--out", gen_out, "output directory");

    auto* merge_cmd = app.add_subcommand("merge", "run the two-stage merge against an oracle");
    std::string merge_config;
    merge_cmd->add_option("--config", merge_config, "experiment config file")->required();
    merge_cmd->add_option("--seed", seed, "seed override");
    merge_cmd->add_option("--out", out_override, "output directory override");
    merge_cmd->add_option("--endpoint", endpoint, "remote oracle endpoint override");

    auto* serve = app.add_subcommand("serve", "start the reference fitness server");
    std::string serve_world;
    std::string bind = "127.0.0.1:8080";
    serve->add_option("--world", serve_world, "world directory")->required();
    serve->add_option("--bind", bind, "host:port to listen on");

    auto* eval = app.add_subcommand("eval", "report the loss of a merged adapter on a world");
    std::string eval_world;
    std::optional<std::string> eval_adapter;
    std::optional<std::string> eval_solution;
    eval->add_option("--world", eval_world, "world directory")->required();
    eval->add_option("--adapter", eval_adapter, "adapter container directory");
    eval->add_option("--solution", eval_solution, "solution record to replay");

    auto* analyze = app.add_subcommand("analyze", "emit Lorenz/Gini and the A-vs-B study as CSV");
    std::string analyze_world;
    std::string analyze_out = "analysis";
    std::string grid = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0";
    analyze->add_option("--world", analyze_world, "world directory")->required();
    analyze->add_option("--out", analyze_out, "output directory");
    analyze->add_option("--grid", grid, "comma-separated retention ratios");

    auto* bound = app.add_subcommand("bound-check", "sample random pruning-error bound triples");
    std::size_t trials = 1000;
    std::uint64_t bound_seed = 0;
    bound->add_option("--trials", trials, "number of random triples");
    bound->add_option("--seed", bound_seed, "sampling seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen(config_path, seed, gen_out);
        if (merge_cmd->parsed()) return run_merge(merge_config, seed, out_override, endpoint);
        if (serve->parsed()) return run_serve(serve_world, bind);
        if (eval->parsed()) return run_eval(eval_world, eval_adapter, eval_solution);
        if (analyze->parsed()) return run_analyze(analyze_world, analyze_out, grid);
        if (bound->parsed()) return run_bound_check(trials, bound_seed);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const OracleError& e) {
        std::fprintf(stderr, "oracle error: %s\n", e.what());
        return 4;
    } catch (const QueryError& e) {
        std::fprintf(stderr, "query error [%s]: %s\n", e.code_string(), e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 5;
    }
    return 1;
}
