// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#include "evomerge/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace evomerge {

namespace {

using nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!in.good() && !in.eof()) throw IoError("read failed for '" + path.string() + "'");
    return data;
}

void write_file(const std::filesystem::path& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create '" + path.string() + "'");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void validate_file_name(const std::string& name) {
    if (name.empty()) throw IoError("empty file name component");
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '_' || c == '-' || c == '.';
        if (!ok) throw IoError("layer/adapter name '" + name + "' not filesystem-safe");
    }
}

json parse_json_file(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ManifestError("invalid JSON in '" + path.string() + "': " + e.what());
    }
}

constexpr char kMagic[4] = {'L', 'R', 'T', '1'};

}  // namespace

void write_tensor(const std::filesystem::path& path, const Matrix& m) {
    if (m.empty()) throw IoError("write_tensor: empty matrix");
    std::string out;
    out.reserve(12 + m.size() * 4);
    out.append(kMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.data()) {
        const auto narrowed = static_cast<float>(v);
        if (!std::isfinite(narrowed)) {
            throw IoError("write_tensor: value exceeds 32-bit storage range");
        }
        put_u32(out, std::bit_cast<std::uint32_t>(narrowed));
    }
    write_file(path, out);
}

Matrix read_tensor(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    if (data.size() < 4) throw TruncatedFileError("'" + path.string() + "': missing magic");
    if (std::memcmp(data.data(), kMagic, 4) != 0) {
        throw BadMagicError("'" + path.string() + "': bad magic");
    }
    if (data.size() < 12) throw TruncatedFileError("'" + path.string() + "': missing header");
    const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
    const std::uint32_t rows = get_u32(bytes + 4);
    const std::uint32_t cols = get_u32(bytes + 8);
    if (rows == 0 || cols == 0) {
        throw SizeMismatchError("'" + path.string() + "': zero dimension in header");
    }
    const std::size_t expected = 12 + static_cast<std::size_t>(rows) * cols * 4;
    if (data.size() < expected) {
        throw TruncatedFileError("'" + path.string() + "': payload shorter than header declares");
    }
    if (data.size() > expected) {
        throw SizeMismatchError("'" + path.string() + "': trailing bytes after payload");
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const std::uint32_t raw = get_u32(bytes + 12 + i * 4);
        m.data()[i] = static_cast<double>(std::bit_cast<float>(raw));
    }
    m.ensure_finite("tensor '" + path.string() + "'");
    return m;
}

void write_adapter(const std::filesystem::path& dir, const Adapter& adapter) {
    if (adapter.layers.empty()) throw IoError("write_adapter: adapter has no layers");
    validate_file_name(adapter.name.empty() ? std::string("adapter") : adapter.name);
    std::filesystem::create_directories(dir);

    json layers = json::array();
    for (const auto& [name, pair] : adapter.layers) {
        validate_file_name(name);
        pair.validate();
        const std::string a_file = name + ".a.lrt";
        const std::string b_file = name + ".b.lrt";
        write_tensor(dir / a_file, pair.a);
        write_tensor(dir / b_file, pair.b);
        layers.push_back({{"name", name},
                          {"d", pair.d()},
                          {"k", pair.k()},
                          {"a_file", a_file},
                          {"b_file", b_file}});
    }
    json manifest = {{"name", adapter.name},
                     {"rank", adapter.layers.front().second.rank},
                     {"layers", layers}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Adapter read_adapter(const std::filesystem::path& dir) {
    const json manifest = parse_json_file(dir / "manifest.json");
    Adapter adapter;
    try {
        adapter.name = manifest.at("name").get<std::string>();
        const auto rank = manifest.at("rank").get<std::size_t>();
        if (rank == 0) throw ManifestError("manifest rank must be >= 1");
        for (const auto& layer : manifest.at("layers")) {
            const auto name = layer.at("name").get<std::string>();
            const auto d = layer.at("d").get<std::size_t>();
            const auto k = layer.at("k").get<std::size_t>();
            LowRankPair pair;
            pair.rank = rank;
            pair.a = read_tensor(dir / layer.at("a_file").get<std::string>());
            pair.b = read_tensor(dir / layer.at("b_file").get<std::string>());
            if (pair.a.rows() != rank || pair.a.cols() != k) {
                throw SizeMismatchError("adapter '" + adapter.name + "' layer '" + name +
                                        "': A payload shape disagrees with manifest");
            }
            if (pair.b.rows() != d || pair.b.cols() != rank) {
                throw SizeMismatchError("adapter '" + adapter.name + "' layer '" + name +
                                        "': B payload shape disagrees with manifest");
            }
            pair.validate();
            adapter.layers.emplace_back(name, std::move(pair));
        }
    } catch (const json::exception& e) {
        throw ManifestError("adapter manifest in '" + dir.string() + "': " + e.what());
    }
    if (adapter.layers.empty()) {
        throw ManifestError("adapter manifest in '" + dir.string() + "' declares no layers");
    }
    return adapter;
}

// --- synth spec / world ------------------------------------------------------

namespace {

json spec_to_json(const SynthSpec& spec) {
    return {{"input_dim", spec.input_dim},
            {"class_count", spec.class_count},
            {"rank", spec.rank},
            {"n_adapters", spec.n_adapters},
            {"n_relevant", spec.n_relevant},
            {"n_adversarial", spec.n_adversarial},
            {"noise_level", spec.noise_level},
            {"signal_scale", spec.signal_scale},
            {"n_val", spec.n_val},
            {"n_layers", spec.n_layers},
            {"noise_side", to_string(spec.noise_side)},
            {"seed", spec.seed}};
}

SynthSpec spec_from_json(const json& j) {
    SynthSpec spec;
    spec.input_dim = j.value("input_dim", spec.input_dim);
    spec.class_count = j.value("class_count", spec.class_count);
    spec.rank = j.value("rank", spec.rank);
    spec.n_adapters = j.value("n_adapters", spec.n_adapters);
    spec.n_relevant = j.value("n_relevant", spec.n_relevant);
    spec.n_adversarial = j.value("n_adversarial", spec.n_adversarial);
    spec.noise_level = j.value("noise_level", spec.noise_level);
    spec.signal_scale = j.value("signal_scale", spec.signal_scale);
    spec.n_val = j.value("n_val", spec.n_val);
    spec.n_layers = j.value("n_layers", spec.n_layers);
    if (j.contains("noise_side")) {
        const auto side = j.at("noise_side").get<std::string>();
        if (side == "A") {
            spec.noise_side = NoiseSide::A;
        } else if (side == "B") {
            spec.noise_side = NoiseSide::B;
        } else {
            throw ConfigError("noise_side must be 'A' or 'B'");
        }
    }
    spec.seed = j.value("seed", spec.seed);
    spec.validate();
    return spec;
}

AdapterRole role_from_string(const std::string& s) {
    if (s == "relevant") return AdapterRole::Relevant;
    if (s == "irrelevant") return AdapterRole::Irrelevant;
    if (s == "adversarial") return AdapterRole::Adversarial;
    throw ManifestError("unknown adapter role '" + s + "'");
}

}  // namespace

void write_world(const std::filesystem::path& dir, const SynthWorld& world) {
    std::filesystem::create_directories(dir);
    write_tensor(dir / "base.lrt", world.base);

    Matrix inputs(world.val.inputs.size(), world.spec.input_dim);
    for (std::size_t i = 0; i < world.val.inputs.size(); ++i) {
        for (std::size_t j = 0; j < world.spec.input_dim; ++j) {
            inputs(i, j) = world.val.inputs[i][j];
        }
    }
    write_tensor(dir / "val_inputs.lrt", inputs);

    write_adapter(dir / "target", world.target);

    json adapter_dirs = json::array();
    for (std::size_t i = 0; i < world.repo.size(); ++i) {
        const Adapter& adapter = world.repo.adapter(i);
        const std::string rel = "adapters/" + adapter.name;
        write_adapter(dir / rel, adapter);
        adapter_dirs.push_back(rel);
    }

    json roles = json::array();
    for (AdapterRole role : world.roles) roles.push_back(to_string(role));

    const json manifest = {{"format", "evomerge-world-v1"},
                           {"spec", spec_to_json(world.spec)},
                           {"teacher_loss", world.teacher_loss},
                           {"roles", roles},
                           {"labels", world.val.labels},
                           {"base_file", "base.lrt"},
                           {"val_inputs_file", "val_inputs.lrt"},
                           {"target_dir", "target"},
                           {"adapter_dirs", adapter_dirs}};
    write_file(dir / "world.json", manifest.dump(2) + "\n");
}

SynthWorld read_world(const std::filesystem::path& dir) {
    const json manifest = parse_json_file(dir / "world.json");
    SynthWorld world;
    try {
        if (manifest.value("format", "") != "evomerge-world-v1") {
            throw ManifestError("'" + dir.string() + "' is not an evomerge world directory");
        }
        world.spec = spec_from_json(manifest.at("spec"));
        world.teacher_loss = manifest.at("teacher_loss").get<double>();
        world.base = read_tensor(dir / manifest.at("base_file").get<std::string>());
        world.target = read_adapter(dir / manifest.at("target_dir").get<std::string>());

        std::vector<Adapter> adapters;
        for (const auto& rel : manifest.at("adapter_dirs")) {
            adapters.push_back(read_adapter(dir / rel.get<std::string>()));
        }
        world.repo = AdapterRepository(std::move(adapters));

        for (const auto& role : manifest.at("roles")) {
            world.roles.push_back(role_from_string(role.get<std::string>()));
        }
        if (world.roles.size() != world.repo.size()) {
            throw ManifestError("world roles count disagrees with adapter count");
        }

        const Matrix inputs = read_tensor(dir / manifest.at("val_inputs_file").get<std::string>());
        for (std::size_t i = 0; i < inputs.rows(); ++i) {
            std::vector<double> x(inputs.cols());
            for (std::size_t j = 0; j < inputs.cols(); ++j) x[j] = inputs(i, j);
            world.val.inputs.push_back(std::move(x));
        }
        for (const auto& label : manifest.at("labels")) {
            world.val.labels.push_back(label.get<std::size_t>());
        }
        world.val.validate(world.spec.input_dim, world.spec.class_count);
    } catch (const json::exception& e) {
        throw ManifestError("world manifest in '" + dir.string() + "': " + e.what());
    }
    if (world.base.rows() != world.spec.class_count || world.base.cols() != world.spec.input_dim) {
        throw SizeMismatchError("world base shape disagrees with spec");
    }
    if (world.repo.size() != world.spec.n_adapters) {
        throw ManifestError("world adapter count disagrees with spec");
    }
    return world;
}

// --- experiment config -------------------------------------------------------

ExperimentConfig default_experiment_config(std::uint64_t seed) {
    ExperimentConfig config;
    config.seed = seed;
    SynthSpec synth;
    synth.seed = split_seed(seed, 0);
    config.synth = synth;
    config.stage1 = StageConfig{};
    config.stage1.generations = 20;
    config.stage1.seed = split_seed(seed, 1);
    config.stage2 = StageConfig{};
    config.stage2.generations = 40;
    config.stage2.seed = split_seed(seed, 2);
    return config;
}

namespace {

StageConfig stage_from_json(const json& j, const StageConfig& defaults) {
    StageConfig cfg = defaults;
    cfg.lambda_reg = j.value("lambda", cfg.lambda_reg);
    cfg.generations = j.value("generations", cfg.generations);
    cfg.population = j.value("population", cfg.population);
    cfg.sigma0 = j.value("sigma0", cfg.sigma0);
    cfg.beta_bound = j.value("beta_bound", cfg.beta_bound);
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

json stage_to_json(const StageConfig& cfg) {
    return {{"lambda", cfg.lambda_reg},
            {"generations", cfg.generations},
            {"population", cfg.population},
            {"sigma0", cfg.sigma0},
            {"beta_bound", cfg.beta_bound},
            {"seed", cfg.seed}};
}

}  // namespace

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    json j;
    try {
        j = parse_json_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    try {
        ExperimentConfig config = default_experiment_config(j.value("seed", std::uint64_t{42}));
        config.out_dir = j.value("out", config.out_dir);

        const bool has_synth = j.contains("world") && j.at("world").contains("synth");
        const bool has_path = j.contains("world") && j.at("world").contains("path");
        if (has_synth == has_path) {
            throw ConfigError("config must provide exactly one of world.synth / world.path");
        }
        if (has_synth) {
            json spec = j.at("world").at("synth");
            if (!spec.contains("seed")) spec["seed"] = split_seed(config.seed, 0);
            config.synth = spec_from_json(spec);
            config.world_path.reset();
        } else {
            config.synth.reset();
            config.world_path = j.at("world").at("path").get<std::string>();
        }

        if (j.contains("stage1")) config.stage1 = stage_from_json(j.at("stage1"), config.stage1);
        if (j.contains("stage2")) config.stage2 = stage_from_json(j.at("stage2"), config.stage2);

        if (j.contains("oracle")) {
            const auto mode = j.at("oracle").value("mode", "local");
            if (mode == "local") {
                config.oracle.mode = OracleConfig::Mode::Local;
            } else if (mode == "remote") {
                config.oracle.mode = OracleConfig::Mode::Remote;
                config.oracle.endpoint = j.at("oracle").at("endpoint").get<std::string>();
            } else {
                throw ConfigError("oracle.mode must be 'local' or 'remote'");
            }
        }
        return config;
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path.string() + "': " + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config '" + path.string() + "': " + e.what());
    }
}

void write_experiment_config(const std::filesystem::path& path, const ExperimentConfig& config) {
    json world;
    if (config.synth) {
        world["synth"] = spec_to_json(*config.synth);
    } else if (config.world_path) {
        world["path"] = *config.world_path;
    }
    json oracle = {{"mode", config.oracle.mode == OracleConfig::Mode::Local ? "local" : "remote"}};
    if (config.oracle.mode == OracleConfig::Mode::Remote) {
        oracle["endpoint"] = config.oracle.endpoint;
    }
    const json j = {{"seed", config.seed},
                    {"out", config.out_dir},
                    {"world", world},
                    {"stage1", stage_to_json(config.stage1)},
                    {"stage2", stage_to_json(config.stage2)},
                    {"oracle", oracle}};
    write_file(path, j.dump(2) + "\n");
}

// --- run logs / solutions ----------------------------------------------------

std::string generation_record_json(const GenerationRecord& record) {
    return std::string("{\"stage\":") + std::to_string(record.stage) +
           ",\"generation\":" + std::to_string(record.generation) +
           ",\"best_fitness\":" + format_double(record.best_fitness) +
           ",\"mean_fitness\":" + format_double(record.mean_fitness) +
           ",\"sigma\":" + format_double(record.sigma) +
           ",\"wall_ms\":" + std::to_string(record.wall_ms) + "}";
}

void write_run_log(const std::filesystem::path& path,
                   const std::vector<GenerationRecord>& records) {
    std::string out;
    for (const auto& record : records) {
        out += generation_record_json(record);
        out += '\n';
    }
    write_file(path, out);
}

std::vector<GenerationRecord> read_run_log(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    std::vector<GenerationRecord> records;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            GenerationRecord record;
            record.stage = j.at("stage").get<int>();
            record.generation = j.at("generation").get<std::size_t>();
            record.best_fitness = j.at("best_fitness").get<double>();
            record.mean_fitness = j.at("mean_fitness").get<double>();
            record.sigma = j.at("sigma").get<double>();
            record.wall_ms = j.at("wall_ms").get<std::int64_t>();
            records.push_back(record);
        } catch (const json::exception& e) {
            throw ManifestError("run log '" + path.string() + "': " + e.what());
        }
    }
    return records;
}

void write_solution(const std::filesystem::path& path, const MergeSolution& solution) {
    const json j = {{"alphas_star", solution.alphas_star.alphas},
                    {"betas_star", solution.betas_star.betas},
                    {"best_fitness_stage1", solution.best_fitness_stage1},
                    {"best_fitness_stage2", solution.best_fitness_stage2},
                    {"best_loss_stage2", solution.best_loss_stage2}};
    write_file(path, j.dump(2) + "\n");
}

SolutionRecord read_solution(const std::filesystem::path& path) {
    const json j = parse_json_file(path);
    SolutionRecord record;
    try {
        record.alphas_star = j.at("alphas_star").get<std::vector<double>>();
        record.betas_star = j.at("betas_star").get<std::vector<double>>();
        record.best_fitness_stage1 = j.at("best_fitness_stage1").get<double>();
        record.best_fitness_stage2 = j.at("best_fitness_stage2").get<double>();
        record.best_loss_stage2 = j.at("best_loss_stage2").get<double>();
    } catch (const json::exception& e) {
        throw ManifestError("solution '" + path.string() + "': " + e.what());
    }
    return record;
}

void write_ab_study_csv(const std::filesystem::path& path,
                        const std::vector<AbStudyRow>& rows) {
    std::string out = "alpha,loss_a_sparsified,loss_b_sparsified,gini_a,gini_b\n";
    for (const auto& row : rows) {
        out += format_double(row.alpha) + "," + format_double(row.loss_a_sparsified) + "," +
               format_double(row.loss_b_sparsified) + "," + format_double(row.gini_a) + "," +
               format_double(row.gini_b) + "\n";
    }
    write_file(path, out);
}

void write_lorenz_csv(const std::filesystem::path& path, const ConcentrationReport& report) {
    std::string out = "population_fraction,mass_fraction\n";
    for (const auto& [population, mass] : report.lorenz) {
        out += format_double(population) + "," + format_double(mass) + "\n";
    }
    write_file(path, out);
}

}  // namespace evomerge
