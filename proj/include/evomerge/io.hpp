// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evomerge/lowrank.hpp"
#include "evomerge/matrix.hpp"
#include "evomerge/pipeline.hpp"
#include "evomerge/synth.hpp"

namespace evomerge {

class IoError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
/// Tensor file does not start with the LRT1 magic.
class BadMagicError : public IoError {
    using IoError::IoError;
};
/// File ended before the declared payload.
class TruncatedFileError : public IoError {
    using IoError::IoError;
};
/// Declared shape disagrees with the payload actually present.
class SizeMismatchError : public IoError {
    using IoError::IoError;
};
/// Manifest missing, unparseable, or semantically invalid.
class ManifestError : public IoError {
    using IoError::IoError;
};
class ConfigError : public IoError {
    using IoError::IoError;
};

// Tensor files: "LRT1" magic, u32 rows, u32 cols, rows*cols f32 payload,
// row-major, everything little-endian. Reads widen f32 -> f64, writes narrow
// with round-to-nearest-even.
void write_tensor(const std::filesystem::path& path, const Matrix& m);
Matrix read_tensor(const std::filesystem::path& path);

// Adapter containers: a directory holding manifest.json plus one tensor file
// per factor matrix.
void write_adapter(const std::filesystem::path& dir, const Adapter& adapter);
Adapter read_adapter(const std::filesystem::path& dir);

void write_world(const std::filesystem::path& dir, const SynthWorld& world);
SynthWorld read_world(const std::filesystem::path& dir);

struct OracleConfig {
    enum class Mode { Local, Remote };
    Mode mode = Mode::Local;
    std::string endpoint;  // remote only
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "evomerge-run";
    std::optional<SynthSpec> synth;           // exactly one of synth / world_path
    std::optional<std::string> world_path;
    StageConfig stage1;
    StageConfig stage2;
    OracleConfig oracle;
};

/// Appendix-style defaults: lambda 0.05, population 20, sigma 0.05,
/// 20 + 40 generations, beta bound 1.5, the default synthetic world.
ExperimentConfig default_experiment_config(std::uint64_t seed);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void write_experiment_config(const std::filesystem::path& path, const ExperimentConfig& config);

// Run logs: line-delimited JSON, one record per generation, fixed field set.
std::string generation_record_json(const GenerationRecord& record);
void write_run_log(const std::filesystem::path& path,
                   const std::vector<GenerationRecord>& records);
std::vector<GenerationRecord> read_run_log(const std::filesystem::path& path);

struct SolutionRecord {
    std::vector<double> alphas_star;
    std::vector<double> betas_star;
    double best_fitness_stage1 = 0.0;
    double best_fitness_stage2 = 0.0;
    double best_loss_stage2 = 0.0;
};

void write_solution(const std::filesystem::path& path, const MergeSolution& solution);
SolutionRecord read_solution(const std::filesystem::path& path);

// CSV exports for external plotting; first line is a header row.
void write_ab_study_csv(const std::filesystem::path& path,
                        const std::vector<AbStudyRow>& rows);
void write_lorenz_csv(const std::filesystem::path& path, const ConcentrationReport& report);

}  // namespace evomerge
