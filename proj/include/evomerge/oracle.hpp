// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evomerge/lowrank.hpp"
#include "evomerge/matrix.hpp"

namespace evomerge {

struct SynthWorld;  // synth.hpp

struct ValidationSet {
    std::vector<std::vector<double>> inputs;  // each length k
    std::vector<std::size_t> labels;          // each in [0, d)

    void validate(std::size_t input_dim, std::size_t class_count) const;
};

struct FitnessQuery {
    int stage = 1;  // 1 or 2
    std::vector<double> alphas;
    std::optional<std::vector<double>> betas;  // present iff stage == 2
    std::string request_id;
};

struct FitnessReply {
    std::string request_id;
    double loss = 0.0;
    std::size_t n_examples = 0;
};

/// Query rejection, carrying the wire error code.
class QueryError : public std::invalid_argument {
public:
    enum class Code { dim_mismatch, bad_stage, parse_error };

    QueryError(Code code, const std::string& detail)
        : std::invalid_argument(detail), code_(code) {}
    Code code() const noexcept { return code_; }
    const char* code_string() const noexcept;

private:
    Code code_;
};

// client-side failure classes, each distinctly catchable
class OracleError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class TransportError : public OracleError {
    using OracleError::OracleError;
};
class MalformedReplyError : public OracleError {
    using OracleError::OracleError;
};
class RequestIdMismatchError : public OracleError {
    using OracleError::OracleError;
};
class NonFiniteLossError : public OracleError {
    using OracleError::OracleError;
};
/// Structured 400 reply from the server.
class RemoteRejectionError : public OracleError {
public:
    RemoteRejectionError(std::string code, const std::string& detail)
        : OracleError("server rejected query [" + code + "]: " + detail), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

/// Mean softmax cross-entropy of logits = weights * x over the validation set,
/// log-sum-exp stabilized.
double mean_cross_entropy(const Matrix& weights, const ValidationSet& val);

/// Loss of the world's base model shifted by an explicit dense delta.
double loss_for_delta(const SynthWorld& world, const Matrix& delta);

/// Sum over layers of task_vector(merged[layer]); the query decides the merge
/// weights (stage 1: uniform, stage 2: betas) while alphas always drive the
/// A-side sparsification.
Matrix query_total_delta(const AdapterRepository& repo, const FitnessQuery& query);

/// Deterministic local evaluation; throws QueryError on invalid queries.
FitnessReply evaluate_local(const SynthWorld& world, const FitnessQuery& query);

/// Loss interface the pipeline drives. Implementations must be safe to call
/// from several evaluator threads at once.
class FitnessOracle {
public:
    virtual ~FitnessOracle() = default;
    virtual FitnessReply evaluate(const FitnessQuery& query) = 0;
};

class LocalOracle final : public FitnessOracle {
public:
    explicit LocalOracle(const SynthWorld& world) : world_(world) {}
    FitnessReply evaluate(const FitnessQuery& query) override;

private:
    const SynthWorld& world_;
};

/// Speaks the POST /fitness wire protocol against a remote evaluation server.
/// Holds one keep-alive connection; a stale connection is transparently
/// reopened once before a TransportError surfaces.
class RemoteOracle final : public FitnessOracle {
public:
    explicit RemoteOracle(std::string endpoint);  // e.g. "http://127.0.0.1:8080"
    ~RemoteOracle() override;
    FitnessReply evaluate(const FitnessQuery& query) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// wire encoding, shared by client, server and the protocol tests
std::string serialize_query(const FitnessQuery& query);
FitnessQuery parse_query(const std::string& body);  // throws QueryError
std::string serialize_reply(const FitnessReply& reply);
std::string serialize_error(const std::string& code, const std::string& detail);

/// Reference implementation of the service side. The world is immutable;
/// requests are answered concurrently and identical request bodies may be
/// served from a reply cache.
class FitnessServer {
public:
    explicit FitnessServer(const SynthWorld& world);
    ~FitnessServer();

    FitnessServer(const FitnessServer&) = delete;
    FitnessServer& operator=(const FitnessServer&) = delete;

    /// Binds and starts serving on a background thread.
    /// port == 0 picks an ephemeral port; returns the bound port.
    int start(const std::string& host, int port);
    void wait();
    void stop();
    int port() const noexcept;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace evomerge
