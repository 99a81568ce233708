// Copyright (c) 2026 The evomerge authors
// SPDX-License-Identifier: Apache-2.0

#include "evomerge/oracle.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "httplib.h"
#include "json.hpp"

#include "evomerge/log.hpp"
#include "evomerge/synth.hpp"

namespace evomerge {

namespace {

using nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string format_vector(std::span<const double> values) {
    std::string out = "[";
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += format_double(values[i]);
    }
    out += ']';
    return out;
}

}  // namespace

void ValidationSet::validate(std::size_t input_dim, std::size_t class_count) const {
    if (inputs.size() != labels.size()) {
        throw std::invalid_argument("ValidationSet: inputs/labels length mismatch");
    }
    if (inputs.empty()) {
        throw std::invalid_argument("ValidationSet: empty");
    }
    for (const auto& x : inputs) {
        if (x.size() != input_dim) {
            throw std::invalid_argument("ValidationSet: input dimension mismatch");
        }
    }
    for (std::size_t label : labels) {
        if (label >= class_count) {
            throw std::invalid_argument("ValidationSet: label out of range");
        }
    }
}

const char* QueryError::code_string() const noexcept {
    switch (code_) {
        case Code::dim_mismatch: return "dim_mismatch";
        case Code::bad_stage: return "bad_stage";
        case Code::parse_error: return "parse_error";
    }
    return "parse_error";
}

double mean_cross_entropy(const Matrix& weights, const ValidationSet& val) {
    val.validate(weights.cols(), weights.rows());
    const std::size_t d = weights.rows();
    const std::size_t k = weights.cols();
    std::vector<double> logits(d);
    double total = 0.0;
    for (std::size_t item = 0; item < val.inputs.size(); ++item) {
        const auto& x = val.inputs[item];
        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += weights(c, j) * x[j];
            logits[c] = acc;
        }
        double max_logit = logits[0];
        for (double z : logits) max_logit = std::max(max_logit, z);
        double sum_exp = 0.0;
        for (double z : logits) sum_exp += std::exp(z - max_logit);
        const double lse = max_logit + std::log(sum_exp);
        total += lse - logits[val.labels[item]];
    }
    return total / static_cast<double>(val.inputs.size());
}

double loss_for_delta(const SynthWorld& world, const Matrix& delta) {
    return mean_cross_entropy(world.base + delta, world.val);
}

namespace {

void validate_query(std::size_t repo_size, const FitnessQuery& query) {
    if (query.stage != 1 && query.stage != 2) {
        throw QueryError(QueryError::Code::bad_stage, "stage must be 1 or 2");
    }
    if (query.alphas.size() != repo_size) {
        throw QueryError(QueryError::Code::dim_mismatch,
                         "alphas length " + std::to_string(query.alphas.size()) +
                             " does not match repository size " + std::to_string(repo_size));
    }
    if (query.stage == 2) {
        if (!query.betas) {
            throw QueryError(QueryError::Code::dim_mismatch, "stage-2 query requires betas");
        }
        if (query.betas->size() != repo_size) {
            throw QueryError(QueryError::Code::dim_mismatch,
                             "betas length " + std::to_string(query.betas->size()) +
                                 " does not match repository size " + std::to_string(repo_size));
        }
    } else if (query.betas) {
        throw QueryError(QueryError::Code::dim_mismatch, "stage-1 query must not carry betas");
    }
    for (double a : query.alphas) {
        if (!std::isfinite(a) || a < 0.0 || a > 1.0) {
            throw QueryError(QueryError::Code::parse_error, "alpha outside [0,1]");
        }
    }
    if (query.betas) {
        for (double b : *query.betas) {
            if (!std::isfinite(b)) {
                throw QueryError(QueryError::Code::parse_error, "non-finite beta");
            }
        }
    }
}

}  // namespace

Matrix query_total_delta(const AdapterRepository& repo, const FitnessQuery& query) {
    validate_query(repo.size(), query);
    const MergedAdapter merged = query.stage == 1
                                     ? premerge_uniform(repo, query.alphas)
                                     : merge(repo, *query.betas, query.alphas);
    Matrix delta;
    for (const auto& [name, pair] : merged) {
        const Matrix layer_delta = task_vector(pair);
        if (delta.empty()) {
            delta = layer_delta;
        } else {
            if (delta.rows() != layer_delta.rows() || delta.cols() != layer_delta.cols()) {
                throw QueryError(QueryError::Code::dim_mismatch,
                                 "layer task-vector shapes differ");
            }
            delta += layer_delta;
        }
    }
    return delta;
}

FitnessReply evaluate_local(const SynthWorld& world, const FitnessQuery& query) {
    const Matrix delta = query_total_delta(world.repo, query);
    if (delta.rows() != world.base.rows() || delta.cols() != world.base.cols()) {
        throw QueryError(QueryError::Code::dim_mismatch, "delta shape does not match base");
    }
    FitnessReply reply;
    reply.request_id = query.request_id;
    reply.loss = loss_for_delta(world, delta);
    reply.n_examples = world.val.inputs.size();
    return reply;
}

FitnessReply LocalOracle::evaluate(const FitnessQuery& query) {
    return evaluate_local(world_, query);
}

// --- wire encoding ---------------------------------------------------------

std::string serialize_query(const FitnessQuery& query) {
    std::string body = "{\"request_id\":" + json(query.request_id).dump() +
                       ",\"stage\":" + std::to_string(query.stage) +
                       ",\"alphas\":" + format_vector(query.alphas) + ",\"betas\":";
    body += query.betas ? format_vector(*query.betas) : "null";
    body += '}';
    return body;
}

FitnessQuery parse_query(const std::string& body) {
    json parsed;
    try {
        parsed = json::parse(body);
    } catch (const json::exception& e) {
        throw QueryError(QueryError::Code::parse_error, e.what());
    }
    if (!parsed.is_object()) {
        throw QueryError(QueryError::Code::parse_error, "body must be a JSON object");
    }
    FitnessQuery query;
    try {
        if (!parsed.contains("request_id") || !parsed["request_id"].is_string()) {
            throw QueryError(QueryError::Code::parse_error, "request_id must be a string");
        }
        query.request_id = parsed["request_id"].get<std::string>();
        if (!parsed.contains("stage") || !parsed["stage"].is_number_integer()) {
            throw QueryError(QueryError::Code::parse_error, "stage must be an integer");
        }
        query.stage = parsed["stage"].get<int>();
        if (!parsed.contains("alphas") || !parsed["alphas"].is_array()) {
            throw QueryError(QueryError::Code::parse_error, "alphas must be an array");
        }
        for (const auto& v : parsed["alphas"]) {
            if (!v.is_number()) {
                throw QueryError(QueryError::Code::parse_error, "alphas must hold numbers");
            }
            query.alphas.push_back(v.get<double>());
        }
        if (parsed.contains("betas") && !parsed["betas"].is_null()) {
            if (!parsed["betas"].is_array()) {
                throw QueryError(QueryError::Code::parse_error, "betas must be an array or null");
            }
            std::vector<double> betas;
            for (const auto& v : parsed["betas"]) {
                if (!v.is_number()) {
                    throw QueryError(QueryError::Code::parse_error, "betas must hold numbers");
                }
                betas.push_back(v.get<double>());
            }
            query.betas = std::move(betas);
        }
    } catch (const json::exception& e) {
        throw QueryError(QueryError::Code::parse_error, e.what());
    }
    return query;
}

std::string serialize_reply(const FitnessReply& reply) {
    return "{\"request_id\":" + json(reply.request_id).dump() +
           ",\"loss\":" + format_double(reply.loss) +
           ",\"n_examples\":" + std::to_string(reply.n_examples) + "}";
}

std::string serialize_error(const std::string& code, const std::string& detail) {
    return "{\"error\":" + json(code).dump() + ",\"detail\":" + json(detail).dump() + "}";
}

// --- remote client ---------------------------------------------------------

struct RemoteOracle::Impl {
    explicit Impl(std::string url) : endpoint(std::move(url)) {}

    std::unique_ptr<httplib::Client> make_client() const {
        auto client = std::make_unique<httplib::Client>(endpoint);
        client->set_connection_timeout(10, 0);
        client->set_read_timeout(60, 0);
        client->set_keep_alive(true);
        client->set_tcp_nodelay(true);
        return client;
    }

    httplib::Result post(const std::string& body) {
        std::lock_guard lock(mutex);
        if (!client) client = make_client();
        httplib::Result result = client->Post("/fitness", body, "application/json");
        if (!result) {
            // the kept-alive connection may have gone stale; reopen once
            client = make_client();
            result = client->Post("/fitness", body, "application/json");
            if (!result) client.reset();
        }
        return result;
    }

    std::string endpoint;
    std::mutex mutex;
    std::unique_ptr<httplib::Client> client;
};

RemoteOracle::RemoteOracle(std::string endpoint)
    : impl_(std::make_unique<Impl>(std::move(endpoint))) {}

RemoteOracle::~RemoteOracle() = default;

FitnessReply RemoteOracle::evaluate(const FitnessQuery& query) {
    const std::string body = serialize_query(query);
    httplib::Result result = impl_->post(body);
    if (!result) {
        throw TransportError("transport failure: " + httplib::to_string(result.error()));
    }
    if (result->status == 400) {
        std::string code;
        std::string detail;
        try {
            json parsed = json::parse(result->body);
            code = parsed.at("error").get<std::string>();
            detail = parsed.at("detail").get<std::string>();
        } catch (const json::exception&) {
            throw MalformedReplyError("unparseable error reply: " + result->body);
        }
        throw RemoteRejectionError(code, detail);
    }
    if (result->status != 200) {
        throw MalformedReplyError("unexpected status " + std::to_string(result->status));
    }

    json parsed;
    try {
        parsed = json::parse(result->body);
    } catch (const json::exception& e) {
        throw MalformedReplyError(std::string("reply is not valid JSON: ") + e.what());
    }
    if (!parsed.is_object() || !parsed.contains("request_id") || !parsed.contains("loss") ||
        !parsed.contains("n_examples") || !parsed["request_id"].is_string() ||
        !parsed["loss"].is_number() || !parsed["n_examples"].is_number_unsigned()) {
        throw MalformedReplyError("reply is missing required fields");
    }
    FitnessReply reply;
    reply.request_id = parsed["request_id"].get<std::string>();
    reply.loss = parsed["loss"].get<double>();
    reply.n_examples = parsed["n_examples"].get<std::size_t>();
    if (reply.request_id != query.request_id) {
        throw RequestIdMismatchError("reply echoes request_id '" + reply.request_id +
                                     "', expected '" + query.request_id + "'");
    }
    if (!std::isfinite(reply.loss)) {
        throw NonFiniteLossError("reply loss is not finite");
    }
    if (reply.loss < 0.0 || reply.n_examples == 0) {
        throw MalformedReplyError("reply violates loss >= 0, n_examples >= 1");
    }
    return reply;
}

// --- reference server ------------------------------------------------------

struct FitnessServer::Impl {
    explicit Impl(const SynthWorld& world_ref) : world(world_ref) {}

    const SynthWorld& world;
    httplib::Server server;
    std::thread listener;
    int bound_port = -1;
    std::mutex cache_mutex;
    std::unordered_map<std::string, std::string> reply_cache;  // request body -> reply body

    static constexpr std::size_t kCacheCap = 8192;

    void handle(const httplib::Request& request, httplib::Response& response) {
        {
            std::lock_guard lock(cache_mutex);
            auto hit = reply_cache.find(request.body);
            if (hit != reply_cache.end()) {
                response.set_content(hit->second, "application/json");
                return;
            }
        }
        std::string reply_body;
        try {
            const FitnessQuery query = parse_query(request.body);
            const FitnessReply reply = evaluate_local(world, query);
            reply_body = serialize_reply(reply);
        } catch (const QueryError& e) {
            response.status = 400;
            response.set_content(serialize_error(e.code_string(), e.what()), "application/json");
            return;
        } catch (const std::exception& e) {
            response.status = 400;
            response.set_content(serialize_error("parse_error", e.what()), "application/json");
            return;
        }
        {
            std::lock_guard lock(cache_mutex);
            if (reply_cache.size() >= kCacheCap) reply_cache.clear();
            reply_cache.emplace(request.body, reply_body);
        }
        response.set_content(reply_body, "application/json");
    }
};

FitnessServer::FitnessServer(const SynthWorld& world) : impl_(std::make_unique<Impl>(world)) {
    impl_->server.set_tcp_nodelay(true);
    impl_->server.Post("/fitness", [impl = impl_.get()](const httplib::Request& request,
                                                        httplib::Response& response) {
        impl->handle(request, response);
    });
}

FitnessServer::~FitnessServer() { stop(); }

int FitnessServer::start(const std::string& host, int port) {
    if (port == 0) {
        impl_->bound_port = impl_->server.bind_to_any_port(host);
        if (impl_->bound_port < 0) throw std::runtime_error("FitnessServer: bind failed");
    } else {
        if (!impl_->server.bind_to_port(host, port)) {
            throw std::runtime_error("FitnessServer: bind to " + host + ":" +
                                     std::to_string(port) + " failed");
        }
        impl_->bound_port = port;
    }
    impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    log_info("fitness server listening on port %d", impl_->bound_port);
    return impl_->bound_port;
}

void FitnessServer::wait() {
    if (impl_->listener.joinable()) impl_->listener.join();
}

void FitnessServer::stop() {
    impl_->server.stop();
    if (impl_->listener.joinable()) impl_->listener.join();
}

int FitnessServer::port() const noexcept { return impl_->bound_port; }

}  // namespace evomerge
