// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cacheaudit/sim_server.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <httplib.h>

#include "cacheaudit/promptgen.hpp"

namespace cacheaudit::sim {

using nlohmann::json;

SimConfig sim_config_from_json(const json& j) {
    SimConfig cfg;
    if (auto p = j.find("policy"); p != j.end()) {
        cfg.policy.scope = parse_scope(p->value("scope", to_string(cfg.policy.scope)));
        cfg.policy.num_servers = p->value("num_servers", cfg.policy.num_servers);
        cfg.policy.ttl = p->value("ttl_s", cfg.policy.ttl);
        cfg.policy.min_hit_prefix = p->value("min_hit_prefix", cfg.policy.min_hit_prefix);
    }
    if (auto l = j.find("latency"); l != j.end()) {
        cfg.latency.base = l->value("base_s", cfg.latency.base);
        cfg.latency.per_token = l->value("per_token_s", cfg.latency.per_token);
        cfg.latency.noise_sigma = l->value("noise_sigma_s", cfg.latency.noise_sigma);
        cfg.latency.noise_kind = parse_noise_kind(l->value("noise_kind", to_string(cfg.latency.noise_kind)));
    }
    if (auto ids = j.find("identities"); ids != j.end()) {
        for (const auto& [token, rec] : ids->items()) {
            cfg.identities[token] = IdentityRecord{rec.at("user").get<std::string>(), rec.at("org").get<std::string>()};
        }
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.timing_header = j.value("timing_header", cfg.timing_header);
    cfg.debug = j.value("debug", cfg.debug);
    cfg.simulate_delay = j.value("simulate_delay", cfg.simulate_delay);
    cfg.embedding_dim = j.value("embedding_dim", cfg.embedding_dim);
    cfg.policy.validate();
    cfg.latency.validate();
    return cfg;
}

json sim_config_to_json(const SimConfig& cfg) {
    json ids = json::object();
    for (const auto& [token, rec] : cfg.identities) ids[token] = {{"user", rec.user_id}, {"org", rec.org_id}};
    return json{
        {"policy",
         {{"scope", to_string(cfg.policy.scope)},
          {"num_servers", cfg.policy.num_servers},
          {"ttl_s", cfg.policy.ttl},
          {"min_hit_prefix", cfg.policy.min_hit_prefix}}},
        {"latency",
         {{"base_s", cfg.latency.base},
          {"per_token_s", cfg.latency.per_token},
          {"noise_sigma_s", cfg.latency.noise_sigma},
          {"noise_kind", to_string(cfg.latency.noise_kind)}}},
        {"identities", ids},
        {"seed", cfg.seed},
        {"timing_header", cfg.timing_header},
        {"debug", cfg.debug},
        {"simulate_delay", cfg.simulate_delay},
        {"embedding_dim", cfg.embedding_dim},
    };
}

namespace {

std::string continuation(std::uint64_t digest, std::size_t count) {
    std::string out;
    std::uint64_t h = digest;
    for (std::size_t i = 0; i < count; ++i) {
        if (i != 0) out.push_back(' ');
        h ^= h >> 33;
        h *= 0xff51afd7ed558ccdULL;
        h ^= h >> 33;
        out.push_back(promptgen::kAlphabet[h % promptgen::kAlphabet.size()]);
    }
    return out;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void send_error(httplib::Response& res, int status, const std::string& type, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", {{"type", type}, {"message", message}}}}.dump(), "application/json");
}

enum class Route { Chat, Embedding, Native };

}  // namespace

struct SimHttpServer::Impl {
    httplib::Server server;
    std::chrono::steady_clock::time_point epoch = std::chrono::steady_clock::now();

    double now() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch).count();
    }
};

SimHttpServer::SimHttpServer(SimConfig cfg)
    : cfg_(std::move(cfg)),
      api_(std::make_unique<SimulatedApi>(cfg_.policy, cfg_.latency, cfg_.seed, cfg_.embedding_dim)),
      impl_(std::make_unique<Impl>()) {
    auto handler = [this](Route route) {
        return [this, route](const httplib::Request& req, httplib::Response& res) {
            const std::string auth = req.get_header_value("Authorization");
            constexpr std::string_view kBearer = "Bearer ";
            if (auth.rfind(kBearer, 0) != 0) {
                return send_error(res, 401, "authentication_error", "missing bearer token");
            }
            auto who = cfg_.identities.find(auth.substr(kBearer.size()));
            if (who == cfg_.identities.end()) {
                return send_error(res, 401, "authentication_error", "unknown API key");
            }

            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::exception& e) {
                return send_error(res, 400, "invalid_request_error", std::string("malformed JSON: ") + e.what());
            }

            SimRequest sreq;
            sreq.user_id = who->second.user_id;
            sreq.org_id = who->second.org_id;
            try {
                switch (route) {
                    case Route::Chat: {
                        const auto& msgs = body.at("messages");
                        if (!msgs.is_array() || msgs.empty()) throw std::invalid_argument("messages must be non-empty");
                        sreq.prompt_text = msgs.back().at("content").get<std::string>();
                        sreq.max_tokens = body.value("max_tokens", std::size_t{1});
                        break;
                    }
                    case Route::Embedding:
                        sreq.prompt_text = body.at("input").get<std::string>();
                        sreq.kind = RequestKind::Embedding;
                        break;
                    case Route::Native:
                        sreq.prompt_text = body.at("input").get<std::string>();
                        sreq.max_tokens = body.value("max_tokens", std::size_t{1});
                        break;
                }
            } catch (const std::exception& e) {
                return send_error(res, 400, "invalid_request_error", e.what());
            }

            SimResponse out;
            try {
                out = api_->handle_request(sreq, impl_->now());
            } catch (const RequestError& e) {
                return send_error(res, 400, "invalid_request_error", e.what());
            }
            if (cfg_.simulate_delay) std::this_thread::sleep_for(std::chrono::duration<double>(out.ttft));

            const std::size_t completion = route == Route::Embedding ? 0 : sreq.max_tokens;
            json usage{{"prompt_tokens", out.prompt_tokens},
                       {"completion_tokens", completion},
                       {"total_tokens", out.prompt_tokens + completion}};
            json reply;
            const std::string model = body.value("model", std::string("sim"));
            switch (route) {
                case Route::Chat: {
                    const std::string text = continuation(out.payload.digest, sreq.max_tokens);
                    reply = {{"object", "chat.completion"},
                             {"model", model},
                             {"choices",
                              json::array({{{"index", 0},
                                            {"message", {{"role", "assistant"}, {"content", text}}},
                                            {"finish_reason", "length"}}})},
                             {"payload", text},
                             {"usage", usage}};
                    break;
                }
                case Route::Embedding:
                    reply = {{"object", "list"},
                             {"model", model},
                             {"data", json::array({{{"object", "embedding"},
                                                    {"index", 0},
                                                    {"embedding", out.payload.embedding}}})},
                             {"payload", hex64(out.payload.digest)},
                             {"usage", usage}};
                    break;
                case Route::Native:
                    reply = {{"payload", continuation(out.payload.digest, sreq.max_tokens)}, {"usage", usage}};
                    break;
            }

            const auto ms = static_cast<long long>(std::floor(out.ttft * 1000.0));
            res.set_header(cfg_.timing_header, std::to_string(ms));
            if (cfg_.debug) res.set_header(kCachedTokensHeader, std::to_string(out.cached_prefix_tokens));
            res.set_content(reply.dump(), "application/json");
        };
    };

    impl_->server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"status":"ok"})", "application/json");
    });
    impl_->server.Post("/v1/chat/completions", handler(Route::Chat));
    impl_->server.Post("/v1/embeddings", handler(Route::Embedding));
    impl_->server.Post("/v1/sim/completions", handler(Route::Native));
}

SimHttpServer::~SimHttpServer() { stop(); }

namespace {

int bind_or_throw(httplib::Server& server, const std::string& host, int port) {
    // httplib's default also sets SO_REUSEPORT, which lets a second
    // simulator silently share a port that is already in use.
    server.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    server.set_tcp_nodelay(true);
    int bound = -1;
    if (port == 0) {
        bound = server.bind_to_any_port(host);
    } else if (server.bind_to_port(host, port)) {
        bound = port;
    }
    if (bound < 0) throw std::runtime_error("cannot bind simulator to " + host + ":" + std::to_string(port));
    return bound;
}

}  // namespace

int SimHttpServer::start(const std::string& host, int port) {
    port_ = bind_or_throw(impl_->server, host, port);
    thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port_;
}

void SimHttpServer::run_blocking(const std::string& host, int port, const std::function<void(int)>& on_bound) {
    port_ = bind_or_throw(impl_->server, host, port);
    if (on_bound) on_bound(port_);
    impl_->server.listen_after_bind();
}

void SimHttpServer::stop() {
    if (impl_) impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

std::unique_ptr<SimHttpServer> serve_http(SimConfig cfg, const std::string& host, int port) {
    auto server = std::make_unique<SimHttpServer>(std::move(cfg));
    server->start(host, port);
    return server;
}

}  // namespace cacheaudit::sim
