// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "cacheaudit/cachesim.hpp"

namespace cacheaudit::sim {

struct IdentityRecord {
    std::string user_id;
    std::string org_id;
};

/// Everything the HTTP simulator needs. Loaded from JSON; see README for the
/// file layout.
struct SimConfig {
    CachePolicy policy;
    LatencyModel latency;
    std::map<std::string, IdentityRecord> identities;  // bearer token -> identity
    std::uint64_t seed = 1;
    std::string timing_header = "x-sim-processing-ms";
    bool debug = false;
    /// Hold each response for its synthetic ttft so client clocks see it.
    bool simulate_delay = true;
    std::size_t embedding_dim = 8;
};

SimConfig sim_config_from_json(const nlohmann::json& j);
nlohmann::json sim_config_to_json(const SimConfig& cfg);

inline constexpr const char* kCachedTokensHeader = "x-sim-cached-tokens";

/// Routes served:
///   GET  /health
///   POST /v1/chat/completions   {model, messages:[{role, content}], max_tokens}
///   POST /v1/embeddings         {model, input}
///   POST /v1/sim/completions    {model, input, max_tokens}
/// Identity comes from "Authorization: Bearer <token>". Responses carry the
/// synthetic processing time in `timing_header` as whole milliseconds
/// (truncated), and the reused prefix length in x-sim-cached-tokens when
/// debug is on.
class SimHttpServer {
public:
    explicit SimHttpServer(SimConfig cfg);
    ~SimHttpServer();
    SimHttpServer(const SimHttpServer&) = delete;
    SimHttpServer& operator=(const SimHttpServer&) = delete;

    /// Binds and starts serving on a background thread. Port 0 picks a free
    /// port. Returns the bound port; throws std::runtime_error on bind
    /// failure.
    int start(const std::string& host, int port);
    /// Blocks the calling thread serving requests until stop().
    void run_blocking(const std::string& host, int port, const std::function<void(int)>& on_bound = {});
    void stop();

    int port() const noexcept { return port_; }
    SimulatedApi& api() noexcept { return *api_; }
    const SimConfig& config() const noexcept { return cfg_; }

private:
    struct Impl;
    SimConfig cfg_;
    std::unique_ptr<SimulatedApi> api_;
    std::unique_ptr<Impl> impl_;
    std::thread thread_;
    int port_ = -1;
};

/// Starts a simulator on `host:port` in the background.
std::unique_ptr<SimHttpServer> serve_http(SimConfig cfg, const std::string& host, int port);

}  // namespace cacheaudit::sim
