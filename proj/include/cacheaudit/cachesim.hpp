// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

// Simulated LLM API with prefix-based prompt caching.
//
// Every simulated server owns one prefix store per cache partition. The
// partition a request lands in is chosen by the sharing scope (per user, per
// organization, or one global partition). A request is a hit when the longest
// unexpired cached prefix of its tokens reaches `min_hit_prefix`; hits skip
// the per-token processing cost for the matched prefix.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cacheaudit/random.hpp"

namespace cacheaudit::sim {

enum class CacheScope { Disabled, PerUser, PerOrg, Global };

std::string to_string(CacheScope scope);
/// Accepts "disabled", "per-user", "per-org", "global" (and '_' spellings).
CacheScope parse_scope(std::string_view text);

struct CachePolicy {
    CacheScope scope = CacheScope::Global;
    std::size_t num_servers = 1;
    double ttl = 300.0;  // seconds
    std::size_t min_hit_prefix = 16;

    void validate() const;
};

enum class NoiseKind { TruncatedGaussian, LogNormal };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view text);

struct LatencyModel {
    double base = 0.02;        // seconds per request
    double per_token = 1e-5;   // seconds per uncached prompt token
    double noise_sigma = 0.005;
    NoiseKind noise_kind = NoiseKind::TruncatedGaussian;

    void validate() const;
    /// Draws a ttft for `uncached_tokens` uncached prompt tokens; always > 0.
    double sample(std::size_t uncached_tokens, Rng& rng) const;
};

enum class RequestKind { Completion, Embedding };

struct SimRequest {
    std::string user_id;
    std::string org_id;
    std::string prompt_text;
    std::size_t max_tokens = 1;
    RequestKind kind = RequestKind::Completion;
};

struct Payload {
    std::string first_token;          // completions
    std::vector<double> embedding;    // embeddings
    std::uint64_t digest = 0;
};

struct SimResponse {
    double ttft = 0.0;
    std::size_t cached_prefix_tokens = 0;  // effective reuse, 0 on a miss
    std::size_t prompt_tokens = 0;
    std::size_t server_index = 0;
    bool hit = false;
    Payload payload;
};

/// Raised for requests the simulator rejects (bad prompt or identity).
class RequestError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Cache partition for a request, or nullopt when caching is disabled.
std::optional<std::string> scope_key(const CachePolicy& policy, std::string_view user_id,
                                     std::string_view org_id);

/// Uniform server choice in [0, num_servers).
std::size_t route(Rng& rng, std::size_t num_servers);

/// Compressed token trie. Each node carries the time of the latest insert
/// that passed through it, so a node is never fresher than its parent and an
/// expired node implies an expired subtree.
class PrefixTree {
public:
    PrefixTree();
    ~PrefixTree();
    PrefixTree(PrefixTree&&) noexcept;
    PrefixTree& operator=(PrefixTree&&) noexcept;

    /// Longest prefix of `tokens` covered by an entry inserted no more than
    /// `ttl` seconds before `now`. Prunes expired branches it meets.
    std::size_t longest_prefix(std::string_view tokens, double now, double ttl);
    void insert(std::string_view tokens, double now);
    /// Drops every expired branch; returns the number of nodes removed.
    std::size_t sweep(double now, double ttl);
    std::size_t node_count() const;
    bool empty() const;

private:
    struct Node;
    std::unique_ptr<Node> root_;
};

/// Deterministic response content for a prompt. Any change to the token
/// sequence changes the digest.
Payload make_payload(std::string_view tokens, RequestKind kind, std::size_t embedding_dim);

/// Thread-safe simulated service. Each server's partitions sit behind their
/// own mutex; routing and noise draws share the service random stream.
class SimulatedApi {
public:
    SimulatedApi(CachePolicy policy, LatencyModel latency, std::uint64_t seed, std::size_t embedding_dim = 8);

    /// Throws RequestError for malformed prompts or identities.
    SimResponse handle_request(const SimRequest& req, double now);
    /// Same, drawing routing and noise from the caller's stream.
    SimResponse handle_request(const SimRequest& req, double now, Rng& rng);

    /// Longest cached prefix on one server for the partition of (user, org).
    std::size_t lookup_longest_prefix(std::size_t server, std::string_view user_id, std::string_view org_id,
                                      std::string_view tokens, double now);

    void sweep(double now);

    const CachePolicy& policy() const noexcept { return policy_; }
    const LatencyModel& latency() const noexcept { return latency_; }

private:
    struct Server {
        std::mutex mu;
        std::unordered_map<std::string, PrefixTree> partitions;
    };

    CachePolicy policy_;
    LatencyModel latency_;
    std::size_t embedding_dim_;
    std::mutex rng_mu_;
    Rng rng_;
    std::vector<std::unique_ptr<Server>> servers_;
};

}  // namespace cacheaudit::sim
