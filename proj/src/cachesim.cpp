// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cacheaudit/cachesim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "cacheaudit/promptgen.hpp"

namespace cacheaudit::sim {

std::string to_string(CacheScope scope) {
    switch (scope) {
        case CacheScope::Disabled: return "disabled";
        case CacheScope::PerUser: return "per-user";
        case CacheScope::PerOrg: return "per-org";
        case CacheScope::Global: return "global";
    }
    return "unknown";
}

CacheScope parse_scope(std::string_view text) {
    std::string s(text);
    std::replace(s.begin(), s.end(), '_', '-');
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "disabled" || s == "none") return CacheScope::Disabled;
    if (s == "per-user" || s == "user") return CacheScope::PerUser;
    if (s == "per-org" || s == "org") return CacheScope::PerOrg;
    if (s == "global") return CacheScope::Global;
    throw std::invalid_argument("unknown cache scope '" + std::string(text) + "'");
}

std::string to_string(NoiseKind kind) {
    return kind == NoiseKind::LogNormal ? "lognormal" : "gaussian";
}

NoiseKind parse_noise_kind(std::string_view text) {
    if (text == "gaussian" || text == "truncated-gaussian") return NoiseKind::TruncatedGaussian;
    if (text == "lognormal") return NoiseKind::LogNormal;
    throw std::invalid_argument("unknown noise kind '" + std::string(text) + "'");
}

void CachePolicy::validate() const {
    if (num_servers < 1) throw std::invalid_argument("num_servers must be >= 1");
    if (!(ttl > 0.0)) throw std::invalid_argument("ttl must be > 0");
    if (min_hit_prefix < 1) throw std::invalid_argument("min_hit_prefix must be >= 1");
}

void LatencyModel::validate() const {
    if (base < 0.0 || per_token < 0.0 || noise_sigma < 0.0) {
        throw std::invalid_argument("latency parameters must be non-negative");
    }
}

double LatencyModel::sample(std::size_t uncached_tokens, Rng& rng) const {
    const double mean = base + per_token * static_cast<double>(uncached_tokens);
    if (noise_sigma == 0.0) return mean > 0.0 ? mean : 1e-6;

    // Lognormal noise is a centred, rescaled exp(0.5 Z): right-skewed with
    // standard deviation noise_sigma.
    constexpr double kShape = 0.5;
    const double ln_mean = std::exp(kShape * kShape / 2.0);
    const double ln_sd = std::sqrt((std::exp(kShape * kShape) - 1.0) * std::exp(kShape * kShape));
    std::normal_distribution<double> z(0.0, 1.0);
    for (int attempt = 0; attempt < 64; ++attempt) {
        double noise = 0.0;
        if (noise_kind == NoiseKind::TruncatedGaussian) {
            noise = noise_sigma * z(rng);
        } else {
            noise = noise_sigma * (std::exp(kShape * z(rng)) - ln_mean) / ln_sd;
        }
        const double t = mean + noise;
        if (t > 0.0) return t;
    }
    return std::max(mean, 1e-6);
}

std::optional<std::string> scope_key(const CachePolicy& policy, std::string_view user_id, std::string_view org_id) {
    switch (policy.scope) {
        case CacheScope::Disabled: return std::nullopt;
        case CacheScope::PerUser: return std::string(user_id);
        case CacheScope::PerOrg: return std::string(org_id);
        case CacheScope::Global: return std::string("*");
    }
    return std::nullopt;
}

std::size_t route(Rng& rng, std::size_t num_servers) {
    if (num_servers <= 1) return 0;
    std::uniform_int_distribution<std::size_t> pick(0, num_servers - 1);
    return pick(rng);
}

// ---------------------------------------------------------------------------
// PrefixTree

struct PrefixTree::Node {
    std::string edge;
    double stamp = 0.0;
    std::vector<std::unique_ptr<Node>> children;

    std::vector<std::unique_ptr<Node>>::iterator find(char c) {
        return std::find_if(children.begin(), children.end(), [c](const auto& ch) { return ch->edge[0] == c; });
    }
};

namespace {

bool expired(double stamp, double now, double ttl) { return now - stamp > ttl; }

std::size_t count_nodes(const auto& node) {
    std::size_t n = 1;
    for (const auto& c : node->children) n += count_nodes(c);
    return n;
}

}  // namespace

PrefixTree::PrefixTree() : root_(std::make_unique<Node>()) {}
PrefixTree::~PrefixTree() = default;
PrefixTree::PrefixTree(PrefixTree&&) noexcept = default;
PrefixTree& PrefixTree::operator=(PrefixTree&&) noexcept = default;

std::size_t PrefixTree::longest_prefix(std::string_view tokens, double now, double ttl) {
    Node* node = root_.get();
    std::size_t matched = 0;
    while (matched < tokens.size()) {
        auto it = node->find(tokens[matched]);
        if (it == node->children.end()) break;
        if (expired((*it)->stamp, now, ttl)) {
            node->children.erase(it);
            break;
        }
        const std::string& edge = (*it)->edge;
        const std::size_t k = promptgen::common_prefix_length(edge, tokens.substr(matched));
        matched += k;
        if (k < edge.size()) break;
        node = it->get();
    }
    return matched;
}

void PrefixTree::insert(std::string_view tokens, double now) {
    Node* node = root_.get();
    std::size_t pos = 0;
    while (pos < tokens.size()) {
        auto it = node->find(tokens[pos]);
        if (it == node->children.end()) {
            auto leaf = std::make_unique<Node>();
            leaf->edge = std::string(tokens.substr(pos));
            leaf->stamp = now;
            node->children.push_back(std::move(leaf));
            return;
        }
        Node* child = it->get();
        const std::size_t k = promptgen::common_prefix_length(child->edge, tokens.substr(pos));
        if (k < child->edge.size()) {
            // Split the edge: a new interior node takes the shared part.
            auto mid = std::make_unique<Node>();
            mid->edge = child->edge.substr(0, k);
            mid->stamp = child->stamp;
            std::unique_ptr<Node> tail = std::move(*it);
            tail->edge.erase(0, k);
            mid->children.push_back(std::move(tail));
            *it = std::move(mid);
            child = it->get();
        }
        child->stamp = std::max(child->stamp, now);
        pos += k;
        node = child;
    }
}

std::size_t PrefixTree::sweep(double now, double ttl) {
    std::function<std::size_t(Node&)> prune = [&](Node& node) -> std::size_t {
        std::size_t removed = 0;
        auto& kids = node.children;
        for (auto it = kids.begin(); it != kids.end();) {
            if (expired((*it)->stamp, now, ttl)) {
                removed += count_nodes(*it);
                it = kids.erase(it);
            } else {
                removed += prune(**it);
                ++it;
            }
        }
        return removed;
    };
    return prune(*root_);
}

std::size_t PrefixTree::node_count() const { return count_nodes(root_) - 1; }

bool PrefixTree::empty() const { return root_->children.empty(); }

// ---------------------------------------------------------------------------
// Payloads

namespace {

std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

Payload make_payload(std::string_view tokens, RequestKind kind, std::size_t embedding_dim) {
    Payload p;
    p.digest = fnv1a(tokens);
    std::uint64_t state = p.digest;
    if (kind == RequestKind::Completion) {
        p.first_token = std::string(1, promptgen::kAlphabet[splitmix64(state) % promptgen::kAlphabet.size()]);
    } else {
        p.embedding.resize(embedding_dim);
        double norm = 0.0;
        for (auto& x : p.embedding) {
            x = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53 - 0.5;
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm > 0.0) {
            for (auto& x : p.embedding) x /= norm;
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// SimulatedApi

SimulatedApi::SimulatedApi(CachePolicy policy, LatencyModel latency, std::uint64_t seed, std::size_t embedding_dim)
    : policy_(policy), latency_(latency), embedding_dim_(embedding_dim), rng_(seed) {
    policy_.validate();
    latency_.validate();
    servers_.reserve(policy_.num_servers);
    for (std::size_t i = 0; i < policy_.num_servers; ++i) servers_.push_back(std::make_unique<Server>());
}

SimResponse SimulatedApi::handle_request(const SimRequest& req, double now) {
    std::lock_guard lock(rng_mu_);
    return handle_request(req, now, rng_);
}

SimResponse SimulatedApi::handle_request(const SimRequest& req, double now, Rng& rng) {
    if (req.user_id.empty() || req.org_id.empty()) throw RequestError("request identity must be non-empty");
    if (req.max_tokens < 1) throw RequestError("max_tokens must be >= 1");
    std::string tokens;
    try {
        tokens = promptgen::TokenPrompt::parse(req.prompt_text).tokens();
    } catch (const std::invalid_argument& e) {
        throw RequestError(e.what());
    }

    SimResponse resp;
    resp.prompt_tokens = tokens.size();
    resp.server_index = route(rng, policy_.num_servers);

    if (auto key = scope_key(policy_, req.user_id, req.org_id)) {
        Server& server = *servers_[resp.server_index];
        std::lock_guard lock(server.mu);
        PrefixTree& tree = server.partitions[*key];
        const std::size_t matched = tree.longest_prefix(tokens, now, policy_.ttl);
        resp.hit = matched >= policy_.min_hit_prefix;
        resp.cached_prefix_tokens = resp.hit ? matched : 0;
        tree.insert(tokens, now);
    }

    resp.ttft = latency_.sample(tokens.size() - resp.cached_prefix_tokens, rng);
    resp.payload = make_payload(tokens, req.kind, embedding_dim_);
    return resp;
}

std::size_t SimulatedApi::lookup_longest_prefix(std::size_t server, std::string_view user_id,
                                                std::string_view org_id, std::string_view tokens, double now) {
    if (tokens.empty()) throw std::invalid_argument("lookup needs a non-empty token sequence");
    auto key = scope_key(policy_, user_id, org_id);
    if (!key) return 0;
    Server& s = *servers_.at(server);
    std::lock_guard lock(s.mu);
    auto it = s.partitions.find(*key);
    if (it == s.partitions.end()) return 0;
    return it->second.longest_prefix(tokens, now, policy_.ttl);
}

void SimulatedApi::sweep(double now) {
    for (auto& server : servers_) {
        std::lock_guard lock(server->mu);
        for (auto it = server->partitions.begin(); it != server->partitions.end();) {
            it->second.sweep(now, policy_.ttl);
            if (it->second.empty()) it = server->partitions.erase(it); else ++it;
        }
    }
}

}  // namespace cacheaudit::sim
