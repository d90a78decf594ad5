// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cacheaudit/apiclient.hpp"
#include "cacheaudit/sim_server.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace cacheaudit::client {

using nlohmann::json;

std::string to_string(ApiFlavor flavor) {
    switch (flavor) {
        case ApiFlavor::ChatCompletion: return "chat";
        case ApiFlavor::Embedding: return "embedding";
        case ApiFlavor::SimNative: return "sim-native";
    }
    return "unknown";
}

ApiFlavor parse_flavor(std::string_view text) {
    if (text == "chat" || text == "chat-completion" || text == "ChatCompletion") return ApiFlavor::ChatCompletion;
    if (text == "embedding" || text == "embeddings" || text == "Embedding") return ApiFlavor::Embedding;
    if (text == "sim-native" || text == "sim" || text == "SimNative") return ApiFlavor::SimNative;
    throw std::invalid_argument("unknown API flavor '" + std::string(text) + "'");
}

TimeUnit parse_unit(std::string_view text) {
    if (text == "s") return TimeUnit::Seconds;
    if (text == "ms") return TimeUnit::Milliseconds;
    if (text == "us") return TimeUnit::Microseconds;
    throw std::invalid_argument("unknown time unit '" + std::string(text) + "' (expected s, ms or us)");
}

void ServerTimingRule::validate() const {
    if (header.empty() == json_pointer.empty()) {
        throw std::invalid_argument("server timing rule needs exactly one of header or json_pointer");
    }
    try {
        std::regex re(pattern);
        if (re.mark_count() < 1) throw std::invalid_argument("server timing pattern needs a capture group");
    } catch (const std::regex_error& e) {
        throw std::invalid_argument(std::string("bad server timing pattern: ") + e.what());
    }
}

void ProviderSpec::validate() const {
    const bool scheme_ok = base_url.rfind("http://", 0) == 0 || base_url.rfind("https://", 0) == 0;
    const auto host_start = base_url.find("://");
    if (!scheme_ok || host_start == std::string::npos || host_start + 3 >= base_url.size()) {
        throw std::invalid_argument("base_url must look like scheme://host[:port], got '" + base_url + "'");
    }
    if (!(request_timeout > 0.0)) throw std::invalid_argument("request_timeout must be > 0");
    if (inter_request_delay < 0.0) throw std::invalid_argument("inter_request_delay must be >= 0");
    if (server_timing_rule) server_timing_rule->validate();
}

std::string ProviderSpec::request_path() const {
    if (!path.empty()) return path;
    switch (api_flavor) {
        case ApiFlavor::ChatCompletion: return "/v1/chat/completions";
        case ApiFlavor::Embedding: return "/v1/embeddings";
        case ApiFlavor::SimNative: return "/v1/sim/completions";
    }
    return "/";
}

HeaderMap normalize_headers(const std::multimap<std::string, std::string>& raw) {
    HeaderMap out;
    for (const auto& [k, v] : raw) {
        std::string key = k;
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
        out.emplace(std::move(key), v);
    }
    return out;
}

std::optional<double> extract_server_time(const HeaderMap& headers, const ServerTimingRule& rule,
                                          std::string_view body) {
    std::string raw;
    if (!rule.header.empty()) {
        std::string key = rule.header;
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
        auto it = headers.find(key);
        if (it == headers.end()) return std::nullopt;
        raw = it->second;
    } else {
        json doc = json::parse(body, nullptr, false);
        if (doc.is_discarded()) return std::nullopt;
        const json::json_pointer ptr(rule.json_pointer);
        if (!doc.contains(ptr)) return std::nullopt;
        const json& field = doc.at(ptr);
        raw = field.is_string() ? field.get<std::string>() : field.dump();
    }

    std::smatch m;
    const std::regex re(rule.pattern);
    if (!std::regex_search(raw, m, re) || m.size() < 2) {
        throw ServerTimingParseError("server timing value '" + raw + "' does not match the configured pattern");
    }
    double value = 0.0;
    try {
        std::size_t used = 0;
        value = std::stod(m[1].str(), &used);
        if (used != static_cast<std::size_t>(m[1].length())) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
        throw ServerTimingParseError("server timing value '" + raw + "' is not a number");
    }
    if (!std::isfinite(value) || value < 0.0) {
        throw ServerTimingParseError("server timing value '" + raw + "' is not a non-negative duration");
    }
    switch (rule.unit) {
        case TimeUnit::Seconds: return value;
        case TimeUnit::Milliseconds: return value / 1e3;
        case TimeUnit::Microseconds: return value / 1e6;
    }
    return value;
}

// ---------------------------------------------------------------------------
// HttpProbeClient

namespace {

std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

double wall_clock_seconds() {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

void sleep_seconds(double s) {
    if (s > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
}

std::string excerpt(const std::string& body) {
    constexpr std::size_t kMax = 200;
    return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

}  // namespace

struct HttpProbeClient::Connection {
    std::unique_ptr<httplib::Client> http;
    std::string api_key;
    bool warmed = false;
};

HttpProbeClient::HttpProbeClient(ProviderSpec spec, RetryPolicy retry, std::uint64_t warmup_seed)
    : spec_(std::move(spec)), retry_(retry), warmup_rng_(warmup_seed) {
    spec_.validate();
}

HttpProbeClient::~HttpProbeClient() = default;

void HttpProbeClient::check_identity(const Identity& identity) const {
    if (identity.credential_env.empty()) {
        throw CredentialError("identity for user '" + identity.user_id + "' names no credential variable");
    }
    const char* value = std::getenv(identity.credential_env.c_str());
    if (value == nullptr || *value == '\0') {
        throw CredentialError("environment variable " + identity.credential_env + " is not set");
    }
}

HttpProbeClient::Connection& HttpProbeClient::connection_for(const Identity& identity) {
    auto it = connections_.find(identity.credential_env);
    if (it != connections_.end()) return *it->second;

    check_identity(identity);
    auto conn = std::make_unique<Connection>();
    conn->api_key = std::getenv(identity.credential_env.c_str());
    conn->http = std::make_unique<httplib::Client>(spec_.base_url);
    const auto secs = static_cast<time_t>(spec_.request_timeout);
    const auto usecs = static_cast<time_t>((spec_.request_timeout - static_cast<double>(secs)) * 1e6);
    conn->http->set_connection_timeout(secs, usecs);
    conn->http->set_read_timeout(secs, usecs);
    conn->http->set_write_timeout(secs, usecs);
    conn->http->set_keep_alive(true);
    // Nagle plus delayed ACKs adds ~40 ms stalls that depend on traffic history.
    conn->http->set_tcp_nodelay(true);
    return *connections_.emplace(identity.credential_env, std::move(conn)).first->second;
}

ProbeResult HttpProbeClient::send_once(Connection& conn, const promptgen::TokenPrompt& prompt, int attempt) {
    json body;
    switch (spec_.api_flavor) {
        case ApiFlavor::ChatCompletion:
            body = {{"model", spec_.model_name},
                    {"messages", json::array({{{"role", "user"}, {"content", prompt.text()}}})},
                    {"max_tokens", 1}};
            break;
        case ApiFlavor::Embedding:
            body = {{"model", spec_.model_name}, {"input", prompt.text()}};
            break;
        case ApiFlavor::SimNative:
            body = {{"model", spec_.model_name}, {"input", prompt.text()}, {"max_tokens", 1}};
            break;
    }
    const std::string payload = body.dump();
    const httplib::Headers headers{{"Authorization", "Bearer " + conn.api_key}};
    const std::string path = spec_.request_path();

    const double timestamp = wall_clock_seconds();
    const auto start = std::chrono::steady_clock::now();
    auto res = conn.http->Post(path, headers, payload, "application/json");
    const auto end = std::chrono::steady_clock::now();

    if (!res) throw NetworkError("request failed: " + httplib::to_string(res.error()), attempt);
    if (res->status == 429) throw RateLimitError("rate limited (HTTP 429)", attempt);
    if (res->status < 200 || res->status >= 300) throw ProviderError(res->status, excerpt(res->body), attempt);

    ProbeResult out;
    out.client_ttft = std::chrono::duration<double>(end - start).count();
    out.http_status = res->status;
    out.timestamp = timestamp;

    const HeaderMap hdrs = normalize_headers({res->headers.begin(), res->headers.end()});
    if (spec_.server_timing_rule) {
        out.server_ttft = extract_server_time(hdrs, *spec_.server_timing_rule, res->body);
        if (out.server_ttft && *out.server_ttft > out.client_ttft) {
            throw ServerTimingParseError("reported server time exceeds the measured round trip; check the rule's unit");
        }
    }
    if (auto it = hdrs.find(sim::kCachedTokensHeader); it != hdrs.end()) {
        out.debug_cached_tokens = static_cast<std::size_t>(std::stoull(it->second));
    }

    json doc = json::parse(res->body, nullptr, false);
    std::string digest_src = res->body;
    if (!doc.is_discarded()) {
        if (spec_.api_flavor == ApiFlavor::Embedding && doc.contains("data") && !doc["data"].empty()) {
            out.embedding = doc["data"][0].value("embedding", std::vector<double>{});
            digest_src.assign(reinterpret_cast<const char*>(out.embedding.data()),
                              out.embedding.size() * sizeof(double));
        } else if (doc.contains("choices") && !doc["choices"].empty()) {
            digest_src = doc["choices"][0]["message"].value("content", std::string{});
        } else if (doc.contains("payload") && doc["payload"].is_string()) {
            digest_src = doc["payload"].get<std::string>();
        }
    }
    out.payload_digest = fnv1a(digest_src);
    return out;
}

ProbeResult HttpProbeClient::send_probe(const Identity& identity, const promptgen::TokenPrompt& prompt) {
    Connection& conn = connection_for(identity);

    auto with_retries = [&](const promptgen::TokenPrompt& p) {
        double backoff = retry_.initial_backoff;
        for (int attempt = 1;; ++attempt) {
            try {
                return send_once(conn, p, attempt);
            } catch (const NetworkError& e) {
                if (attempt >= retry_.max_attempts) throw NetworkError(e.what(), attempt);
            } catch (const RateLimitError& e) {
                if (attempt >= retry_.max_attempts) throw RateLimitError(e.what(), attempt);
            }
            sleep_seconds(backoff);
            backoff *= 2.0;
        }
    };

    if (!conn.warmed) {
        // The warm-up uses an unrelated random prompt so it cannot seed the cache.
        with_retries(promptgen::sample_prompt(prompt.size(), warmup_rng_));
        conn.warmed = true;
        sleep_seconds(spec_.inter_request_delay);
    }
    ProbeResult out = with_retries(prompt);
    sleep_seconds(spec_.inter_request_delay);
    return out;
}

// ---------------------------------------------------------------------------
// InProcessSimClient

InProcessSimClient::InProcessSimClient(sim::SimulatedApi& api, ApiFlavor flavor, std::uint64_t seed, NetworkModel net,
                                       double inter_request_delay)
    : api_(api), flavor_(flavor), rng_(seed), net_(net), delay_(inter_request_delay) {}

void InProcessSimClient::check_identity(const Identity& identity) const {
    if (identity.user_id.empty() || identity.org_id.empty()) {
        throw CredentialError("in-process identities need user_id and org_id");
    }
}

ProbeResult InProcessSimClient::send_probe(const Identity& identity, const promptgen::TokenPrompt& prompt) {
    check_identity(identity);
    sim::SimRequest req;
    req.user_id = identity.user_id;
    req.org_id = identity.org_id;
    req.prompt_text = prompt.text();
    req.max_tokens = 1;
    req.kind = flavor_ == ApiFlavor::Embedding ? sim::RequestKind::Embedding : sim::RequestKind::Completion;

    sim::SimResponse resp;
    try {
        resp = api_.handle_request(req, clock_);
    } catch (const sim::RequestError& e) {
        throw ProviderError(400, e.what(), 1);
    }

    std::normal_distribution<double> z(0.0, 1.0);
    const double transit = net_.base + std::abs(net_.jitter * z(rng_));

    ProbeResult out;
    out.server_ttft = resp.ttft;
    out.client_ttft = resp.ttft + transit;
    out.timestamp = clock_;
    out.payload_digest = resp.payload.digest;
    out.embedding = resp.payload.embedding;
    out.debug_cached_tokens = resp.cached_prefix_tokens;
    clock_ += out.client_ttft + delay_;
    return out;
}

// ---------------------------------------------------------------------------
// Cost

CostEstimate estimate_cost(const AuditConfig& config, double price_per_million_tokens,
                           std::optional<std::size_t> victim_requests) {
    if (price_per_million_tokens < 0.0) throw std::invalid_argument("price must be >= 0");
    const std::uint64_t v = victim_requests.value_or(config.level1_victim_requests);
    CostEstimate c;
    c.prompt_tokens = static_cast<std::uint64_t>(config.num_samples) * config.prompt_length * (v + 2);
    c.usd = static_cast<double>(c.prompt_tokens) / 1e6 * price_per_million_tokens;
    return c;
}

std::string format_cost(const CostEstimate& cost) {
    std::string digits = std::to_string(cost.prompt_tokens);
    std::string grouped;
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (i != 0 && (digits.size() - i) % 3 == 0) grouped.push_back(',');
        grouped.push_back(digits[i]);
    }
    const long long cents = std::llround(cost.usd * 100.0);
    char usd[64];
    std::snprintf(usd, sizeof usd, "$%lld.%02lld", cents / 100, cents % 100);
    return grouped + " tokens, " + usd;
}

}  // namespace cacheaudit::client
