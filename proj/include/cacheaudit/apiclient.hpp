// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

// Timed probes against LLM endpoints.
//
// A probe is one request with a single output token (or one embedding call).
// Client time runs from just before the request is written until the full
// response has been read; server time is whatever the provider reports in a
// header or body field, parsed through a ServerTimingRule.

#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cacheaudit/audit_config.hpp"
#include "cacheaudit/cachesim.hpp"
#include "cacheaudit/promptgen.hpp"
#include "cacheaudit/random.hpp"

namespace cacheaudit::client {

enum class ApiFlavor { ChatCompletion, Embedding, SimNative };

std::string to_string(ApiFlavor flavor);
ApiFlavor parse_flavor(std::string_view text);

enum class TimeUnit { Seconds, Milliseconds, Microseconds };

struct ServerTimingRule {
    std::string header;        // case-insensitive header name
    std::string json_pointer;  // alternative: field in the JSON body, e.g. "/usage/processing_ms"
    TimeUnit unit = TimeUnit::Milliseconds;
    /// ECMAScript regex whose first capture group is the number.
    std::string pattern = R"(^\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*$)";

    void validate() const;
};

TimeUnit parse_unit(std::string_view text);

struct ProviderSpec {
    std::string name;
    std::string base_url;  // scheme://host[:port]
    ApiFlavor api_flavor = ApiFlavor::ChatCompletion;
    std::string model_name;
    std::string path;  // empty: flavor default
    std::optional<ServerTimingRule> server_timing_rule;
    double request_timeout = 60.0;     // seconds
    double inter_request_delay = 0.1;  // seconds

    void validate() const;
    std::string request_path() const;
};

enum class IdentityLabel { Victim, Attacker };

struct Identity {
    IdentityLabel label = IdentityLabel::Attacker;
    std::string credential_env;  // name of the env var holding the API key
    std::string user_id;
    std::string org_id;
};

struct ProbeResult {
    double client_ttft = 0.0;
    std::optional<double> server_ttft;
    std::uint64_t payload_digest = 0;
    std::vector<double> embedding;
    int http_status = 200;
    double timestamp = 0.0;
    /// Reused prefix length when the endpoint exposes it (simulator debug).
    std::optional<std::size_t> debug_cached_tokens;
};

/// Base of every probe failure. A failed probe never yields a sample.
class ProbeError : public std::runtime_error {
public:
    ProbeError(const std::string& what, int attempts) : std::runtime_error(what), attempts_(attempts) {}
    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

/// Connection failure or timeout.
class NetworkError : public ProbeError {
public:
    using ProbeError::ProbeError;
};

/// Non-2xx answer other than rate limiting.
class ProviderError : public ProbeError {
public:
    ProviderError(int status, std::string body_excerpt, int attempts)
        : ProbeError("provider returned HTTP " + std::to_string(status) + ": " + body_excerpt, attempts),
          status_(status),
          body_excerpt_(std::move(body_excerpt)) {}
    int status() const noexcept { return status_; }
    const std::string& body_excerpt() const noexcept { return body_excerpt_; }

private:
    int status_;
    std::string body_excerpt_;
};

/// Rate limiting persisted past the retry cap.
class RateLimitError : public ProbeError {
public:
    using ProbeError::ProbeError;
};

/// Server timing field present but unreadable.
class ServerTimingParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Required credential env var is not set. The message names the variable,
/// never its value.
class CredentialError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Header names are stored lower-cased.
using HeaderMap = std::map<std::string, std::string>;

HeaderMap normalize_headers(const std::multimap<std::string, std::string>& raw);

/// Server-side duration in seconds; nullopt when the field is absent.
/// Throws ServerTimingParseError when it is present but does not parse.
std::optional<double> extract_server_time(const HeaderMap& headers, const ServerTimingRule& rule,
                                          std::string_view body = {});

struct RetryPolicy {
    int max_attempts = 3;
    double initial_backoff = 0.5;  // seconds, doubled per retry
};

/// Anything that can issue one timed probe.
class ProbeTransport {
public:
    virtual ~ProbeTransport() = default;

    virtual ProbeResult send_probe(const Identity& identity, const promptgen::TokenPrompt& prompt) = 0;
    virtual bool has_server_timing() const = 0;
    /// Throws CredentialError if an identity cannot be used.
    virtual void check_identity(const Identity& identity) const = 0;
    virtual ApiFlavor flavor() const = 0;
    virtual std::string describe() const = 0;
};

/// HTTP(S) probe client. Keeps one persistent connection per identity and
/// discards the first probe on each as a warm-up.
class HttpProbeClient : public ProbeTransport {
public:
    explicit HttpProbeClient(ProviderSpec spec, RetryPolicy retry = {}, std::uint64_t warmup_seed = 0x5eed);
    ~HttpProbeClient() override;

    ProbeResult send_probe(const Identity& identity, const promptgen::TokenPrompt& prompt) override;
    bool has_server_timing() const override { return spec_.server_timing_rule.has_value(); }
    void check_identity(const Identity& identity) const override;
    ApiFlavor flavor() const override { return spec_.api_flavor; }
    std::string describe() const override { return spec_.name + " (" + spec_.base_url + ")"; }

    const ProviderSpec& spec() const noexcept { return spec_; }

private:
    struct Connection;
    Connection& connection_for(const Identity& identity);
    ProbeResult send_once(Connection& conn, const promptgen::TokenPrompt& prompt, int attempt);

    ProviderSpec spec_;
    RetryPolicy retry_;
    Rng warmup_rng_;
    std::map<std::string, std::unique_ptr<Connection>> connections_;
};

/// Transit delay added on top of server time by the in-process client.
struct NetworkModel {
    double base = 0.01;   // seconds
    double jitter = 0.002;  // scale of the half-normal extra delay
};

/// Bypasses HTTP and talks to a SimulatedApi on a virtual clock, so runs are
/// deterministic given the seeds. Both timing sources are available: server
/// time is the synthetic ttft, client time adds simulated transit.
class InProcessSimClient : public ProbeTransport {
public:
    InProcessSimClient(sim::SimulatedApi& api, ApiFlavor flavor, std::uint64_t seed, NetworkModel net = {},
                       double inter_request_delay = 0.1);

    ProbeResult send_probe(const Identity& identity, const promptgen::TokenPrompt& prompt) override;
    bool has_server_timing() const override { return true; }
    void check_identity(const Identity& identity) const override;
    ApiFlavor flavor() const override { return flavor_; }
    std::string describe() const override { return "in-process simulator"; }

    double now() const noexcept { return clock_; }
    void advance(double seconds) noexcept { clock_ += seconds; }

private:
    sim::SimulatedApi& api_;
    ApiFlavor flavor_;
    Rng rng_;
    NetworkModel net_;
    double delay_;
    double clock_ = 0.0;
};

struct CostEstimate {
    std::uint64_t prompt_tokens = 0;
    double usd = 0.0;
};

/// Prompt tokens for one test: each hit trial sends v victim copies plus one
/// probe, each miss trial sends one prompt. `victim_requests` defaults to the
/// level-1 setting.
CostEstimate estimate_cost(const AuditConfig& config, double price_per_million_tokens,
                           std::optional<std::size_t> victim_requests = std::nullopt);

/// "33,750,000 tokens, $1.69"
std::string format_cost(const CostEstimate& cost);

}  // namespace cacheaudit::client
