// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

// Four-level prompt caching audit.
//
// Level 1 sends the exact prompt back (same user); levels 2-4 send a prompt
// sharing a fixed prefix with the victim's, from the same user, a different
// user in the same organization, and a user in a different organization.
// Each (level, victim request count) pair collects num_samples timings from
// the hit procedure and as many from the miss procedure in a shuffled order,
// then runs a one-sided KS test per timing source against a Bonferroni
// threshold. A level is attempted only after the previous one detected
// caching.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cacheaudit/apiclient.hpp"
#include "cacheaudit/audit_config.hpp"
#include "cacheaudit/cachesim.hpp"
#include "cacheaudit/random.hpp"
#include "cacheaudit/stats.hpp"

namespace cacheaudit::audit {

using stats::Procedure;

enum class TimingSource { Client, Server };

std::string to_string(TimingSource s);
TimingSource parse_source(std::string_view text);
std::string to_string(Procedure p);
Procedure parse_procedure(std::string_view text);

struct TimingSample {
    Procedure procedure = Procedure::MissProc;
    double client_ttft = 0.0;
    std::optional<double> server_ttft;
    std::size_t trial_index = 0;
    std::size_t victim_requests_used = 0;
    int level = 0;
    double timestamp = 0.0;
    std::optional<std::size_t> debug_cached_tokens;  // not persisted

    std::optional<double> duration(TimingSource s) const {
        return s == TimingSource::Client ? std::optional<double>(client_ttft) : server_ttft;
    }
};

enum class IdentityRelation { SameUser, SameOrgDifferentUser, DifferentOrg };

struct LevelSpec {
    int level = 1;
    double prefix_fraction = 1.0;
    IdentityRelation relation = IdentityRelation::SameUser;
};

/// Level 1: exact prompt, same user. 2: shared prefix, same user.
/// 3: shared prefix, same org. 4: shared prefix, different org.
LevelSpec level_spec(int level, const AuditConfig& config);

struct AuditIdentities {
    client::Identity attacker;
    std::optional<client::Identity> same_org_victim;   // level 3
    std::optional<client::Identity> other_org_victim;  // level 4
};

/// Victim for a level, or nullopt when the required identity is missing.
std::optional<client::Identity> victim_for(const LevelSpec& spec, const AuditIdentities& ids);

struct TrialContext {
    int level = 0;
    std::size_t victim_requests = 0;
    std::size_t trial_index = 0;
};

/// Attacker sends one fresh random prompt.
TimingSample run_miss_trial(client::ProbeTransport& transport, const client::Identity& attacker,
                            const AuditConfig& config, Rng& rng, const TrialContext& ctx);

/// Victim sends the base prompt v times back to back (untimed), then the
/// attacker sends the probe prompt once.
TimingSample run_hit_trial(client::ProbeTransport& transport, const client::Identity& victim,
                           const client::Identity& attacker, const LevelSpec& spec, std::size_t victim_requests,
                           const AuditConfig& config, Rng& rng, const TrialContext& ctx);

struct SourceTest {
    TimingSource source = TimingSource::Client;
    stats::KsResult ks;
    double threshold = 0.0;
    bool significant = false;
    double average_precision = 0.0;
};

struct LadderStep {
    std::size_t victim_requests = 0;
    std::vector<SourceTest> tests;

    bool significant() const;
};

enum class LevelStatus { Significant, NotSignificant, Untested, NotReached, Aborted };

std::string to_string(LevelStatus s);
LevelStatus parse_level_status(std::string_view text);

struct LevelReport {
    int level = 0;
    double prefix_fraction = 1.0;
    LevelStatus status = LevelStatus::NotReached;
    std::vector<LadderStep> steps;
    std::optional<std::size_t> first_significant_v;
};

enum class SharingLevel { NoCachingDetected, PerUserOnly, PerOrg, Global };

/// "none", "per-user", "per-org", "global"
std::string to_string(SharingLevel s);
SharingLevel parse_sharing_level(std::string_view text);

/// Pure function of the per-level statuses (index 0 = level 1).
SharingLevel classify(const std::array<LevelStatus, 4>& statuses);

struct ProviderInfo {
    std::string name;
    std::string flavor;
    std::string model;
    std::string base_url;
};

struct AuditReport {
    std::string run_id;
    ProviderInfo provider;
    AuditConfig config;
    std::vector<TimingSource> sources;
    std::array<LevelReport, 4> levels;
    SharingLevel classification = SharingLevel::NoCachingDetected;
    bool partial = false;
    std::string abort_reason;
    std::optional<bool> suffix_changes_output;
    std::vector<TimingSample> samples;  // persisted to CSV, not JSON
};

/// Raised when a trial keeps failing after the resample budget; the samples
/// collected so far remain with the caller.
class PartialDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised before any probe when the setup cannot produce a valid test.
class ConfigurationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Timing sources the transport offers, client first.
std::vector<TimingSource> available_sources(const client::ProbeTransport& transport);

/// KS tests and AP for one (level, v) sample set. Sources missing from any
/// sample are skipped.
std::vector<SourceTest> evaluate_step(const std::vector<TimingSample>& samples, int level, std::size_t victim_requests,
                                      const std::vector<TimingSource>& sources, double threshold);

/// Collects and tests one (level, v) pair. Appends every sample to `sink`
/// as it is taken.
LadderStep run_step(client::ProbeTransport& transport, const AuditIdentities& ids, const LevelSpec& spec,
                    std::size_t victim_requests, std::size_t n_settings, const AuditConfig& config,
                    const std::vector<TimingSource>& sources, Rng& prompt_rng, std::vector<TimingSample>& sink);

/// Walks the victim-request ladder for one level, stopping at the first
/// significant setting.
LevelReport run_level(client::ProbeTransport& transport, const AuditIdentities& ids, const LevelSpec& spec,
                      const AuditConfig& config, const std::vector<TimingSource>& sources, Rng& prompt_rng,
                      std::vector<TimingSample>& sink);

AuditReport run_audit(client::ProbeTransport& transport, const AuditIdentities& ids, const AuditConfig& config);

/// Sends one prefix-sharing pair and reports whether the payload changed
/// with the suffix.
bool probe_suffix_sensitivity(client::ProbeTransport& transport, const client::Identity& who,
                              const AuditConfig& config, Rng& rng);

/// Standard identities used against the in-process simulator.
AuditIdentities simulator_identities();

// ---------------------------------------------------------------------------
// Ablations over the simulator

enum class AblationKind { PromptLength, PrefixFraction };

AblationKind parse_ablation(std::string_view text);

struct AblationSettings {
    AblationKind kind = AblationKind::PromptLength;
    std::vector<double> values;
    sim::CachePolicy policy;          // defaults: global, one server
    sim::LatencyModel latency;
    std::size_t num_samples = 250;
    std::size_t prompt_length = 1000;  // fixed when sweeping the fraction
    double prefix_fraction = 0.95;     // fixed when sweeping the length
    std::size_t victim_requests = 1;
    std::uint64_t seed = 0;
};

struct AblationPoint {
    double value = 0.0;
    double average_precision = 0.0;
    double p_value = 1.0;
    double statistic = 0.0;
};

/// One hit/miss sample set per value on a fresh simulator; AP and p-value use
/// server timing.
std::vector<AblationPoint> run_ablation(const AblationSettings& settings);

}  // namespace cacheaudit::audit
