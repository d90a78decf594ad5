// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cacheaudit/audit.hpp"

#include <algorithm>

#include "cacheaudit/promptgen.hpp"

namespace cacheaudit {

void AuditConfig::validate() const {
    if (prompt_length < 1) throw std::invalid_argument("prompt_length must be >= 1");
    if (num_samples < 2) throw std::invalid_argument("num_samples must be >= 2");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    for (double f : {prefix_fraction_exact, prefix_fraction_prefix}) {
        if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("prefix fractions must lie in (0, 1]");
    }
    if (victim_request_ladder.empty()) throw std::invalid_argument("victim request ladder must be non-empty");
    for (std::size_t i = 0; i < victim_request_ladder.size(); ++i) {
        if (victim_request_ladder[i] < 1) throw std::invalid_argument("victim request counts must be >= 1");
        if (i > 0 && victim_request_ladder[i] <= victim_request_ladder[i - 1]) {
            throw std::invalid_argument("victim request ladder must be strictly ascending");
        }
    }
    if (level1_victim_requests < 1) throw std::invalid_argument("level1_victim_requests must be >= 1");
    if (level_max < 1 || level_max > 4) throw std::invalid_argument("level_max must be in 1..4");
}

}  // namespace cacheaudit

namespace cacheaudit::audit {

std::string to_string(TimingSource s) { return s == TimingSource::Client ? "client" : "server"; }

TimingSource parse_source(std::string_view text) {
    if (text == "client") return TimingSource::Client;
    if (text == "server") return TimingSource::Server;
    throw std::invalid_argument("unknown timing source '" + std::string(text) + "'");
}

std::string to_string(Procedure p) { return p == Procedure::HitProc ? "hit" : "miss"; }

Procedure parse_procedure(std::string_view text) {
    if (text == "hit") return Procedure::HitProc;
    if (text == "miss") return Procedure::MissProc;
    throw std::invalid_argument("unknown procedure '" + std::string(text) + "'");
}

std::string to_string(LevelStatus s) {
    switch (s) {
        case LevelStatus::Significant: return "significant";
        case LevelStatus::NotSignificant: return "not-significant";
        case LevelStatus::Untested: return "untested";
        case LevelStatus::NotReached: return "not-reached";
        case LevelStatus::Aborted: return "aborted";
    }
    return "unknown";
}

LevelStatus parse_level_status(std::string_view text) {
    for (auto s : {LevelStatus::Significant, LevelStatus::NotSignificant, LevelStatus::Untested,
                   LevelStatus::NotReached, LevelStatus::Aborted}) {
        if (to_string(s) == text) return s;
    }
    throw std::invalid_argument("unknown level status '" + std::string(text) + "'");
}

std::string to_string(SharingLevel s) {
    switch (s) {
        case SharingLevel::NoCachingDetected: return "none";
        case SharingLevel::PerUserOnly: return "per-user";
        case SharingLevel::PerOrg: return "per-org";
        case SharingLevel::Global: return "global";
    }
    return "unknown";
}

SharingLevel parse_sharing_level(std::string_view text) {
    for (auto s : {SharingLevel::NoCachingDetected, SharingLevel::PerUserOnly, SharingLevel::PerOrg,
                   SharingLevel::Global}) {
        if (to_string(s) == text) return s;
    }
    throw std::invalid_argument("unknown sharing level '" + std::string(text) + "'");
}

SharingLevel classify(const std::array<LevelStatus, 4>& statuses) {
    if (statuses[3] == LevelStatus::Significant) return SharingLevel::Global;
    if (statuses[2] == LevelStatus::Significant) return SharingLevel::PerOrg;
    if (statuses[1] == LevelStatus::Significant) return SharingLevel::PerUserOnly;
    return SharingLevel::NoCachingDetected;
}

LevelSpec level_spec(int level, const AuditConfig& config) {
    switch (level) {
        case 1: return {1, config.prefix_fraction_exact, IdentityRelation::SameUser};
        case 2: return {2, config.prefix_fraction_prefix, IdentityRelation::SameUser};
        case 3: return {3, config.prefix_fraction_prefix, IdentityRelation::SameOrgDifferentUser};
        case 4: return {4, config.prefix_fraction_prefix, IdentityRelation::DifferentOrg};
        default: throw std::invalid_argument("audit levels are numbered 1..4");
    }
}

std::optional<client::Identity> victim_for(const LevelSpec& spec, const AuditIdentities& ids) {
    switch (spec.relation) {
        case IdentityRelation::SameUser: {
            client::Identity v = ids.attacker;
            v.label = client::IdentityLabel::Victim;
            return v;
        }
        case IdentityRelation::SameOrgDifferentUser: return ids.same_org_victim;
        case IdentityRelation::DifferentOrg: return ids.other_org_victim;
    }
    return std::nullopt;
}

namespace {

TimingSample to_sample(const client::ProbeResult& r, Procedure proc, const TrialContext& ctx) {
    TimingSample s;
    s.procedure = proc;
    s.client_ttft = r.client_ttft;
    s.server_ttft = r.server_ttft;
    s.trial_index = ctx.trial_index;
    s.victim_requests_used = ctx.victim_requests;
    s.level = ctx.level;
    s.timestamp = r.timestamp;
    s.debug_cached_tokens = r.debug_cached_tokens;
    return s;
}

}  // namespace

TimingSample run_miss_trial(client::ProbeTransport& transport, const client::Identity& attacker,
                            const AuditConfig& config, Rng& rng, const TrialContext& ctx) {
    const auto prompt = promptgen::sample_prompt(config.prompt_length, rng);
    return to_sample(transport.send_probe(attacker, prompt), Procedure::MissProc, ctx);
}

TimingSample run_hit_trial(client::ProbeTransport& transport, const client::Identity& victim,
                           const client::Identity& attacker, const LevelSpec& spec, std::size_t victim_requests,
                           const AuditConfig& config, Rng& rng, const TrialContext& ctx) {
    const auto pair = promptgen::sample_pair(config.prompt_length, spec.prefix_fraction, rng);
    for (std::size_t i = 0; i < victim_requests; ++i) transport.send_probe(victim, pair.base);
    return to_sample(transport.send_probe(attacker, pair.probe), Procedure::HitProc, ctx);
}

bool LadderStep::significant() const {
    return std::any_of(tests.begin(), tests.end(), [](const SourceTest& t) { return t.significant; });
}

std::vector<TimingSource> available_sources(const client::ProbeTransport& transport) {
    std::vector<TimingSource> out{TimingSource::Client};
    if (transport.has_server_timing()) out.push_back(TimingSource::Server);
    return out;
}

std::vector<SourceTest> evaluate_step(const std::vector<TimingSample>& samples, int level, std::size_t victim_requests,
                                      const std::vector<TimingSource>& sources, double threshold) {
    std::vector<SourceTest> out;
    for (TimingSource src : sources) {
        std::vector<double> hit, miss;
        bool complete = true;
        for (const auto& s : samples) {
            if (s.level != level || s.victim_requests_used != victim_requests) continue;
            auto d = s.duration(src);
            if (!d) {
                complete = false;
                break;
            }
            (s.procedure == Procedure::HitProc ? hit : miss).push_back(*d);
        }
        if (!complete || hit.empty() || miss.empty()) continue;
        SourceTest t;
        t.source = src;
        t.ks = stats::ks_one_sided(hit, miss);
        t.threshold = threshold;
        t.significant = t.ks.p_value < threshold;
        t.average_precision = stats::pr_curve(hit, miss).average_precision;
        out.push_back(t);
    }
    return out;
}

LadderStep run_step(client::ProbeTransport& transport, const AuditIdentities& ids, const LevelSpec& spec,
                    std::size_t victim_requests, std::size_t n_settings, const AuditConfig& config,
                    const std::vector<TimingSource>& sources, Rng& prompt_rng, std::vector<TimingSample>& sink) {
    const auto victim = victim_for(spec, ids);
    if (!victim) throw ConfigurationError("level " + std::to_string(spec.level) + " has no victim identity");

    // The interleaving depends only on the seed and the (level, v) pair.
    Rng schedule_rng = derive_rng(config.seed, 1000 * static_cast<std::uint64_t>(spec.level) + victim_requests);
    std::vector<Procedure> schedule(2 * config.num_samples, Procedure::MissProc);
    std::fill_n(schedule.begin(), config.num_samples, Procedure::HitProc);
    std::shuffle(schedule.begin(), schedule.end(), schedule_rng);

    const std::size_t first = sink.size();
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        const TrialContext ctx{spec.level, victim_requests, i};
        for (std::size_t failures = 0;;) {
            try {
                sink.push_back(schedule[i] == Procedure::HitProc
                                   ? run_hit_trial(transport, *victim, ids.attacker, spec, victim_requests, config,
                                                   prompt_rng, ctx)
                                   : run_miss_trial(transport, ids.attacker, config, prompt_rng, ctx));
                break;
            } catch (const client::ProbeError& e) {
                if (++failures > config.max_trial_resamples) {
                    throw PartialDataError("trial " + std::to_string(i) + " of level " + std::to_string(spec.level) +
                                           " (v=" + std::to_string(victim_requests) + ") failed " +
                                           std::to_string(failures) + " times; last error: " + e.what());
                }
            }
        }
    }

    const std::vector<TimingSample> taken(sink.begin() + static_cast<std::ptrdiff_t>(first), sink.end());
    LadderStep step;
    step.victim_requests = victim_requests;
    step.tests = evaluate_step(taken, spec.level, victim_requests, sources,
                               stats::bonferroni_threshold(config.alpha, n_settings, sources.size()));
    return step;
}

namespace {

void run_level_into(LevelReport& out, client::ProbeTransport& transport, const AuditIdentities& ids,
                    const LevelSpec& spec, const AuditConfig& config, const std::vector<TimingSource>& sources,
                    Rng& prompt_rng, std::vector<TimingSample>& sink) {
    const std::vector<std::size_t> ladder =
        spec.level == 1 ? std::vector<std::size_t>{config.level1_victim_requests} : config.victim_request_ladder;
    out.level = spec.level;
    out.prefix_fraction = spec.prefix_fraction;
    for (std::size_t v : ladder) {
        out.steps.push_back(run_step(transport, ids, spec, v, ladder.size(), config, sources, prompt_rng, sink));
        if (out.steps.back().significant()) {
            out.status = LevelStatus::Significant;
            out.first_significant_v = v;
            return;
        }
    }
    out.status = LevelStatus::NotSignificant;
}

}  // namespace

LevelReport run_level(client::ProbeTransport& transport, const AuditIdentities& ids, const LevelSpec& spec,
                      const AuditConfig& config, const std::vector<TimingSource>& sources, Rng& prompt_rng,
                      std::vector<TimingSample>& sink) {
    LevelReport out;
    run_level_into(out, transport, ids, spec, config, sources, prompt_rng, sink);
    return out;
}

AuditReport run_audit(client::ProbeTransport& transport, const AuditIdentities& ids, const AuditConfig& config) {
    config.validate();
    AuditReport report;
    report.config = config;
    report.sources = available_sources(transport);
    if (report.sources.empty()) throw ConfigurationError("no timing source is available");

    transport.check_identity(ids.attacker);
    if (ids.same_org_victim) transport.check_identity(*ids.same_org_victim);
    if (ids.other_org_victim) transport.check_identity(*ids.other_org_victim);

    for (int l = 1; l <= 4; ++l) {
        report.levels[l - 1].level = l;
        report.levels[l - 1].prefix_fraction = level_spec(l, config).prefix_fraction;
    }

    Rng prompt_rng = derive_rng(config.seed, 1);
    auto status = [&](int level) { return report.levels[level - 1].status; };

    for (int l = 1; l <= config.level_max; ++l) {
        bool gate = true;
        if (l == 2) gate = status(1) == LevelStatus::Significant;
        if (l == 3) gate = status(2) == LevelStatus::Significant;
        if (l == 4) {
            gate = status(3) == LevelStatus::Significant ||
                   (status(3) == LevelStatus::Untested && status(2) == LevelStatus::Significant);
        }
        if (!gate) break;

        const LevelSpec spec = level_spec(l, config);
        if (!victim_for(spec, ids)) {
            report.levels[l - 1].status = LevelStatus::Untested;
            continue;
        }
        try {
            run_level_into(report.levels[l - 1], transport, ids, spec, config, report.sources, prompt_rng,
                           report.samples);
        } catch (const PartialDataError& e) {
            report.levels[l - 1].status = LevelStatus::Aborted;
            report.partial = true;
            report.abort_reason = e.what();
            break;
        }
    }

    std::array<LevelStatus, 4> statuses{};
    for (int l = 0; l < 4; ++l) statuses[l] = report.levels[l].status;
    report.classification = classify(statuses);

    if (transport.flavor() == client::ApiFlavor::Embedding && !report.partial) {
        Rng check_rng = derive_rng(config.seed, 2);
        try {
            report.suffix_changes_output = probe_suffix_sensitivity(transport, ids.attacker, config, check_rng);
        } catch (const client::ProbeError&) {
            report.suffix_changes_output.reset();
        }
    }
    return report;
}

bool probe_suffix_sensitivity(client::ProbeTransport& transport, const client::Identity& who,
                              const AuditConfig& config, Rng& rng) {
    const auto pair = promptgen::sample_pair(config.prompt_length, config.prefix_fraction_prefix, rng);
    const auto a = transport.send_probe(who, pair.base);
    const auto b = transport.send_probe(who, pair.probe);
    return a.payload_digest != b.payload_digest;
}

AuditIdentities simulator_identities() {
    using client::Identity;
    using client::IdentityLabel;
    AuditIdentities ids;
    ids.attacker = Identity{IdentityLabel::Attacker, "CACHEAUDIT_SIM_ATTACKER_KEY", "attacker", "org-a"};
    ids.same_org_victim = Identity{IdentityLabel::Victim, "CACHEAUDIT_SIM_COLLEAGUE_KEY", "colleague", "org-a"};
    ids.other_org_victim = Identity{IdentityLabel::Victim, "CACHEAUDIT_SIM_OUTSIDER_KEY", "outsider", "org-b"};
    return ids;
}

// ---------------------------------------------------------------------------

AblationKind parse_ablation(std::string_view text) {
    if (text == "prompt-length") return AblationKind::PromptLength;
    if (text == "prefix-fraction") return AblationKind::PrefixFraction;
    throw std::invalid_argument("unknown ablation '" + std::string(text) + "'");
}

std::vector<AblationPoint> run_ablation(const AblationSettings& settings) {
    std::vector<AblationPoint> out;
    const AuditIdentities ids = simulator_identities();
    for (std::size_t i = 0; i < settings.values.size(); ++i) {
        const double value = settings.values[i];
        AuditConfig config;
        config.num_samples = settings.num_samples;
        config.alpha = 0.5;
        config.seed = settings.seed + i;
        LevelSpec spec{2, settings.prefix_fraction, IdentityRelation::SameUser};
        if (settings.kind == AblationKind::PromptLength) {
            if (!(value >= 1.0)) throw std::invalid_argument("prompt lengths must be >= 1");
            config.prompt_length = static_cast<std::size_t>(value);
        } else {
            config.prompt_length = settings.prompt_length;
            spec.prefix_fraction = value;
        }
        if (spec.prefix_fraction == 1.0) spec.level = 1;
        config.validate();

        sim::SimulatedApi api(settings.policy, settings.latency, derive_rng(config.seed, 3)());
        client::InProcessSimClient transport(api, client::ApiFlavor::SimNative, derive_rng(config.seed, 4)());
        Rng prompt_rng = derive_rng(config.seed, 1);
        std::vector<TimingSample> sink;
        const LadderStep step = run_step(transport, ids, spec, settings.victim_requests, 1, config,
                                         {TimingSource::Server}, prompt_rng, sink);
        const SourceTest& t = step.tests.at(0);
        out.push_back({value, t.average_precision, t.ks.p_value, t.ks.statistic});
    }
    return out;
}

}  // namespace cacheaudit::audit
