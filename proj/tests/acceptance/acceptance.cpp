// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

// Prints one PASS/FAIL line per acceptance criterion. Exits non-zero when a
// criterion fails unless it was named with --expect-fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "cacheaudit/audit.hpp"
#include "cacheaudit/cli.hpp"
#include "cacheaudit/promptgen.hpp"
#include "cacheaudit/report.hpp"
#include "oracle.hpp"

using namespace cacheaudit;
using nlohmann::json;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

class Clock {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

audit::AuditReport quick_sim_audit(sim::CacheScope scope, std::uint64_t seed, std::size_t servers = 1) {
    sim::CachePolicy policy;
    policy.scope = scope;
    policy.num_servers = servers;
    sim::LatencyModel latency;
    latency.per_token = 2.5e-4;
    AuditConfig cfg = AuditConfig::quick();
    cfg.seed = seed;
    Rng seeds = derive_rng(seed, 7);
    sim::SimulatedApi api(policy, latency, seeds());
    client::InProcessSimClient transport(api, client::ApiFlavor::SimNative, seeds());
    return audit::run_audit(transport, audit::simulator_identities(), cfg);
}

const audit::SourceTest* find_test(const audit::LevelReport& l, std::size_t v, audit::TimingSource src) {
    for (const auto& st : l.steps) {
        if (st.victim_requests != v) continue;
        for (const auto& t : st.tests) {
            if (t.source == src) return &t;
        }
    }
    return nullptr;
}

// 1. Asymptotic KS against the exhaustive permutation oracle.
Verdict ks_battery() {
    Clock clock;
    Rng rng(20260101);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> shift(-1.0, 1.0);
    double worst = 0.0;
    std::size_t cases = 0;
    for (std::size_t total = 2; total <= 12; ++total) {
        for (std::size_t m = 1; m < total; ++m) {
            const std::size_t n = total - m;
            for (int rep = 0; rep < 2; ++rep) {
                const double d = shift(rng);
                std::vector<double> hit(m), miss(n);
                for (auto& x : hit) x = z(rng) - d;
                for (auto& x : miss) x = z(rng);
                const double asym = stats::ks_one_sided(hit, miss).p_value;
                worst = std::max(worst, std::abs(asym - oracle::exhaustive_pvalue(hit, miss)));
                ++cases;
            }
        }
    }
    const std::vector<double> same{0.3, 0.1, 0.7, 0.2, 0.9};
    const auto self = stats::ks_one_sided(same, same);
    const double t = clock.seconds();
    const bool ok = cases >= 50 && worst <= 0.15 && self.p_value == 1.0 && self.statistic == 0.0 && t < 10.0;
    return {ok, fmt("%zu cases, max |asymptotic - exact| = %.4f (<= 0.15), identical p=%g D+=%g, %.2f s", cases,
                    worst, self.p_value, self.statistic, t)};
}

// 2. No false positives under a disabled cache; p-values near uniform.
Verdict false_positives() {
    Clock clock;
    std::size_t significant = 0, below = 0, total = 0;
    for (std::uint64_t i = 0; i < 200; ++i) {
        const auto r = quick_sim_audit(sim::CacheScope::Disabled, 2'000'000 + i);
        for (const auto& l : r.levels) {
            for (const auto& st : l.steps) {
                for (const auto& t : st.tests) {
                    significant += t.significant;
                    below += t.ks.p_value < 0.05;
                    ++total;
                }
            }
        }
        significant += r.classification != audit::SharingLevel::NoCachingDetected;
    }
    const double frac = static_cast<double>(below) / static_cast<double>(total);
    const double t = clock.seconds();
    const bool ok = significant == 0 && std::abs(frac - 0.05) <= 0.03 && t < 300.0;
    return {ok, fmt("200 audits, %zu significant verdicts, %zu p-values, fraction p<0.05 = %.4f (0.05 +- 0.03), "
                    "%.1f s",
                    significant, total, frac, t)};
}

// 3. Detection power under a global cache.
Verdict global_power() {
    Clock clock;
    std::size_t good = 0;
    double worst_p = 0.0;
    for (std::uint64_t i = 0; i < 100; ++i) {
        const auto r = quick_sim_audit(sim::CacheScope::Global, 3'000'000 + i);
        double p = 1.0;
        for (auto src : r.sources) {
            if (const auto* t = find_test(r.levels[1], 1, src)) p = std::min(p, t->ks.p_value);
        }
        worst_p = std::max(worst_p, p);
        good += r.classification == audit::SharingLevel::Global && p < 1e-10;
    }
    const double t = clock.seconds();
    return {good == 100 && t < 120.0,
            fmt("%zu/100 global with level-2 p < 1e-10 at v=1 (worst p %.2e), %.1f s", good, worst_p, t)};
}

// 4. Scope discrimination.
Verdict scope_discrimination() {
    std::size_t per_user = 0, per_org = 0;
    for (std::uint64_t i = 0; i < 50; ++i) {
        const auto u = quick_sim_audit(sim::CacheScope::PerUser, 4'000'000 + i);
        per_user += u.classification == audit::SharingLevel::PerUserOnly &&
                    u.levels[2].status == audit::LevelStatus::NotSignificant &&
                    u.levels[3].status != audit::LevelStatus::Significant;
        const auto o = quick_sim_audit(sim::CacheScope::PerOrg, 4'100'000 + i);
        per_org += o.classification == audit::SharingLevel::PerOrg &&
                   o.levels[2].status == audit::LevelStatus::Significant &&
                   o.levels[3].status == audit::LevelStatus::NotSignificant;
    }
    return {per_user == 50 && per_org == 50, fmt("per-user %zu/50, per-org %zu/50", per_user, per_org)};
}

// 5. Escalation behind random routing over ten servers.
Verdict multi_server() {
    constexpr std::size_t kServers = 10;
    const auto ids = audit::simulator_identities();
    std::size_t pattern = 0;
    for (std::uint64_t i = 0; i < 50; ++i) {
        AuditConfig cfg = AuditConfig::quick();
        cfg.seed = 5'000'000 + i;
        sim::CachePolicy policy;
        policy.num_servers = kServers;
        sim::LatencyModel latency;
        latency.per_token = 2.5e-4;
        Rng seeds = derive_rng(cfg.seed, 7);
        sim::SimulatedApi api(policy, latency, seeds());
        client::InProcessSimClient transport(api, client::ApiFlavor::SimNative, seeds());
        const auto sources = audit::available_sources(transport);
        const auto spec = audit::level_spec(2, cfg);
        Rng prompt_rng = derive_rng(cfg.seed, 1);
        std::vector<audit::TimingSample> sink;
        const auto n = cfg.victim_request_ladder.size();
        const auto v1 = audit::run_step(transport, ids, spec, 1, n, cfg, sources, prompt_rng, sink);
        const auto v25 = audit::run_step(transport, ids, spec, 25, n, cfg, sources, prompt_rng, sink);
        pattern += !v1.significant() && v25.significant();
    }

    std::string rates;
    bool rates_ok = true;
    for (std::size_t v : {1u, 5u, 25u}) {
        sim::CachePolicy policy;
        policy.num_servers = kServers;
        sim::SimulatedApi api(policy, {}, 77 + v);
        client::InProcessSimClient transport(api, client::ApiFlavor::SimNative, 78 + v);
        AuditConfig cfg = AuditConfig::quick();
        const auto spec = audit::level_spec(2, cfg);
        Rng rng(79 + v);
        std::size_t hits = 0;
        for (std::size_t e = 0; e < 1000; ++e) {
            const auto s = audit::run_hit_trial(transport, *audit::victim_for(spec, ids), ids.attacker, spec, v, cfg,
                                                rng, {2, v, e});
            hits += s.debug_cached_tokens.value_or(0) > 0;
        }
        const double rate = static_cast<double>(hits) / 1000.0;
        const double expected = 1.0 - std::pow(1.0 - 1.0 / kServers, static_cast<double>(v));
        rates_ok = rates_ok && std::abs(rate - expected) <= 0.05;
        rates += fmt(" v=%zu %.3f vs %.3f;", v, rate, expected);
    }
    return {pattern >= 45 && rates_ok,
            fmt("v=1 quiet and v=25 significant in %zu/50 (>= 45); hit rates:", pattern) + rates};
}

// 6. Cost to the cent.
Verdict cost() {
    const AuditConfig cfg;
    const auto cheap = client::format_cost(client::estimate_cost(cfg, 0.05));
    const auto dear = client::format_cost(client::estimate_cost(cfg, 0.25));
    const bool ok = client::estimate_cost(cfg, 0.05).prompt_tokens == 33'750'000 &&
                    cheap == "33,750,000 tokens, $1.69" && dear == "33,750,000 tokens, $8.44";
    return {ok, cheap + " | " + dear};
}

// 7. Collision bound, checked in floating point and with exact integers.
Verdict collision() {
    const double p = promptgen::prefix_collision_probability(15);
    unsigned __int128 p52 = 1, p10 = 1;
    for (int i = 0; i < 15; ++i) p52 *= 52;
    for (int i = 0; i < 25; ++i) p10 *= 10;
    return {p < 1e-25 && p52 > p10, fmt("(1/52)^15 = %.4e < 1e-25; 52^15 > 10^25 exactly: %s", p,
                                        p52 > p10 ? "yes" : "no")};
}

// 8. AP endpoints.
Verdict ap_endpoints() {
    std::vector<double> fast, slow;
    for (int i = 0; i < 250; ++i) {
        fast.push_back(0.02 + 1e-5 * i);
        slow.push_back(0.07 + 1e-5 * i);
    }
    const double separated = stats::pr_curve(fast, slow).average_precision;
    Rng rng(8'000'000);
    std::normal_distribution<double> z(0.05, 0.005);
    std::size_t inside = 0;
    double lo = 1.0, hi = 0.0;
    for (int run = 0; run < 100; ++run) {
        std::vector<double> a(250), b(250);
        for (auto& x : a) x = z(rng);
        for (auto& x : b) x = z(rng);
        const double ap = stats::pr_curve(a, b).average_precision;
        lo = std::min(lo, ap);
        hi = std::max(hi, ap);
        inside += ap >= 0.45 && ap <= 0.55;
    }
    return {separated == 1.0 && inside >= 95,
            fmt("separated AP = %.6f; null AP in [0.45, 0.55] in %zu/100 runs (range %.3f..%.3f)", separated, inside,
                lo, hi)};
}

// 9. Ablation trends.
Verdict ablation() {
    Clock clock;
    auto sweep = [](audit::AblationKind kind, std::vector<double> values, std::uint64_t seed) {
        audit::AblationSettings s;
        s.kind = kind;
        s.values = std::move(values);
        s.num_samples = 1000;
        s.seed = seed;
        const auto pts = audit::run_ablation(s);
        std::vector<double> x, ap;
        for (const auto& p : pts) {
            x.push_back(p.value);
            ap.push_back(p.average_precision);
        }
        return std::make_pair(stats::spearman_rho(x, ap), ap);
    };
    const auto [rho_len, ap_len] = sweep(audit::AblationKind::PromptLength, {10, 100, 1000, 5000}, 9'000'000);
    const auto [rho_frac, ap_frac] = sweep(audit::AblationKind::PrefixFraction, {0.1, 0.5, 0.95}, 9'100'000);
    const double t = clock.seconds();
    auto list = [](const std::vector<double>& v) {
        std::string s;
        for (double x : v) s += fmt("%s%.3f", s.empty() ? "" : ",", x);
        return s;
    };
    return {rho_len > 0.9 && rho_frac > 0.9 && t < 300.0,
            fmt("length rho=%.2f AP=[%s]; fraction rho=%.2f AP=[%s]; %.1f s", rho_len, list(ap_len).c_str(),
                rho_frac, list(ap_frac).c_str(), t)};
}

// 10. Re-analysis closure through the command-line tool.
Verdict closure() {
    const auto dir = std::filesystem::temp_directory_path() / "cacheaudit-acceptance-closure";
    std::filesystem::remove_all(dir);
    std::ostringstream out, err;
    const int audit_code = cli::run({"audit", "--provider", "sim", "--quick", "--policy", "per-org", "--seed", "10",
                                     "--out-dir", dir.string(), "--run-id", "closure"},
                                    out, err);
    std::ostringstream out2, err2;
    const int analyze_code = cli::run({"analyze", (dir / "closure.samples.csv").string(), "--report",
                                       (dir / "closure.report.json").string()},
                                      out2, err2);
    std::string line = out2.str();
    if (!line.empty() && line.back() == '\n') line.pop_back();
    line = line.substr(line.rfind('\n') + 1);
    const bool ok = audit_code == 0 && analyze_code == 0 && line.find("reproduced exactly") != std::string::npos;
    std::filesystem::remove_all(dir);
    return {ok, fmt("audit exit %d, analyze exit %d: %s", audit_code, analyze_code,
                    (line.empty() ? err2.str() : line).c_str())};
}

// 11. Embedding-variant clustering on the transcribed tables.
Verdict clustering() {
    std::ifstream in(std::string(CACHEAUDIT_FIXTURE_DIR) + "/embedding_variants.json");
    const json doc = json::parse(in);
    bool ok = true;
    std::string detail;
    for (const auto& table : doc.at("tables")) {
        std::vector<report::EmbeddingResponse> rows;
        std::set<std::size_t> normal, fast_rows;
        for (const auto& r : table.at("rows")) {
            const std::size_t idx = rows.size();
            rows.push_back({r.at("time_s").get<double>(), r.at("embedding").get<std::vector<double>>()});
            if (r.at("label") == "normal") normal.insert(idx);
            if (r.at("label") == "fast") fast_rows.insert(idx);
        }
        const auto clusters = report::cluster_embedding_variants(rows);
        const auto fast = report::fast_variant(clusters);
        const std::set<std::size_t> modal_members(clusters[0].members.begin(), clusters[0].members.end());
        bool table_ok = modal_members == normal && fast.has_value();
        double dev0 = 0.0, dev_max = 0.0;
        if (fast) {
            const auto& c = clusters[*fast];
            table_ok = table_ok && std::includes(fast_rows.begin(), fast_rows.end(), c.members.begin(),
                                                 c.members.end());
            dev0 = std::abs(c.representative[0] - clusters[0].representative[0]);
            dev_max = c.max_deviation;
        }
        table_ok = table_ok && dev0 >= 1e-5 && dev0 <= 1e-4;
        ok = ok && table_ok;
        detail += fmt("%s%s: first-coordinate deviation %.3e, max %.3e%s", detail.empty() ? "" : "; ",
                      table.at("name").get<std::string>().c_str(), dev0, dev_max, table_ok ? "" : " (out of range)");
    }
    return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> expected_failures;
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--expect-fail") expected_failures.insert(std::stoi(argv[++i]));
    }
    const std::vector<std::function<Verdict()>> criteria{ks_battery, false_positives, global_power,
                                                         scope_discrimination, multi_server, cost,
                                                         collision, ap_endpoints, ablation, closure,
                                                         clustering};
    int unexpected = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        Verdict v;
        try {
            v = criteria[i]();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        const bool known = expected_failures.count(id) != 0;
        std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : known ? "FAIL (known)" : "FAIL") << " - "
                  << v.detail << std::endl;
        if (!v.pass && !known) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
