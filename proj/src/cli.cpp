// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cacheaudit/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "cacheaudit/report.hpp"
#include "cacheaudit/stats.hpp"

namespace cacheaudit::cli {

using nlohmann::json;

namespace {

/// Error that maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::optional<std::string> env(const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

template <typename T>
T parse_env_number(const char* name, const std::string& text) {
    std::istringstream in(text);
    T value{};
    in >> value;
    if (!in || !in.eof()) throw ConfigError(std::string("environment variable ") + name + " is not a valid number");
    return value;
}

/// flag > env > current value
template <typename T>
void resolve(T& target, const std::optional<T>& flag, const char* env_name) {
    if (flag) {
        target = *flag;
        return;
    }
    if (env_name != nullptr) {
        if (auto e = env(env_name)) {
            if constexpr (std::is_same_v<T, std::string>) {
                target = *e;
            } else {
                target = parse_env_number<T>(env_name, *e);
            }
        }
    }
}

json load_json_file(const std::string& path) {
    std::string text;
    try {
        text = report::read_text_file(path);
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());
    }
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

client::Identity identity_from_json(const json& j, client::IdentityLabel label) {
    client::Identity id;
    id.label = label;
    id.credential_env = j.at("env").get<std::string>();
    id.user_id = j.value("user", std::string());
    id.org_id = j.value("org", std::string());
    return id;
}

std::string percent(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", x);
    return buf;
}

std::string level_name(int level) {
    switch (level) {
        case 1: return "exact prompt, same user";
        case 2: return "shared prefix, same user";
        case 3: return "shared prefix, same org";
        case 4: return "shared prefix, other org";
    }
    return "?";
}

void print_report_summary(const audit::AuditReport& r, std::ostream& out) {
    out << "provider: " << r.provider.name << " (" << r.provider.flavor << ")\n";
    for (const auto& lvl : r.levels) {
        out << "level " << lvl.level << " [" << level_name(lvl.level) << "]: " << audit::to_string(lvl.status);
        if (lvl.first_significant_v) out << " at v=" << *lvl.first_significant_v;
        out << "\n";
        for (const auto& step : lvl.steps) {
            out << "  v=" << step.victim_requests;
            for (const auto& t : step.tests) {
                out << "  " << audit::to_string(t.source) << " p=" << report::format_pvalue(t.ks.p_value)
                    << " AP=" << percent(t.average_precision) << (t.significant ? " *" : "");
            }
            out << "\n";
        }
    }
    out << "sharing level: " << audit::to_string(r.classification) << "\n";
    if (r.partial) out << "partial run: " << r.abort_reason << "\n";
    if (r.suffix_changes_output) {
        const auto ev = report::architecture_evidence(r, *r.suffix_changes_output);
        out << "architecture: " << report::to_string(ev.verdict) << "\n";
    }
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Options shared by several subcommands

struct SimFlags {
    std::optional<std::string> policy;
    std::optional<std::size_t> servers;
    std::optional<double> ttl;
    std::optional<double> base;
    std::optional<double> per_token;
    std::optional<double> noise_sigma;
    std::optional<std::string> noise_kind;

    void add_to(CLI::App& app) {
        app.add_option("--policy", policy, "Cache scope: disabled, per-user, per-org, global");
        app.add_option("--servers", servers, "Number of independently cached servers");
        app.add_option("--ttl", ttl, "Cache entry lifetime in seconds");
        app.add_option("--base-latency", base, "Fixed ttft component in seconds");
        app.add_option("--per-token", per_token, "Seconds per uncached prompt token");
        app.add_option("--noise-sigma", noise_sigma, "Latency noise scale in seconds");
        app.add_option("--noise-kind", noise_kind, "gaussian or lognormal");
    }

    void apply(sim::CachePolicy& p, sim::LatencyModel& l) const {
        std::string scope;
        resolve(scope, policy, "CACHEAUDIT_SIM_POLICY");
        if (!scope.empty()) p.scope = sim::parse_scope(scope);
        resolve(p.num_servers, servers, "CACHEAUDIT_SIM_SERVERS");
        resolve(p.ttl, ttl, "CACHEAUDIT_SIM_TTL");
        if (base) l.base = *base;
        if (per_token) l.per_token = *per_token;
        if (noise_sigma) l.noise_sigma = *noise_sigma;
        if (noise_kind) l.noise_kind = sim::parse_noise_kind(*noise_kind);
        p.validate();
        l.validate();
    }
};

struct AuditFlags {
    std::optional<std::size_t> prompt_length;
    std::optional<std::size_t> num_samples;
    std::optional<double> alpha;
    std::optional<std::uint64_t> seed;
    std::optional<int> level_max;
    std::optional<std::string> ladder;
    bool quick = false;

    void apply(AuditConfig& c) const {
        resolve(c.prompt_length, prompt_length, "CACHEAUDIT_PROMPT_LENGTH");
        resolve(c.num_samples, num_samples, "CACHEAUDIT_NUM_SAMPLES");
        resolve(c.alpha, alpha, "CACHEAUDIT_ALPHA");
        resolve(c.seed, seed, "CACHEAUDIT_SEED");
        resolve(c.level_max, level_max, "CACHEAUDIT_LEVEL_MAX");
        if (ladder) {
            c.victim_request_ladder.clear();
            for (const auto& s : split_list(*ladder)) c.victim_request_ladder.push_back(std::stoul(s));
        }
    }
};

// ---------------------------------------------------------------------------
// audit

struct AuditArgs {
    std::string provider = "sim";
    std::string flavor = "chat";
    std::optional<std::string> out_dir;
    std::optional<std::string> run_id;
    std::optional<std::string> only;
    AuditFlags cfg;
    SimFlags sim;
};

int write_and_summarize(const audit::AuditReport& report, const std::filesystem::path& out_dir, std::ostream& out) {
    print_report_summary(report, out);
    const auto files = report::write_report_files(report, out_dir);
    out << "wrote " << files.report.string() << "\n"
        << "wrote " << files.samples.string() << "\n"
        << "wrote " << files.plots.string() << "\n";
    return report.partial ? kExitFailure : kExitOk;
}

void write_manifest(const RunManifest& m, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const json j{{"run_id", m.run_id},
                 {"subcommand", m.subcommand},
                 {"config", m.resolved_config},
                 {"providers", m.providers},
                 {"seed", m.seed}};
    report::write_text_file(out_dir / (m.run_id + ".manifest.json"), j.dump(2) + "\n");
}

int cmd_audit(const AuditArgs& a, std::ostream& out) {
    AuditConfig config = a.cfg.quick ? AuditConfig::quick() : AuditConfig{};
    std::vector<ProviderEntry> providers;
    const bool in_process = a.provider == "sim";
    if (!in_process) {
        const json file = load_json_file(a.provider);
        try {
            if (auto it = file.find("audit"); it != file.end()) apply_config_json(config, *it);
            providers = providers_from_json(file);
        } catch (const json::exception& e) {
            throw ConfigError(a.provider + ": " + e.what());
        }
        if (a.only) {
            std::erase_if(providers, [&](const ProviderEntry& p) { return p.spec.name != *a.only; });
            if (providers.empty()) throw ConfigError("no provider named '" + *a.only + "' in " + a.provider);
        }
    }
    a.cfg.apply(config);
    config.validate();

    std::string out_dir = "cacheaudit-out";
    resolve(out_dir, a.out_dir, "CACHEAUDIT_OUT_DIR");
    RunManifest manifest;
    manifest.run_id = a.run_id.value_or(make_run_id());
    manifest.subcommand = "audit";
    manifest.resolved_config = config_to_json(config);
    manifest.seed = config.seed;

    if (in_process) {
        sim::CachePolicy policy;
        sim::LatencyModel latency;
        // Keep the hit/miss gap near 0.05 s at the short quick-profile length.
        if (a.cfg.quick) latency.per_token = 2.5e-4;
        a.sim.apply(policy, latency);
        const auto flavor = client::parse_flavor(a.flavor);
        manifest.providers = {"sim"};
        manifest.resolved_config["simulator"] = {{"scope", sim::to_string(policy.scope)},
                                                 {"num_servers", policy.num_servers},
                                                 {"ttl_s", policy.ttl},
                                                 {"base_s", latency.base},
                                                 {"per_token_s", latency.per_token},
                                                 {"noise_sigma_s", latency.noise_sigma},
                                                 {"noise_kind", sim::to_string(latency.noise_kind)}};
        write_manifest(manifest, out_dir);

        Rng seeds = derive_rng(config.seed, 7);
        sim::SimulatedApi api(policy, latency, seeds());
        client::InProcessSimClient transport(api, flavor, seeds());
        auto report = audit::run_audit(transport, audit::simulator_identities(), config);
        report.run_id = manifest.run_id;
        report.provider = {"sim", client::to_string(flavor), "simulated-" + sim::to_string(policy.scope),
                           "in-process"};
        return write_and_summarize(report, out_dir, out);
    }

    for (const auto& p : providers) manifest.providers.push_back(p.spec.name);
    write_manifest(manifest, out_dir);
    // Fail on missing credentials before anything is sent to any provider.
    for (const auto& p : providers) {
        client::HttpProbeClient probe(p.spec);
        probe.check_identity(p.identities.attacker);
        if (p.identities.same_org_victim) probe.check_identity(*p.identities.same_org_victim);
        if (p.identities.other_org_victim) probe.check_identity(*p.identities.other_org_victim);
    }
    int status = kExitOk;
    for (const auto& p : providers) {
        client::HttpProbeClient transport(p.spec);
        auto report = audit::run_audit(transport, p.identities, config);
        report.run_id = providers.size() == 1 ? manifest.run_id : manifest.run_id + "-" + p.spec.name;
        report.provider = {p.spec.name, client::to_string(p.spec.api_flavor), p.spec.model_name, p.spec.base_url};
        status = std::max(status, write_and_summarize(report, out_dir, out));
    }
    return status;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
    std::optional<std::string> config;
    std::string host = "127.0.0.1";
    std::optional<int> port;
    std::optional<std::uint64_t> seed;
    bool debug = false;
    bool no_delay = false;
    SimFlags sim;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
    sim::SimConfig cfg;
    if (a.config) {
        try {
            cfg = sim::sim_config_from_json(load_json_file(*a.config));
        } catch (const json::exception& e) {
            throw ConfigError(*a.config + ": " + e.what());
        }
    }
    a.sim.apply(cfg.policy, cfg.latency);
    resolve(cfg.seed, a.seed, "CACHEAUDIT_SEED");
    if (a.debug || env("CACHEAUDIT_SIM_DEBUG")) cfg.debug = true;
    if (a.no_delay) cfg.simulate_delay = false;
    if (cfg.identities.empty()) cfg.identities = default_sim_identities();
    int port = 8080;
    resolve(port, a.port, "CACHEAUDIT_SIM_PORT");

    // Route SIGINT/SIGTERM to sigwait below; server threads inherit the mask.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    sim::SimHttpServer server(cfg);
    int bound = 0;
    try {
        bound = server.start(a.host, port);
    } catch (const std::runtime_error&) {
        pthread_sigmask(SIG_UNBLOCK, &set, nullptr);
        throw;
    }
    out << "listening on http://" << a.host << ":" << bound << "\n"
        << "port " << bound << "\n"
        << "policy " << sim::to_string(cfg.policy.scope) << ", " << cfg.policy.num_servers << " server(s), ttl "
        << cfg.policy.ttl << " s" << (cfg.debug ? ", debug headers on" : "") << std::endl;
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
    pthread_sigmask(SIG_UNBLOCK, &set, nullptr);
    out << "stopped" << std::endl;
    return kExitOk;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
    std::optional<std::string> samples;
    std::optional<std::string> report;
    std::optional<std::string> out;
    std::optional<std::string> plots;
    std::size_t bins = 30;

    std::optional<std::string> ablate;
    std::string values;
    std::optional<std::size_t> prompt_length;
    std::optional<double> prefix_fraction;
    std::optional<std::size_t> num_samples;
    std::optional<std::size_t> victim_requests;
    std::optional<std::uint64_t> seed;
    SimFlags sim;
};

int cmd_ablate(const AnalyzeArgs& a, std::ostream& out) {
    audit::AblationSettings s;
    s.kind = audit::parse_ablation(*a.ablate);
    for (const auto& v : split_list(a.values)) {
        try {
            s.values.push_back(std::stod(v));
        } catch (const std::exception&) {
            throw ConfigError("--values: '" + v + "' is not a number");
        }
    }
    if (s.values.empty()) {
        s.values = s.kind == audit::AblationKind::PromptLength ? std::vector<double>{10, 100, 1000, 5000}
                                                               : std::vector<double>{0.1, 0.5, 0.95};
    }
    a.sim.apply(s.policy, s.latency);
    resolve(s.prompt_length, a.prompt_length, "CACHEAUDIT_PROMPT_LENGTH");
    resolve(s.num_samples, a.num_samples, "CACHEAUDIT_NUM_SAMPLES");
    resolve(s.seed, a.seed, "CACHEAUDIT_SEED");
    if (a.prefix_fraction) s.prefix_fraction = *a.prefix_fraction;
    if (a.victim_requests) s.victim_requests = *a.victim_requests;

    const auto points = audit::run_ablation(s);
    json rows = json::array();
    std::vector<double> xs, aps;
    out << (s.kind == audit::AblationKind::PromptLength ? "prompt_length" : "prefix_fraction")
        << "  average_precision  p_value  statistic\n";
    for (const auto& p : points) {
        out << p.value << "  " << percent(p.average_precision) << "  " << report::format_pvalue(p.p_value) << "  "
            << percent(p.statistic) << "\n";
        rows.push_back({{"value", p.value},
                        {"average_precision", p.average_precision},
                        {"p_value", p.p_value},
                        {"statistic", p.statistic}});
        xs.push_back(p.value);
        aps.push_back(p.average_precision);
    }
    double rho = 0.0;
    if (points.size() >= 2) {
        rho = stats::spearman_rho(xs, aps);
        out << "spearman rho(value, AP) = " << percent(rho) << "\n";
    }
    if (a.out) {
        const json j{{"ablation", *a.ablate}, {"points", rows}, {"spearman_rho", rho}, {"seed", s.seed}};
        report::write_text_file(*a.out, j.dump(2) + "\n");
        out << "wrote " << *a.out << "\n";
    }
    return kExitOk;
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out, std::ostream& err) {
    if (a.ablate) return cmd_ablate(a, out);
    if (!a.samples) throw ConfigError("analyze needs a samples CSV or --ablate");

    const auto samples = report::parse_samples_csv(report::read_text_file(*a.samples));
    const auto analysis = report::analyze_samples(samples, a.bins);
    for (const auto& step : analysis) {
        for (const auto& s : step.sources) {
            out << "level " << step.level << " v=" << step.victim_requests << " " << audit::to_string(s.source)
                << ": D=" << percent(s.ks.statistic) << " p=" << report::format_pvalue(s.ks.p_value)
                << " AP=" << percent(s.pr.average_precision) << " (m=" << s.ks.m << ", n=" << s.ks.n << ")\n";
        }
    }
    if (a.out) {
        report::write_text_file(*a.out, report::analysis_to_json(analysis).dump(2) + "\n");
        out << "wrote " << *a.out << "\n";
    }
    if (a.plots) {
        report::write_text_file(*a.plots, report::plot_data_json(analysis).dump(2) + "\n");
        out << "wrote " << *a.plots << "\n";
    }
    if (a.report) {
        const auto check = report::verify_closure(load_json_file(*a.report), analysis);
        if (!check.ok()) {
            for (const auto& m : check.mismatches) err << "mismatch: " << m << "\n";
            if (check.compared == 0) err << "report contains no test results\n";
            return kExitFailure;
        }
        out << "closure: " << check.compared << " test results reproduced exactly\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// cost

struct CostArgs {
    std::optional<std::size_t> prompt_length;
    std::optional<std::size_t> num_samples;
    std::optional<std::size_t> victim_requests;
    double price = 0.05;
};

int cmd_cost(const CostArgs& a, std::ostream& out) {
    AuditConfig c;
    resolve(c.prompt_length, a.prompt_length, "CACHEAUDIT_PROMPT_LENGTH");
    resolve(c.num_samples, a.num_samples, "CACHEAUDIT_NUM_SAMPLES");
    if (a.price < 0.0) throw ConfigError("--price must be non-negative");
    out << client::format_cost(client::estimate_cost(c, a.price, a.victim_requests)) << "\n";
    return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string make_run_id() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    std::random_device rd;
    char suffix[8];
    std::snprintf(suffix, sizeof suffix, "%06x", rd() & 0xffffffU);
    return std::string(stamp) + "-" + suffix;
}

std::vector<ProviderEntry> providers_from_json(const json& j) {
    std::vector<ProviderEntry> out;
    const auto& list = j.at("providers");
    if (!list.is_array() || list.empty()) throw ConfigError("providers must be a non-empty array");
    for (const auto& pj : list) {
        ProviderEntry e;
        auto& s = e.spec;
        s.name = pj.at("name").get<std::string>();
        s.base_url = pj.at("base_url").get<std::string>();
        s.api_flavor = client::parse_flavor(pj.value("api_flavor", std::string("chat")));
        s.model_name = pj.value("model", std::string());
        s.path = pj.value("path", std::string());
        s.request_timeout = pj.value("request_timeout_s", s.request_timeout);
        s.inter_request_delay = pj.value("inter_request_delay_s", s.inter_request_delay);
        if (auto t = pj.find("server_timing"); t != pj.end() && !t->is_null()) {
            client::ServerTimingRule rule;
            rule.header = t->value("header", std::string());
            rule.json_pointer = t->value("json_pointer", std::string());
            rule.unit = client::parse_unit(t->value("unit", std::string("ms")));
            rule.pattern = t->value("pattern", rule.pattern);
            s.server_timing_rule = rule;
        }
        s.validate();
        const auto& ids = pj.at("identities");
        e.identities.attacker = identity_from_json(ids.at("attacker"), client::IdentityLabel::Attacker);
        if (ids.contains("same_org_victim")) {
            e.identities.same_org_victim = identity_from_json(ids["same_org_victim"], client::IdentityLabel::Victim);
        }
        if (ids.contains("other_org_victim")) {
            e.identities.other_org_victim = identity_from_json(ids["other_org_victim"], client::IdentityLabel::Victim);
        }
        out.push_back(std::move(e));
    }
    return out;
}

void apply_config_json(AuditConfig& c, const json& j) {
    c.prompt_length = j.value("prompt_length", c.prompt_length);
    c.num_samples = j.value("num_samples", c.num_samples);
    c.alpha = j.value("alpha", c.alpha);
    c.prefix_fraction_exact = j.value("prefix_fraction_exact", c.prefix_fraction_exact);
    c.prefix_fraction_prefix = j.value("prefix_fraction_prefix", c.prefix_fraction_prefix);
    c.victim_request_ladder = j.value("victim_request_ladder", c.victim_request_ladder);
    c.level1_victim_requests = j.value("level1_victim_requests", c.level1_victim_requests);
    c.seed = j.value("seed", c.seed);
    c.level_max = j.value("level_max", c.level_max);
    c.max_trial_resamples = j.value("max_trial_resamples", c.max_trial_resamples);
}

json config_to_json(const AuditConfig& c) {
    return json{{"prompt_length", c.prompt_length},
                {"num_samples", c.num_samples},
                {"alpha", c.alpha},
                {"prefix_fraction_exact", c.prefix_fraction_exact},
                {"prefix_fraction_prefix", c.prefix_fraction_prefix},
                {"victim_request_ladder", c.victim_request_ladder},
                {"level1_victim_requests", c.level1_victim_requests},
                {"seed", c.seed},
                {"level_max", c.level_max},
                {"max_trial_resamples", c.max_trial_resamples}};
}

std::map<std::string, sim::IdentityRecord> default_sim_identities() {
    return {{"sk-sim-attacker", {"attacker", "org-a"}},
            {"sk-sim-colleague", {"colleague", "org-a"}},
            {"sk-sim-outsider", {"outsider", "org-b"}}};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Statistical audit of LLM APIs for prompt caching", "cacheaudit"};
    app.require_subcommand(1);

    AuditArgs audit_args;
    auto* audit_cmd = app.add_subcommand("audit", "Run the four-level caching audit");
    audit_cmd->add_option("--provider", audit_args.provider, "'sim' for the in-process simulator, or providers.json");
    audit_cmd->add_option("--name", audit_args.only, "Audit only this provider from the file");
    audit_cmd->add_option("--flavor", audit_args.flavor, "Simulator API flavor: chat, embedding, sim-native");
    audit_cmd->add_option("--out-dir", audit_args.out_dir, "Directory for report files");
    audit_cmd->add_option("--run-id", audit_args.run_id, "Override the generated run id");
    audit_cmd->add_flag("--quick", audit_args.cfg.quick, "Desk-scale profile: L=200, N=50, alpha=1e-3");
    audit_cmd->add_option("--seed", audit_args.cfg.seed, "RNG seed");
    audit_cmd->add_option("--prompt-length", audit_args.cfg.prompt_length, "Prompt length in tokens");
    audit_cmd->add_option("--num-samples", audit_args.cfg.num_samples, "Samples per procedure");
    audit_cmd->add_option("--alpha", audit_args.cfg.alpha, "Family-wise significance level");
    audit_cmd->add_option("--level-max", audit_args.cfg.level_max, "Stop after this level")->check(CLI::Range(1, 4));
    audit_cmd->add_option("--ladder", audit_args.cfg.ladder, "Victim request counts, e.g. 1,5,25");
    audit_args.sim.add_to(*audit_cmd);

    SimulateArgs sim_args;
    auto* sim_cmd = app.add_subcommand("simulate", "Serve the caching simulator over HTTP");
    sim_cmd->add_option("--config", sim_args.config, "Simulator JSON config");
    sim_cmd->add_option("--host", sim_args.host, "Bind address");
    sim_cmd->add_option("--port", sim_args.port, "Port; 0 picks a free one");
    sim_cmd->add_option("--seed", sim_args.seed, "RNG seed");
    sim_cmd->add_flag("--debug", sim_args.debug, "Expose cached prefix length in a response header");
    sim_cmd->add_flag("--no-delay", sim_args.no_delay, "Answer immediately instead of waiting out the ttft");
    sim_args.sim.add_to(*sim_cmd);

    AnalyzeArgs an_args;
    auto* an_cmd = app.add_subcommand("analyze", "Recompute statistics from samples, or run an ablation sweep");
    an_cmd->add_option("samples", an_args.samples, "Samples CSV from a prior run");
    an_cmd->add_option("--report", an_args.report, "Report JSON to check against");
    an_cmd->add_option("--out", an_args.out, "Write results as JSON");
    an_cmd->add_option("--plots", an_args.plots, "Write histogram and PR-curve data");
    an_cmd->add_option("--bins", an_args.bins, "Histogram bins")->check(CLI::PositiveNumber);
    an_cmd->add_option("--ablate", an_args.ablate, "prompt-length or prefix-fraction");
    an_cmd->add_option("--values", an_args.values, "Comma-separated sweep values");
    an_cmd->add_option("--prompt-length", an_args.prompt_length, "Prompt length when sweeping the fraction");
    an_cmd->add_option("--prefix-fraction", an_args.prefix_fraction, "Fraction when sweeping the length");
    an_cmd->add_option("--num-samples", an_args.num_samples, "Samples per procedure");
    an_cmd->add_option("--victim-requests", an_args.victim_requests, "Victim sends per hit trial");
    an_cmd->add_option("--seed", an_args.seed, "RNG seed");
    an_args.sim.add_to(*an_cmd);

    CostArgs cost_args;
    auto* cost_cmd = app.add_subcommand("cost", "Estimate prompt tokens and price of one test");
    cost_cmd->add_option("--prompt-length", cost_args.prompt_length, "Prompt length in tokens");
    cost_cmd->add_option("--num-samples", cost_args.num_samples, "Samples per procedure");
    cost_cmd->add_option("--victim-requests", cost_args.victim_requests, "Victim sends per hit trial");
    cost_cmd->add_option("--price", cost_args.price, "USD per million prompt tokens");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (audit_cmd->parsed()) return cmd_audit(audit_args, out);
        if (sim_cmd->parsed()) return cmd_simulate(sim_args, out);
        if (an_cmd->parsed()) return cmd_analyze(an_args, out, err);
        if (cost_cmd->parsed()) return cmd_cost(cost_args, out);
    } catch (const client::CredentialError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const audit::ConfigurationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const report::CsvParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitConfig;
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace cacheaudit::cli
