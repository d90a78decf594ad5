// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "cacheaudit/report.hpp"

using namespace cacheaudit;
using namespace cacheaudit::report;
using audit::AuditReport;
using nlohmann::json;

namespace {

AuditReport quick_report(sim::CacheScope scope, std::uint64_t seed,
                         client::ApiFlavor flavor = client::ApiFlavor::SimNative) {
    sim::CachePolicy policy;
    policy.scope = scope;
    sim::LatencyModel lat;
    lat.per_token = 2.5e-4;
    sim::SimulatedApi api(policy, lat, seed);
    client::InProcessSimClient transport(api, flavor, seed + 1);
    AuditConfig cfg = AuditConfig::quick();
    cfg.seed = seed;
    auto r = audit::run_audit(transport, audit::simulator_identities(), cfg);
    r.run_id = "test-run-" + std::to_string(seed);
    r.provider = {"sim", client::to_string(flavor), "sim", "inproc://"};
    return r;
}

std::vector<EmbeddingResponse> load_table(const std::string& name) {
    std::ifstream in(std::string(CACHEAUDIT_FIXTURE_DIR) + "/embedding_variants.json");
    const json doc = json::parse(in);
    for (const auto& t : doc.at("tables")) {
        if (t.at("name") != name) continue;
        std::vector<EmbeddingResponse> out;
        for (const auto& row : t.at("rows")) {
            out.push_back({row.at("time_s").get<double>(), row.at("embedding").get<std::vector<double>>()});
        }
        return out;
    }
    throw std::runtime_error("no table " + name);
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("cacheaudit-test-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST(Clustering, AllIdentical) {
    std::vector<EmbeddingResponse> rs(10, {0.1, {1.0, 2.0, 3.0}});
    const auto cs = cluster_embedding_variants(rs);
    ASSERT_EQ(cs.size(), 1u);
    EXPECT_EQ(cs[0].member_count, 10u);
    EXPECT_TRUE(cs[0].modal);
    EXPECT_EQ(cs[0].max_deviation, 0.0);
    EXPECT_FALSE(fast_variant(cs));
}

TEST(Clustering, TwentyFourOne) {
    std::vector<EmbeddingResponse> rs;
    for (int i = 0; i < 20; ++i) rs.push_back({0.09, {0.5, 0.25}});
    for (int i = 0; i < 4; ++i) rs.push_back({0.03, {0.50002, 0.25}});
    rs.push_back({0.2, {0.49, 0.26}});
    std::rotate(rs.begin(), rs.begin() + 7, rs.end());
    const auto cs = cluster_embedding_variants(rs);
    ASSERT_EQ(cs.size(), 3u);
    EXPECT_EQ(cs[0].member_count, 20u);
    EXPECT_EQ(cs[1].member_count, 4u);
    EXPECT_EQ(cs[2].member_count, 1u);
    EXPECT_NEAR(cs[1].max_deviation, 2e-5, 1e-12);
    EXPECT_NEAR(cs[1].mean_time, 0.03, 1e-12);
    EXPECT_EQ(fast_variant(cs), 1u);
    std::size_t total = 0;
    for (const auto& c : cs) total += c.members.size();
    EXPECT_EQ(total, 25u);
}

TEST(Clustering, InvariantUnderPermutation) {
    auto rs = load_table("prompt-2");
    const auto base = cluster_embedding_variants(rs);
    Rng rng(8);
    for (int k = 0; k < 20; ++k) {
        std::shuffle(rs.begin(), rs.end(), rng);
        const auto cs = cluster_embedding_variants(rs);
        ASSERT_EQ(cs.size(), base.size());
        std::multiset<std::pair<std::string, std::size_t>> a, b;
        for (const auto& c : base) a.insert({c.digest, c.member_count});
        for (const auto& c : cs) b.insert({c.digest, c.member_count});
        EXPECT_EQ(a, b);
        EXPECT_EQ(cs[0].digest, base[0].digest);
    }
}

TEST(Clustering, RejectsRaggedInput) {
    std::vector<EmbeddingResponse> rs{{0.1, {1.0, 2.0}}, {0.1, {1.0}}};
    EXPECT_THROW(cluster_embedding_variants(rs), std::invalid_argument);
    std::vector<EmbeddingResponse> one{{0.1, {1.0}}};
    EXPECT_THROW(cluster_embedding_variants(one), std::invalid_argument);
}

TEST(Clustering, FixtureFastVariantIsFasterThanModal) {
    for (const char* name : {"prompt-1", "prompt-2", "prompt-3"}) {
        const auto cs = cluster_embedding_variants(load_table(name));
        const auto fast = fast_variant(cs);
        ASSERT_TRUE(fast) << name;
        EXPECT_LT(cs[*fast].mean_time, 0.5 * cs[0].mean_time) << name;
        EXPECT_GT(cs[*fast].max_deviation, 0.0) << name;
        EXPECT_LT(cs[*fast].max_deviation, 1e-4) << name;
    }
}

TEST(Architecture, Evidence) {
    AuditReport r;
    EXPECT_EQ(architecture_evidence(r, true).verdict, ArchitectureVerdict::Inconclusive);
    r.levels[1].status = audit::LevelStatus::Significant;
    const auto e = architecture_evidence(r, true);
    EXPECT_TRUE(e.prefix_hit_detected);
    EXPECT_EQ(e.verdict, ArchitectureVerdict::ConsistentWithDecoderOnly);
    EXPECT_EQ(architecture_evidence(r, false).verdict, ArchitectureVerdict::Inconclusive);
    // Exact-match caching alone says nothing about the architecture.
    AuditReport exact_only;
    exact_only.levels[0].status = audit::LevelStatus::Significant;
    EXPECT_FALSE(architecture_evidence(exact_only, true).prefix_hit_detected);
}

TEST(Json, RoundTripIsByteIdentical) {
    const auto r = quick_report(sim::CacheScope::PerOrg, 31);
    const std::string first = report_to_json(r).dump(2);
    const std::string second = report_to_json(report_from_json(json::parse(first))).dump(2);
    EXPECT_EQ(first, second);
}

TEST(Json, ContainsVerdictAndNoSecrets) {
    const auto r = quick_report(sim::CacheScope::Global, 32);
    const json j = report_to_json(r);
    EXPECT_EQ(j["sharing_level"], "global");
    EXPECT_EQ(j["partial"], false);
    EXPECT_EQ(j["samples_csv"], r.run_id + ".samples.csv");
    for (const auto& l : j["levels"]) {
        EXPECT_EQ(l["status"], "significant");
        const auto& last = l["steps"].back();
        bool any = false;
        for (const auto& t : last["tests"]) {
            any = any || t["significant"].get<bool>();
            if (t["significant"]) EXPECT_LT(t["p_value"].get<double>(), t["threshold"].get<double>());
            EXPECT_EQ(t["p_value_display"], format_pvalue(t["p_value"].get<double>()));
        }
        EXPECT_TRUE(any);
    }
    EXPECT_EQ(j.dump().find("sk-"), std::string::npos);
    EXPECT_TRUE(j["suffix_changes_output"].is_null());
    EXPECT_FALSE(j.contains("architecture"));
}

TEST(Json, EmbeddingReportCarriesArchitecture) {
    const auto r = quick_report(sim::CacheScope::Global, 33, client::ApiFlavor::Embedding);
    const json j = report_to_json(r);
    ASSERT_TRUE(j.contains("architecture"));
    EXPECT_EQ(j["architecture"]["verdict"], "consistent-with-decoder-only");
}

TEST(Json, PValueDisplay) {
    EXPECT_EQ(format_pvalue(1.0), "1.0e+00");
    EXPECT_EQ(format_pvalue(3.14159e-12), "3.1e-12");
}

TEST(Csv, RowCountAndRoundTrip) {
    const auto r = quick_report(sim::CacheScope::PerUser, 34);
    const std::string csv = samples_to_csv(r.samples);
    EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), r.samples.size() + 1);
    EXPECT_EQ(csv.substr(0, kCsvHeader.size()), kCsvHeader);
    const auto back = parse_samples_csv(csv);
    ASSERT_EQ(back.size(), r.samples.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].client_ttft, r.samples[i].client_ttft);
        EXPECT_EQ(back[i].server_ttft, r.samples[i].server_ttft);
        EXPECT_EQ(back[i].level, r.samples[i].level);
        EXPECT_EQ(back[i].procedure, r.samples[i].procedure);
    }
    EXPECT_EQ(samples_to_csv(back), csv);
}

TEST(Csv, MissingServerTimeIsEmptyField) {
    audit::TimingSample s;
    s.client_ttft = 0.5;
    s.level = 1;
    s.victim_requests_used = 25;
    const auto back = parse_samples_csv(samples_to_csv({s}));
    ASSERT_EQ(back.size(), 1u);
    EXPECT_FALSE(back[0].server_ttft);
}

TEST(Csv, ErrorsCarryLineNumbers) {
    const std::string header = std::string(kCsvHeader) + "\n";
    try {
        parse_samples_csv(header + "hit,2,1,0.1,0.05,0,0\nhit,2,1,abc,0.05,1,0\n");
        FAIL();
    } catch (const CsvParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    try {
        parse_samples_csv(header + "hit,2,1,0.1\n");
        FAIL();
    } catch (const CsvParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(parse_samples_csv("a,b,c\n"), CsvParseError);
    EXPECT_THROW(parse_samples_csv(header + "maybe,2,1,0.1,0.05,0,0\n"), CsvParseError);
}

TEST(Closure, ReanalysisReproducesReport) {
    const auto r = quick_report(sim::CacheScope::PerOrg, 35);
    const json j = json::parse(report_to_json(r).dump());
    const auto analysis = analyze_samples(parse_samples_csv(samples_to_csv(r.samples)));
    const auto check = verify_closure(j, analysis);
    EXPECT_TRUE(check.ok()) << (check.mismatches.empty() ? "" : check.mismatches.front());
    EXPECT_GT(check.compared, 4u);
}

TEST(Closure, DetectsTampering) {
    const auto r = quick_report(sim::CacheScope::PerOrg, 36);
    json j = report_to_json(r);
    j["levels"][1]["steps"][0]["tests"][0]["p_value"] = 0.5;
    const auto check = verify_closure(j, analyze_samples(r.samples));
    EXPECT_FALSE(check.ok());
    EXPECT_EQ(check.mismatches.size(), 1u);
}

TEST(Plots, SeparatedStepHasUnitAp) {
    const auto r = quick_report(sim::CacheScope::Global, 37);
    const auto analysis = analyze_samples(r.samples, 20);
    const json plots = plot_data_json(analysis, r.run_id);
    EXPECT_EQ(plots["schema"], "cacheaudit.plots/1");
    bool found = false;
    for (const auto& p : plots["plots"]) {
        EXPECT_EQ(p["histogram"]["bin_edges"].size(), 21u);
        const auto hits = p["histogram"]["hit_counts"].get<std::vector<std::size_t>>();
        EXPECT_EQ(std::accumulate(hits.begin(), hits.end(), std::size_t{0}), AuditConfig::quick().num_samples);
        if (p["level"] == 2 && p["source"] == "server") {
            EXPECT_NEAR(p["pr_curve"]["average_precision"].get<double>(), 1.0, 1e-12);
            found = true;
        }
    }
    EXPECT_TRUE(found);
}

TEST(Files, WritesThreeArtifacts) {
    const auto dir = scratch_dir("files");
    const auto r = quick_report(sim::CacheScope::Global, 38);
    const auto w = write_report_files(r, dir);
    EXPECT_EQ(w.report.filename(), r.run_id + ".report.json");
    EXPECT_TRUE(std::filesystem::exists(w.samples));
    EXPECT_TRUE(std::filesystem::exists(w.plots));
    const json j = json::parse(read_text_file(w.report));
    EXPECT_EQ(j["run_id"], r.run_id);
    EXPECT_EQ(parse_samples_csv(read_text_file(w.samples)).size(), r.samples.size());
    std::filesystem::remove_all(dir);
}
