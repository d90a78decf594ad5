// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <httplib.h>

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "cacheaudit/cli.hpp"
#include "cacheaudit/report.hpp"
#include "cacheaudit/sim_server.hpp"

using namespace cacheaudit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

Outcome invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(args, out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("cacheaudit-cli-" + name + "-" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

json read_json(const fs::path& p) { return json::parse(report::read_text_file(p)); }

// A local simulator plus a providers.json that points at it.
struct HttpSim {
    explicit HttpSim(sim::CacheScope scope, const fs::path& dir, json audit = json::object()) {
        sim::SimConfig cfg;
        cfg.policy.scope = scope;
        cfg.latency.per_token = 2.5e-4;
        cfg.identities = cli::default_sim_identities();
        server = std::make_unique<sim::SimHttpServer>(cfg);
        const int port = server->start("127.0.0.1", 0);
        json provider{{"name", "local"},
                      {"base_url", "http://127.0.0.1:" + std::to_string(port)},
                      {"api_flavor", "chat"},
                      {"model", "sim"},
                      {"inter_request_delay_s", 0.0},
                      {"server_timing", {{"header", "x-sim-processing-ms"}, {"unit", "ms"}}},
                      {"identities",
                       {{"attacker", {{"env", "CACHEAUDIT_TEST_ATTACKER"}, {"user", "attacker"}, {"org", "org-a"}}},
                        {"same_org_victim",
                         {{"env", "CACHEAUDIT_TEST_COLLEAGUE"}, {"user", "colleague"}, {"org", "org-a"}}},
                        {"other_org_victim",
                         {{"env", "CACHEAUDIT_TEST_OUTSIDER"}, {"user", "outsider"}, {"org", "org-b"}}}}}};
        path = dir / "providers.json";
        report::write_text_file(path, json{{"audit", audit}, {"providers", {provider}}}.dump(2));
        setenv("CACHEAUDIT_TEST_ATTACKER", "sk-sim-attacker", 1);
        setenv("CACHEAUDIT_TEST_COLLEAGUE", "sk-sim-colleague", 1);
        setenv("CACHEAUDIT_TEST_OUTSIDER", "sk-sim-outsider", 1);
    }
    ~HttpSim() { server->stop(); }

    std::unique_ptr<sim::SimHttpServer> server;
    fs::path path;
};

}  // namespace

TEST(Cli, CostDefaults) {
    const auto o = invoke({"cost"});
    EXPECT_EQ(o.code, 0);
    EXPECT_EQ(o.out, "33,750,000 tokens, $1.69\n");
    EXPECT_EQ(invoke({"cost", "--price", "0.25"}).out, "33,750,000 tokens, $8.44\n");
    EXPECT_EQ(invoke({"cost", "--victim-requests", "1"}).out, "3,750,000 tokens, $0.19\n");
    EXPECT_EQ(invoke({"cost", "--num-samples", "0"}).out, "0 tokens, $0.00\n");
}

TEST(Cli, ExitCodesForBadUsage) {
    EXPECT_EQ(invoke({}).code, 2);
    EXPECT_EQ(invoke({"frobnicate"}).code, 2);
    EXPECT_EQ(invoke({"cost", "--price", "lots"}).code, 2);
    EXPECT_EQ(invoke({"audit", "--level-max", "7"}).code, 2);
    EXPECT_EQ(invoke({"audit", "--provider", "/nonexistent/providers.json"}).code, 2);
    EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST(Cli, QuickSimAuditFindsGlobalSharing) {
    const auto dir = scratch("global");
    const auto t0 = std::chrono::steady_clock::now();
    const auto o = invoke({"audit", "--provider", "sim", "--quick", "--policy", "global", "--seed", "3", "--out-dir",
                        dir.string(), "--run-id", "g1"});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_LT(secs, 60.0);
    EXPECT_NE(o.out.find("sharing level: global"), std::string::npos) << o.out;
    const auto report = read_json(dir / "g1.report.json");
    EXPECT_EQ(report["sharing_level"], "global");
    EXPECT_TRUE(fs::exists(dir / "g1.samples.csv"));
    EXPECT_TRUE(fs::exists(dir / "g1.plots.json"));
    const auto manifest = read_json(dir / "g1.manifest.json");
    EXPECT_EQ(manifest["seed"], 3);
    EXPECT_EQ(manifest["config"]["num_samples"], 50);
    fs::remove_all(dir);
}

TEST(Cli, QuickSimAuditDisabledFindsNothing) {
    const auto dir = scratch("disabled");
    const auto o = invoke({"audit", "--quick", "--policy", "disabled", "--out-dir", dir.string(), "--run-id", "d1"});
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_NE(o.out.find("sharing level: none"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Cli, LevelMaxTwoStopsAfterLevelTwo) {
    const auto dir = scratch("lmax");
    const auto o = invoke({"audit", "--quick", "--level-max", "2", "--out-dir", dir.string(), "--run-id", "l2"});
    ASSERT_EQ(o.code, 0) << o.err;
    const auto r = read_json(dir / "l2.report.json");
    EXPECT_EQ(r["levels"][1]["status"], "significant");
    EXPECT_EQ(r["levels"][2]["status"], "not-reached");
    EXPECT_EQ(r["levels"][3]["status"], "not-reached");
    fs::remove_all(dir);
}

TEST(Cli, EnvironmentOverridesDefaultsAndFlagsOverrideEnvironment) {
    const auto dir = scratch("env");
    setenv("CACHEAUDIT_NUM_SAMPLES", "20", 1);
    auto o = invoke({"audit", "--quick", "--level-max", "1", "--out-dir", dir.string(), "--run-id", "e1"});
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_EQ(read_json(dir / "e1.manifest.json")["config"]["num_samples"], 20);
    o = invoke({"audit", "--quick", "--level-max", "1", "--num-samples", "10", "--out-dir", dir.string(), "--run-id",
             "e2"});
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_EQ(read_json(dir / "e2.manifest.json")["config"]["num_samples"], 10);
    unsetenv("CACHEAUDIT_NUM_SAMPLES");
    setenv("CACHEAUDIT_OUT_DIR", dir.string().c_str(), 1);
    o = invoke({"audit", "--quick", "--level-max", "1", "--run-id", "e3"});
    unsetenv("CACHEAUDIT_OUT_DIR");
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_TRUE(fs::exists(dir / "e3.report.json"));
    fs::remove_all(dir);
}

TEST(Cli, HttpProviderAuditAndConfigPrecedence) {
    const auto dir = scratch("http");
    HttpSim sim(sim::CacheScope::PerOrg, dir, json{{"num_samples", 24},
                                                     {"prompt_length", 200},
                                                     {"alpha", 1e-3},
                                                     {"level1_victim_requests", 3},
                                                     {"victim_request_ladder", {1}}});
    auto o = invoke({"audit", "--provider", sim.path.string(), "--out-dir", dir.string(), "--run-id", "h1"});
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_NE(o.out.find("sharing level: per-org"), std::string::npos) << o.out;
    EXPECT_EQ(read_json(dir / "h1.manifest.json")["config"]["num_samples"], 24);

    setenv("CACHEAUDIT_NUM_SAMPLES", "30", 1);
    o = invoke({"audit", "--provider", sim.path.string(), "--level-max", "1", "--out-dir", dir.string(), "--run-id",
             "h2"});
    EXPECT_EQ(read_json(dir / "h2.manifest.json")["config"]["num_samples"], 30);
    o = invoke({"audit", "--provider", sim.path.string(), "--level-max", "1", "--num-samples", "20", "--out-dir",
             dir.string(), "--run-id", "h3"});
    unsetenv("CACHEAUDIT_NUM_SAMPLES");
    EXPECT_EQ(read_json(dir / "h3.manifest.json")["config"]["num_samples"], 20);
    fs::remove_all(dir);
}

TEST(Cli, MissingCredentialIsNamedAndNothingIsSent) {
    const auto dir = scratch("cred");
    HttpSim sim(sim::CacheScope::Global, dir);
    setenv("CACHEAUDIT_TEST_ATTACKER", "sk-do-not-print-me", 1);
    unsetenv("CACHEAUDIT_TEST_OUTSIDER");
    const auto o = invoke({"audit", "--provider", sim.path.string(), "--out-dir", dir.string(), "--run-id", "c1"});
    EXPECT_EQ(o.code, 2);
    EXPECT_NE(o.err.find("CACHEAUDIT_TEST_OUTSIDER"), std::string::npos) << o.err;
    EXPECT_EQ(o.err.find("sk-do-not-print-me"), std::string::npos);
    EXPECT_EQ(o.out.find("sk-do-not-print-me"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "c1.report.json"));
    fs::remove_all(dir);
}

TEST(Cli, AnalyzeReproducesReport) {
    const auto dir = scratch("analyze");
    ASSERT_EQ(invoke({"audit", "--quick", "--policy", "per-org", "--out-dir", dir.string(), "--run-id", "a1"}).code, 0);
    const auto o = invoke({"analyze", (dir / "a1.samples.csv").string(), "--report", (dir / "a1.report.json").string(),
                        "--out", (dir / "a1.analysis.json").string(), "--plots", (dir / "a1.replots.json").string()});
    EXPECT_EQ(o.code, 0) << o.err;
    EXPECT_NE(o.out.find("reproduced exactly"), std::string::npos);
    EXPECT_EQ(read_json(dir / "a1.analysis.json")["schema"], "cacheaudit.analysis/1");
    EXPECT_EQ(read_json(dir / "a1.replots.json")["plots"], read_json(dir / "a1.plots.json")["plots"]);

    auto tampered = read_json(dir / "a1.report.json");
    tampered["levels"][0]["steps"][0]["tests"][0]["statistic"] = 0.123;
    report::write_text_file(dir / "bad.report.json", tampered.dump());
    const auto bad = invoke({"analyze", (dir / "a1.samples.csv").string(), "--report", (dir / "bad.report.json").string()});
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("mismatch"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Cli, AnalyzeReportsMalformedLine) {
    const auto dir = scratch("malformed");
    report::write_text_file(dir / "s.csv", std::string(report::kCsvHeader) + "\nhit,2,1,0.1,,0,0\nhit,2,x,0.1,,1,0\n");
    const auto o = invoke({"analyze", (dir / "s.csv").string()});
    EXPECT_EQ(o.code, 1);
    EXPECT_NE(o.err.find("line 3"), std::string::npos) << o.err;
    fs::remove_all(dir);
}

TEST(Cli, AblationPrintsTableAndCorrelation) {
    const auto o = invoke({"analyze", "--ablate", "prompt-length", "--values", "10,100,1000", "--num-samples", "60",
                        "--seed", "4"});
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_NE(o.out.find("prompt_length"), std::string::npos);
    EXPECT_NE(o.out.find("spearman rho(value, AP)"), std::string::npos);
    EXPECT_EQ(invoke({"analyze", "--ablate", "temperature", "--values", "1,2"}).code, 2);
}

namespace {

struct Child {
    pid_t pid = -1;
    int out_fd = -1;
};

Child spawn(const std::vector<std::string>& args) {
    int fds[2];
    if (pipe(fds) != 0) throw std::runtime_error("pipe");
    const pid_t pid = fork();
    if (pid == 0) {
        dup2(fds[1], STDOUT_FILENO);
        close(fds[0]);
        close(fds[1]);
        std::vector<char*> argv;
        std::string bin = CACHEAUDIT_CLI_PATH;
        argv.push_back(bin.data());
        std::vector<std::string> copy = args;
        for (auto& a : copy) argv.push_back(a.data());
        argv.push_back(nullptr);
        execv(bin.c_str(), argv.data());
        _exit(127);
    }
    close(fds[1]);
    return {pid, fds[0]};
}

std::string read_until(int fd, const std::string& marker) {
    std::string buf;
    char c;
    while (buf.find(marker) == std::string::npos && read(fd, &c, 1) == 1) buf.push_back(c);
    return buf;
}

}  // namespace

TEST(CliProcess, SimulateServesAndStopsOnSigterm) {
    Child child = spawn({"simulate", "--port", "0", "--debug", "--no-delay", "--policy", "per-user"});
    const std::string banner = read_until(child.out_fd, "policy");
    const auto pos = banner.find("port ");
    ASSERT_NE(pos, std::string::npos) << banner;
    const int port = std::stoi(banner.substr(pos + 5));
    EXPECT_GT(port, 0);

    httplib::Client http("127.0.0.1", port);
    auto health = http.Get("/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    const httplib::Headers auth{{"Authorization", "Bearer sk-sim-attacker"}};
    auto res = http.Post("/v1/chat/completions", auth,
                         R"({"model":"sim","messages":[{"role":"user","content":"a b c"}],"max_tokens":1})",
                         "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_TRUE(res->has_header("x-sim-cached-tokens"));

    kill(child.pid, SIGTERM);
    int status = 0;
    waitpid(child.pid, &status, 0);
    close(child.out_fd);
    ASSERT_TRUE(WIFEXITED(status));
    EXPECT_EQ(WEXITSTATUS(status), 0);
}

TEST(CliProcess, SimulateConfigFileWithFlagOverride) {
    const auto dir = scratch("simcfg");
    sim::SimConfig cfg;
    cfg.policy.scope = sim::CacheScope::Global;
    cfg.policy.num_servers = 3;
    report::write_text_file(dir / "sim.json", sim::sim_config_to_json(cfg).dump());
    Child child = spawn({"simulate", "--config", (dir / "sim.json").string(), "--port", "0", "--policy", "per-org"});
    const std::string banner = read_until(child.out_fd, "ttl");
    EXPECT_NE(banner.find("policy per-org, 3 server(s)"), std::string::npos) << banner;
    kill(child.pid, SIGINT);
    int status = 0;
    waitpid(child.pid, &status, 0);
    close(child.out_fd);
    EXPECT_TRUE(WIFEXITED(status) && WEXITSTATUS(status) == 0);
    fs::remove_all(dir);
}

TEST(CliProcess, BinaryExitCodes) {
    const std::string bin = CACHEAUDIT_CLI_PATH;
    EXPECT_EQ(WEXITSTATUS(std::system((bin + " cost > /dev/null").c_str())), 0);
    EXPECT_EQ(WEXITSTATUS(std::system((bin + " bogus > /dev/null 2>&1").c_str())), 2);
}
