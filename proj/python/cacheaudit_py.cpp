// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cacheaudit/apiclient.hpp"
#include "cacheaudit/audit.hpp"
#include "cacheaudit/cachesim.hpp"
#include "cacheaudit/promptgen.hpp"
#include "cacheaudit/report.hpp"
#include "cacheaudit/stats.hpp"

namespace py = pybind11;
using namespace cacheaudit;

namespace {

std::string simulate_audit(const std::string& scope, std::size_t servers, bool quick, std::uint64_t seed,
                           std::optional<double> per_token) {
    AuditConfig cfg = quick ? AuditConfig::quick() : AuditConfig{};
    cfg.seed = seed;
    sim::CachePolicy policy;
    policy.scope = sim::parse_scope(scope);
    policy.num_servers = servers;
    sim::LatencyModel latency;
    if (quick) latency.per_token = 2.5e-4;
    if (per_token) latency.per_token = *per_token;
    Rng seeds = derive_rng(seed, 7);
    sim::SimulatedApi api(policy, latency, seeds());
    client::InProcessSimClient transport(api, client::ApiFlavor::ChatCompletion, seeds());
    auto r = audit::run_audit(transport, audit::simulator_identities(), cfg);
    r.run_id = "python";
    r.provider = {"sim", "chat", "simulated-" + scope, "in-process"};
    return report::report_to_json(r).dump();
}

}  // namespace

PYBIND11_MODULE(cacheaudit, m) {
    m.doc() = "Prompt caching audit: statistics, simulator and cost estimates";

    py::class_<stats::KsResult>(m, "KsResult")
        .def_readonly("statistic", &stats::KsResult::statistic)
        .def_readonly("p_value", &stats::KsResult::p_value)
        .def_readonly("m", &stats::KsResult::m)
        .def_readonly("n", &stats::KsResult::n)
        .def("__repr__", [](const stats::KsResult& r) {
            return "KsResult(statistic=" + std::to_string(r.statistic) + ", p_value=" + std::to_string(r.p_value) +
                   ")";
        });

    m.def("ks_one_sided",
          [](const std::vector<double>& hit, const std::vector<double>& miss) { return stats::ks_one_sided(hit, miss); },
          py::arg("hit_times"), py::arg("miss_times"),
          "One-sided two-sample KS test of hits being faster than misses.");
    m.def("exact_permutation_pvalue",
          [](const std::vector<double>& hit, const std::vector<double>& miss) {
              return stats::exact_permutation_pvalue(hit, miss);
          },
          py::arg("hit_times"), py::arg("miss_times"));
    m.def("average_precision",
          [](const std::vector<double>& hit, const std::vector<double>& miss) {
              return stats::pr_curve(hit, miss).average_precision;
          },
          py::arg("hit_times"), py::arg("miss_times"));
    m.def("bonferroni_threshold", &stats::bonferroni_threshold, py::arg("alpha"), py::arg("n_victim_settings"),
          py::arg("n_timing_sources"));
    m.def("prefix_collision_probability", &promptgen::prefix_collision_probability, py::arg("k"));
    m.def("sample_prompt",
          [](std::size_t length, std::uint64_t seed) {
              Rng rng = derive_rng(seed, 0);
              return promptgen::sample_prompt(length, rng).text();
          },
          py::arg("length"), py::arg("seed") = 0);
    m.def("estimate_cost",
          [](std::size_t prompt_length, std::size_t num_samples, std::size_t victim_requests, double price) {
              AuditConfig cfg;
              cfg.prompt_length = prompt_length;
              cfg.num_samples = num_samples;
              const auto c = client::estimate_cost(cfg, price, victim_requests);
              return py::make_tuple(c.prompt_tokens, c.usd, client::format_cost(c));
          },
          py::arg("prompt_length") = 5000, py::arg("num_samples") = 250, py::arg("victim_requests") = 25,
          py::arg("price") = 0.05, "Returns (prompt_tokens, usd, formatted).");
    m.def("simulate_audit", &simulate_audit, py::arg("scope") = "global", py::arg("servers") = 1,
          py::arg("quick") = true, py::arg("seed") = 0, py::arg("per_token") = py::none(),
          "Audits an in-process simulator and returns the report as a JSON string.");
    m.def("cluster_embedding_variants",
          [](const std::vector<double>& times, const std::vector<std::vector<double>>& embeddings) {
              if (times.size() != embeddings.size()) throw std::invalid_argument("times and embeddings differ in length");
              std::vector<report::EmbeddingResponse> rs;
              for (std::size_t i = 0; i < times.size(); ++i) rs.push_back({times[i], embeddings[i]});
              py::list out;
              for (const auto& c : report::cluster_embedding_variants(rs)) {
                  py::dict d;
                  d["digest"] = c.digest;
                  d["member_count"] = c.member_count;
                  d["mean_time"] = c.mean_time;
                  d["max_deviation"] = c.max_deviation;
                  d["modal"] = c.modal;
                  d["members"] = c.members;
                  out.append(d);
              }
              return out;
          },
          py::arg("times"), py::arg("embeddings"));
}
