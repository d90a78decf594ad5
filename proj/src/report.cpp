// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cacheaudit/report.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace cacheaudit::report {

using nlohmann::json;
using audit::AuditReport;
using audit::TimingSample;
using audit::TimingSource;

// ---------------------------------------------------------------------------
// Embedding variants

namespace {

std::string hex_digest(const std::vector<std::uint64_t>& bits) {
    std::uint64_t h = 14695981039346656037ULL;
    for (std::uint64_t w : bits) {
        for (int i = 0; i < 8; ++i) {
            h ^= (w >> (8 * i)) & 0xffU;
            h *= 1099511628211ULL;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

std::vector<EmbeddingVariantCluster> cluster_embedding_variants(std::span<const EmbeddingResponse> responses) {
    if (responses.size() < 2) throw std::invalid_argument("clustering needs at least two responses");
    const std::size_t dim = responses.front().embedding.size();

    std::map<std::vector<std::uint64_t>, std::size_t> index_of;
    std::vector<EmbeddingVariantCluster> clusters;
    std::vector<double> time_sums;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const auto& e = responses[i].embedding;
        if (e.size() != dim) {
            throw std::invalid_argument("embedding " + std::to_string(i) + " has dimension " +
                                        std::to_string(e.size()) + ", expected " + std::to_string(dim));
        }
        std::vector<std::uint64_t> bits(dim);
        std::transform(e.begin(), e.end(), bits.begin(), [](double x) { return std::bit_cast<std::uint64_t>(x); });
        auto [it, fresh] = index_of.try_emplace(bits, clusters.size());
        if (fresh) {
            EmbeddingVariantCluster c;
            c.digest = hex_digest(bits);
            c.representative = e;
            clusters.push_back(std::move(c));
            time_sums.push_back(0.0);
        }
        auto& c = clusters[it->second];
        c.members.push_back(i);
        ++c.member_count;
        time_sums[it->second] += responses[i].time;
    }
    for (std::size_t k = 0; k < clusters.size(); ++k) {
        clusters[k].mean_time = time_sums[k] / static_cast<double>(clusters[k].member_count);
    }

    // Clusters were created in order of first occurrence, so a stable sort
    // keeps that order among equal counts.
    std::stable_sort(clusters.begin(), clusters.end(),
                     [](const auto& a, const auto& b) { return a.member_count > b.member_count; });
    clusters.front().modal = true;
    const auto& modal = clusters.front().representative;
    for (auto& c : clusters) {
        double dev = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dev = std::max(dev, std::abs(c.representative[d] - modal[d]));
        c.max_deviation = dev;
    }
    return clusters;
}

std::optional<std::size_t> fast_variant(const std::vector<EmbeddingVariantCluster>& clusters) {
    if (clusters.empty()) return std::nullopt;
    const double modal_time = clusters.front().mean_time;
    std::optional<std::size_t> best;
    for (std::size_t k = 1; k < clusters.size(); ++k) {
        if (clusters[k].mean_time >= modal_time) continue;
        if (!best || clusters[k].member_count > clusters[*best].member_count) best = k;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Architecture evidence

std::string to_string(ArchitectureVerdict v) {
    return v == ArchitectureVerdict::ConsistentWithDecoderOnly ? "consistent-with-decoder-only" : "inconclusive";
}

ArchitectureEvidence architecture_evidence(const AuditReport& report, bool suffix_output_check) {
    ArchitectureEvidence e;
    for (int l = 2; l <= 4; ++l) {
        if (report.levels[l - 1].status == audit::LevelStatus::Significant) e.prefix_hit_detected = true;
    }
    e.suffix_changes_output = suffix_output_check;
    e.verdict = e.prefix_hit_detected && e.suffix_changes_output ? ArchitectureVerdict::ConsistentWithDecoderOnly
                                                                 : ArchitectureVerdict::Inconclusive;
    return e;
}

// ---------------------------------------------------------------------------
// JSON

std::string format_pvalue(double p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1e", p);
    return buf;
}

json report_to_json(const AuditReport& report) {
    const AuditConfig& c = report.config;
    json sources = json::array();
    for (auto s : report.sources) sources.push_back(audit::to_string(s));

    json levels = json::array();
    for (const auto& lvl : report.levels) {
        json steps = json::array();
        for (const auto& step : lvl.steps) {
            json tests = json::array();
            for (const auto& t : step.tests) {
                tests.push_back({{"source", audit::to_string(t.source)},
                                 {"statistic", t.ks.statistic},
                                 {"p_value", t.ks.p_value},
                                 {"p_value_display", format_pvalue(t.ks.p_value)},
                                 {"threshold", t.threshold},
                                 {"significant", t.significant},
                                 {"m", t.ks.m},
                                 {"n", t.ks.n},
                                 {"average_precision", t.average_precision}});
            }
            steps.push_back({{"victim_requests", step.victim_requests},
                             {"significant", step.significant()},
                             {"tests", tests}});
        }
        levels.push_back({{"level", lvl.level},
                          {"prefix_fraction", lvl.prefix_fraction},
                          {"status", audit::to_string(lvl.status)},
                          {"first_significant_v",
                           lvl.first_significant_v ? json(*lvl.first_significant_v) : json(nullptr)},
                          {"steps", steps}});
    }

    json j{
        {"schema", "cacheaudit.report/1"},
        {"run_id", report.run_id},
        {"provider",
         {{"name", report.provider.name},
          {"flavor", report.provider.flavor},
          {"model", report.provider.model},
          {"base_url", report.provider.base_url}}},
        {"config",
         {{"prompt_length", c.prompt_length},
          {"num_samples", c.num_samples},
          {"alpha", c.alpha},
          {"prefix_fraction_exact", c.prefix_fraction_exact},
          {"prefix_fraction_prefix", c.prefix_fraction_prefix},
          {"victim_request_ladder", c.victim_request_ladder},
          {"level1_victim_requests", c.level1_victim_requests},
          {"level_max", c.level_max},
          {"max_trial_resamples", c.max_trial_resamples}}},
        {"seed", c.seed},
        {"timing_sources", sources},
        {"levels", levels},
        {"sharing_level", audit::to_string(report.classification)},
        {"partial", report.partial},
        {"abort_reason", report.partial ? json(report.abort_reason) : json(nullptr)},
        {"samples_csv", report.run_id + ".samples.csv"},
    };
    if (report.suffix_changes_output) {
        const auto ev = architecture_evidence(report, *report.suffix_changes_output);
        j["suffix_changes_output"] = *report.suffix_changes_output;
        j["architecture"] = {{"verdict", to_string(ev.verdict)},
                             {"prefix_hit_detected", ev.prefix_hit_detected},
                             {"suffix_changes_output", ev.suffix_changes_output}};
    } else {
        j["suffix_changes_output"] = nullptr;
    }
    return j;
}

AuditReport report_from_json(const json& j) {
    AuditReport r;
    r.run_id = j.at("run_id").get<std::string>();
    const auto& p = j.at("provider");
    r.provider = {p.at("name").get<std::string>(), p.at("flavor").get<std::string>(),
                  p.at("model").get<std::string>(), p.at("base_url").get<std::string>()};
    const auto& c = j.at("config");
    r.config.prompt_length = c.at("prompt_length").get<std::size_t>();
    r.config.num_samples = c.at("num_samples").get<std::size_t>();
    r.config.alpha = c.at("alpha").get<double>();
    r.config.prefix_fraction_exact = c.at("prefix_fraction_exact").get<double>();
    r.config.prefix_fraction_prefix = c.at("prefix_fraction_prefix").get<double>();
    r.config.victim_request_ladder = c.at("victim_request_ladder").get<std::vector<std::size_t>>();
    r.config.level1_victim_requests = c.at("level1_victim_requests").get<std::size_t>();
    r.config.level_max = c.at("level_max").get<int>();
    r.config.max_trial_resamples = c.at("max_trial_resamples").get<std::size_t>();
    r.config.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("timing_sources")) r.sources.push_back(audit::parse_source(s.get<std::string>()));

    const auto& levels = j.at("levels");
    if (levels.size() != 4) throw std::invalid_argument("report must list four levels");
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& lj = levels[i];
        auto& lvl = r.levels[i];
        lvl.level = lj.at("level").get<int>();
        lvl.prefix_fraction = lj.at("prefix_fraction").get<double>();
        lvl.status = audit::parse_level_status(lj.at("status").get<std::string>());
        if (!lj.at("first_significant_v").is_null()) lvl.first_significant_v = lj["first_significant_v"].get<std::size_t>();
        for (const auto& sj : lj.at("steps")) {
            audit::LadderStep step;
            step.victim_requests = sj.at("victim_requests").get<std::size_t>();
            for (const auto& tj : sj.at("tests")) {
                audit::SourceTest t;
                t.source = audit::parse_source(tj.at("source").get<std::string>());
                t.ks.statistic = tj.at("statistic").get<double>();
                t.ks.p_value = tj.at("p_value").get<double>();
                t.ks.m = tj.at("m").get<std::size_t>();
                t.ks.n = tj.at("n").get<std::size_t>();
                t.threshold = tj.at("threshold").get<double>();
                t.significant = tj.at("significant").get<bool>();
                t.average_precision = tj.at("average_precision").get<double>();
                step.tests.push_back(t);
            }
            lvl.steps.push_back(std::move(step));
        }
    }
    r.classification = audit::parse_sharing_level(j.at("sharing_level").get<std::string>());
    r.partial = j.at("partial").get<bool>();
    if (!j.at("abort_reason").is_null()) r.abort_reason = j["abort_reason"].get<std::string>();
    if (!j.at("suffix_changes_output").is_null()) r.suffix_changes_output = j["suffix_changes_output"].get<bool>();
    return r;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const auto next = line.find(',', pos);
        out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return out;
}

double parse_double(std::string_view field, std::size_t line, const char* name) {
    const std::string s(field);
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw CsvParseError(line, std::string("bad ") + name + " value '" + s + "'");
    }
}

std::size_t parse_count(std::string_view field, std::size_t line, const char* name) {
    const std::string s(field);
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
        throw CsvParseError(line, std::string("bad ") + name + " value '" + s + "'");
    }
    return static_cast<std::size_t>(std::stoull(s));
}

}  // namespace

std::string samples_to_csv(const std::vector<TimingSample>& samples) {
    std::string out(kCsvHeader);
    out.push_back('\n');
    for (const auto& s : samples) {
        out += audit::to_string(s.procedure);
        out += ',' + std::to_string(s.level);
        out += ',' + std::to_string(s.victim_requests_used);
        out += ',' + fmt17(s.client_ttft);
        out += ',' + (s.server_ttft ? fmt17(*s.server_ttft) : std::string());
        out += ',' + std::to_string(s.trial_index);
        out += ',' + fmt17(s.timestamp);
        out.push_back('\n');
    }
    return out;
}

std::vector<TimingSample> parse_samples_csv(std::string_view text) {
    std::vector<TimingSample> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool saw_header = false;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!saw_header) {
            if (line != kCsvHeader) throw CsvParseError(line_no, "unexpected header '" + std::string(line) + "'");
            saw_header = true;
            continue;
        }
        if (line.empty()) continue;
        const auto f = split_commas(line);
        if (f.size() != 7) {
            throw CsvParseError(line_no, "expected 7 fields, found " + std::to_string(f.size()));
        }
        TimingSample s;
        try {
            s.procedure = audit::parse_procedure(f[0]);
        } catch (const std::invalid_argument& e) {
            throw CsvParseError(line_no, e.what());
        }
        s.level = static_cast<int>(parse_count(f[1], line_no, "level"));
        if (s.level < 1 || s.level > 4) throw CsvParseError(line_no, "level must be 1..4");
        s.victim_requests_used = parse_count(f[2], line_no, "victim_requests");
        s.client_ttft = parse_double(f[3], line_no, "source_client_s");
        if (!f[4].empty()) s.server_ttft = parse_double(f[4], line_no, "source_server_s");
        s.trial_index = parse_count(f[5], line_no, "trial");
        s.timestamp = parse_double(f[6], line_no, "timestamp");
        out.push_back(s);
    }
    if (!saw_header) throw CsvParseError(1, "empty samples file");
    return out;
}

// ---------------------------------------------------------------------------
// Analysis

std::vector<StepAnalysis> analyze_samples(const std::vector<TimingSample>& samples, std::size_t bin_count) {
    std::vector<StepAnalysis> out;
    std::vector<std::vector<const TimingSample*>> groups;
    for (const auto& s : samples) {
        auto it = std::find_if(out.begin(), out.end(), [&](const StepAnalysis& a) {
            return a.level == s.level && a.victim_requests == s.victim_requests_used;
        });
        if (it == out.end()) {
            out.push_back({s.level, s.victim_requests_used, {}});
            groups.emplace_back();
            it = out.end() - 1;
        }
        groups[static_cast<std::size_t>(it - out.begin())].push_back(&s);
    }

    for (std::size_t g = 0; g < out.size(); ++g) {
        for (TimingSource src : {TimingSource::Client, TimingSource::Server}) {
            std::vector<double> hit, miss;
            bool complete = true;
            for (const TimingSample* s : groups[g]) {
                auto d = s->duration(src);
                if (!d) {
                    complete = false;
                    break;
                }
                (s->procedure == stats::Procedure::HitProc ? hit : miss).push_back(*d);
            }
            if (!complete || hit.empty() || miss.empty()) continue;
            out[g].sources.push_back(
                {src, stats::ks_one_sided(hit, miss), stats::pr_curve(hit, miss), stats::histogram(hit, miss, bin_count)});
        }
    }
    return out;
}

json plot_data_json(const std::vector<StepAnalysis>& analysis, const std::string& run_id) {
    json plots = json::array();
    for (const auto& step : analysis) {
        for (const auto& s : step.sources) {
            json points = json::array();
            for (const auto& pt : s.pr.points) points.push_back({pt.threshold, pt.precision, pt.recall});
            plots.push_back({{"level", step.level},
                             {"victim_requests", step.victim_requests},
                             {"source", audit::to_string(s.source)},
                             {"histogram",
                              {{"bin_edges", s.histogram.bin_edges},
                               {"hit_counts", s.histogram.hit_counts},
                               {"miss_counts", s.histogram.miss_counts}}},
                             {"pr_curve", {{"points", points}, {"average_precision", s.pr.average_precision}}}});
        }
    }
    return json{{"schema", "cacheaudit.plots/1"}, {"run_id", run_id}, {"plots", plots}};
}

json analysis_to_json(const std::vector<StepAnalysis>& analysis) {
    json steps = json::array();
    for (const auto& step : analysis) {
        json tests = json::array();
        for (const auto& s : step.sources) {
            tests.push_back({{"source", audit::to_string(s.source)},
                             {"statistic", s.ks.statistic},
                             {"p_value", s.ks.p_value},
                             {"p_value_display", format_pvalue(s.ks.p_value)},
                             {"m", s.ks.m},
                             {"n", s.ks.n},
                             {"average_precision", s.pr.average_precision}});
        }
        steps.push_back({{"level", step.level}, {"victim_requests", step.victim_requests}, {"tests", tests}});
    }
    return json{{"schema", "cacheaudit.analysis/1"}, {"steps", steps}};
}

ClosureCheck verify_closure(const json& report_json, const std::vector<StepAnalysis>& analysis) {
    ClosureCheck check;
    for (const auto& lj : report_json.at("levels")) {
        const int level = lj.at("level").get<int>();
        for (const auto& sj : lj.at("steps")) {
            const auto v = sj.at("victim_requests").get<std::size_t>();
            const auto step = std::find_if(analysis.begin(), analysis.end(), [&](const StepAnalysis& a) {
                return a.level == level && a.victim_requests == v;
            });
            for (const auto& tj : sj.at("tests")) {
                const std::string src = tj.at("source").get<std::string>();
                const std::string where = "level " + std::to_string(level) + " v=" + std::to_string(v) + " " + src;
                ++check.compared;
                if (step == analysis.end()) {
                    check.mismatches.push_back(where + ": no samples");
                    continue;
                }
                const auto s = std::find_if(step->sources.begin(), step->sources.end(), [&](const SourceAnalysis& a) {
                    return audit::to_string(a.source) == src;
                });
                if (s == step->sources.end()) {
                    check.mismatches.push_back(where + ": source missing from samples");
                    continue;
                }
                auto cmp = [&](const char* field, double recorded, double recomputed) {
                    if (recorded != recomputed) {
                        check.mismatches.push_back(where + " " + field + ": report " + fmt17(recorded) +
                                                   " vs recomputed " + fmt17(recomputed));
                    }
                };
                cmp("statistic", tj.at("statistic").get<double>(), s->ks.statistic);
                cmp("p_value", tj.at("p_value").get<double>(), s->ks.p_value);
                cmp("average_precision", tj.at("average_precision").get<double>(), s->pr.average_precision);
            }
        }
    }
    return check;
}

std::string emit_report(const AuditReport& report, Format format) {
    switch (format) {
        case Format::Json: return report_to_json(report).dump(2) + "\n";
        case Format::CsvSamples: return samples_to_csv(report.samples);
        case Format::PlotData: return plot_data_json(analyze_samples(report.samples), report.run_id).dump(2) + "\n";
    }
    return {};
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing: " + std::strerror(errno));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string() + ": " + std::strerror(errno));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

WrittenFiles write_report_files(const AuditReport& report, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
    WrittenFiles files{out_dir / (report.run_id + ".report.json"), out_dir / (report.run_id + ".samples.csv"),
                       out_dir / (report.run_id + ".plots.json")};
    write_text_file(files.report, emit_report(report, Format::Json));
    write_text_file(files.samples, emit_report(report, Format::CsvSamples));
    write_text_file(files.plots, emit_report(report, Format::PlotData));
    return files;
}

}  // namespace cacheaudit::report
