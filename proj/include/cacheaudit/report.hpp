// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cacheaudit/audit.hpp"
#include "cacheaudit/stats.hpp"

namespace cacheaudit::report {

// ---------------------------------------------------------------------------
// Embedding variants

struct EmbeddingResponse {
    double time = 0.0;  // seconds
    std::vector<double> embedding;
};

struct EmbeddingVariantCluster {
    std::string digest;  // hex digest of the representative's bit pattern
    std::vector<double> representative;
    std::size_t member_count = 0;
    double mean_time = 0.0;
    double max_deviation = 0.0;  // max |coordinate - modal coordinate|
    bool modal = false;
    std::vector<std::size_t> members;  // input indices, ascending
};

/// Groups responses by bit-exact embedding equality. Sorted by member count
/// (descending), ties broken by earliest first occurrence; the first entry is
/// the modal cluster. Throws std::invalid_argument on fewer than two
/// responses or mismatched dimensions.
std::vector<EmbeddingVariantCluster> cluster_embedding_variants(std::span<const EmbeddingResponse> responses);

/// Largest non-modal cluster whose mean time is below the modal cluster's,
/// i.e. the variant returned on cache hits. Index into `clusters`.
std::optional<std::size_t> fast_variant(const std::vector<EmbeddingVariantCluster>& clusters);

// ---------------------------------------------------------------------------
// Architecture evidence

enum class ArchitectureVerdict { ConsistentWithDecoderOnly, Inconclusive };

struct ArchitectureEvidence {
    ArchitectureVerdict verdict = ArchitectureVerdict::Inconclusive;
    bool prefix_hit_detected = false;
    bool suffix_changes_output = false;
};

std::string to_string(ArchitectureVerdict v);

/// Prefix reuse across differing suffixes (any of levels 2-4 significant)
/// together with suffix-dependent output points to causal attention.
ArchitectureEvidence architecture_evidence(const audit::AuditReport& report, bool suffix_output_check);

// ---------------------------------------------------------------------------
// Serialization

enum class Format { Json, CsvSamples, PlotData };

inline constexpr std::string_view kCsvHeader =
    "procedure,level,victim_requests,source_client_s,source_server_s,trial,timestamp";

/// Two significant digits, scientific: 1.7e-09.
std::string format_pvalue(double p);

nlohmann::json report_to_json(const audit::AuditReport& report);
/// Inverse of report_to_json; samples are not part of the JSON.
audit::AuditReport report_from_json(const nlohmann::json& j);

std::string samples_to_csv(const std::vector<audit::TimingSample>& samples);

class CsvParseError : public std::runtime_error {
public:
    CsvParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

std::vector<audit::TimingSample> parse_samples_csv(std::string_view text);

struct SourceAnalysis {
    audit::TimingSource source = audit::TimingSource::Client;
    stats::KsResult ks;
    stats::PrCurve pr;
    stats::Histogram histogram;
};

struct StepAnalysis {
    int level = 0;
    std::size_t victim_requests = 0;
    std::vector<SourceAnalysis> sources;
};

/// Recomputes KS, PR curves and histograms per (level, v) from raw samples,
/// in order of first appearance.
std::vector<StepAnalysis> analyze_samples(const std::vector<audit::TimingSample>& samples,
                                          std::size_t bin_count = 30);

nlohmann::json plot_data_json(const std::vector<StepAnalysis>& analysis, const std::string& run_id = {});
nlohmann::json analysis_to_json(const std::vector<StepAnalysis>& analysis);

struct ClosureCheck {
    std::size_t compared = 0;
    std::vector<std::string> mismatches;
    bool ok() const { return compared > 0 && mismatches.empty(); }
};

/// Compares every statistic, p-value and AP in a report JSON with a fresh
/// analysis, using exact floating-point equality.
ClosureCheck verify_closure(const nlohmann::json& report_json, const std::vector<StepAnalysis>& analysis);

std::string emit_report(const audit::AuditReport& report, Format format);

struct WrittenFiles {
    std::filesystem::path report;
    std::filesystem::path samples;
    std::filesystem::path plots;
};

/// Writes <run-id>.report.json, <run-id>.samples.csv and <run-id>.plots.json.
/// Throws std::runtime_error naming the path on I/O failure.
WrittenFiles write_report_files(const audit::AuditReport& report, const std::filesystem::path& out_dir);

void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace cacheaudit::report
