// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cacheaudit/random.hpp"

namespace cacheaudit::stats {

/// One-sided two-sample Kolmogorov-Smirnov outcome. The statistic is
/// D+ = max_t (F_hit(t) - F_miss(t)), so large values mean hits are faster.
struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t m = 0;  // hit samples
    std::size_t n = 0;  // miss samples
};

struct PrPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

struct PrCurve {
    std::vector<PrPoint> points;  // strictest threshold first
    double average_precision = 0.0;
};

struct Histogram {
    std::vector<double> bin_edges;  // bin_count + 1 ascending edges
    std::vector<std::size_t> hit_counts;
    std::vector<std::size_t> miss_counts;
};

enum class Procedure { HitProc, MissProc };

struct LabeledDuration {
    double duration = 0.0;
    Procedure label = Procedure::MissProc;
};

/// Fraction of `sample` less than or equal to t.
double ecdf_value(std::span<const double> sample, double t);

/// D+ only; shared by the asymptotic test and the permutation oracle.
double ks_statistic(std::span<const double> hit_times, std::span<const double> miss_times);

/// Asymptotic one-sided p-value exp(-2 D^2 mn/(m+n)), clamped to [0, 1].
double ks_asymptotic_pvalue(double statistic, std::size_t m, std::size_t n);

KsResult ks_one_sided(std::span<const double> hit_times, std::span<const double> miss_times);

/// Largest C(m+n, m) for which permutation_pvalue enumerates every split.
inline constexpr std::uint64_t kExhaustiveLimit = 100000;

/// Number of ways to choose k of n, saturating at UINT64_MAX.
std::uint64_t binomial(std::size_t n, std::size_t k);

/// Permutation p-value for the observed D+. Enumerates all C(m+n, m) splits
/// when that count is at most kExhaustiveLimit and returns the exact
/// fraction; otherwise runs `iterations` random relabelings and returns
/// (1 + #{D+* >= D+}) / (1 + iterations).
double permutation_pvalue(std::span<const double> hit_times, std::span<const double> miss_times,
                          std::size_t iterations, Rng& rng);

/// Exact permutation p-value by full enumeration. Throws if C(m+n, m) exceeds
/// kExhaustiveLimit.
double exact_permutation_pvalue(std::span<const double> hit_times, std::span<const double> miss_times);

/// Per-test significance threshold after dividing alpha by both counts.
double bonferroni_threshold(double alpha, std::size_t n_victim_settings, std::size_t n_timing_sources);

/// Precision-recall sweep for "duration <= threshold predicts a hit-procedure
/// sample". Tied durations enter the sweep together.
PrCurve pr_curve(std::span<const LabeledDuration> samples);

/// Convenience overload for two unlabeled samples.
PrCurve pr_curve(std::span<const double> hit_times, std::span<const double> miss_times);

/// Equal-width bins over the pooled [min, max]. Degenerate ranges collapse to
/// a single bin.
Histogram histogram(std::span<const double> hit_times, std::span<const double> miss_times,
                    std::size_t bin_count = 30);

/// Spearman rank correlation with average ranks for ties.
double spearman_rho(std::span<const double> x, std::span<const double> y);

}  // namespace cacheaudit::stats
