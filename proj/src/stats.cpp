// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cacheaudit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cacheaudit::stats {

namespace {

void require_nonempty(std::span<const double> s, const char* what) {
    if (s.empty()) throw std::invalid_argument(std::string(what) + " sample must be non-empty");
}

// Pooled sample sorted ascending. `group_end[i]` is true when position i is
// the last of its run of equal values, i.e. a point where both ECDFs may be
// evaluated.
struct Pooled {
    std::vector<double> values;
    std::vector<bool> is_hit;
    std::vector<bool> group_end;
};

Pooled pool(std::span<const double> hit, std::span<const double> miss) {
    std::vector<std::pair<double, bool>> all;
    all.reserve(hit.size() + miss.size());
    for (double v : hit) all.emplace_back(v, true);
    for (double v : miss) all.emplace_back(v, false);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    Pooled p;
    p.values.reserve(all.size());
    p.is_hit.reserve(all.size());
    for (const auto& [v, h] : all) {
        p.values.push_back(v);
        p.is_hit.push_back(h);
    }
    p.group_end.resize(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        p.group_end[i] = (i + 1 == all.size()) || p.values[i + 1] != p.values[i];
    }
    return p;
}

// max_t (h(t) * n - s(t) * m) in exact integer arithmetic, floored at 0.
// D+ is this value divided by m * n.
template <typename LabelAt>
std::int64_t scaled_dplus(const std::vector<bool>& group_end, std::int64_t m, std::int64_t n, LabelAt label_at) {
    std::int64_t h = 0, s = 0, best = 0;
    for (std::size_t i = 0; i < group_end.size(); ++i) {
        if (label_at(i)) ++h; else ++s;
        if (group_end[i]) best = std::max(best, h * n - s * m);
    }
    return best;
}

double to_statistic(std::int64_t scaled, std::size_t m, std::size_t n) {
    return static_cast<double>(scaled) / (static_cast<double>(m) * static_cast<double>(n));
}

}  // namespace

double ecdf_value(std::span<const double> sample, double t) {
    require_nonempty(sample, "ECDF");
    const auto count = std::count_if(sample.begin(), sample.end(), [t](double v) { return v <= t; });
    return static_cast<double>(count) / static_cast<double>(sample.size());
}

double ks_statistic(std::span<const double> hit_times, std::span<const double> miss_times) {
    require_nonempty(hit_times, "hit");
    require_nonempty(miss_times, "miss");
    const Pooled p = pool(hit_times, miss_times);
    const auto m = static_cast<std::int64_t>(hit_times.size());
    const auto n = static_cast<std::int64_t>(miss_times.size());
    return to_statistic(scaled_dplus(p.group_end, m, n, [&](std::size_t i) { return p.is_hit[i]; }),
                        hit_times.size(), miss_times.size());
}

double ks_asymptotic_pvalue(double statistic, std::size_t m, std::size_t n) {
    const double md = static_cast<double>(m);
    const double nd = static_cast<double>(n);
    const double p = std::exp(-2.0 * statistic * statistic * md * nd / (md + nd));
    return std::clamp(p, 0.0, 1.0);
}

KsResult ks_one_sided(std::span<const double> hit_times, std::span<const double> miss_times) {
    KsResult r;
    r.statistic = ks_statistic(hit_times, miss_times);
    r.m = hit_times.size();
    r.n = miss_times.size();
    r.p_value = ks_asymptotic_pvalue(r.statistic, r.m, r.n);
    return r;
}

std::uint64_t binomial(std::size_t n, std::size_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 acc = 1;
    for (std::size_t i = 1; i <= k; ++i) {
        acc = acc * (n - k + i) / i;
        if (acc > std::numeric_limits<std::uint64_t>::max()) return std::numeric_limits<std::uint64_t>::max();
    }
    return static_cast<std::uint64_t>(acc);
}

double exact_permutation_pvalue(std::span<const double> hit_times, std::span<const double> miss_times) {
    require_nonempty(hit_times, "hit");
    require_nonempty(miss_times, "miss");
    const std::size_t m = hit_times.size();
    const std::size_t total = m + miss_times.size();
    const std::uint64_t splits = binomial(total, m);
    if (splits > kExhaustiveLimit) throw std::invalid_argument("too many splits for exhaustive enumeration");

    const Pooled p = pool(hit_times, miss_times);
    const auto mi = static_cast<std::int64_t>(m);
    const auto ni = static_cast<std::int64_t>(miss_times.size());
    const std::int64_t observed = scaled_dplus(p.group_end, mi, ni, [&](std::size_t i) { return p.is_hit[i]; });

    // Walk all m-subsets of pooled positions in lexicographic order.
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<bool> label(total, false);
    std::uint64_t at_least = 0, seen = 0;
    while (true) {
        std::fill(label.begin(), label.end(), false);
        for (std::size_t i : idx) label[i] = true;
        if (scaled_dplus(p.group_end, mi, ni, [&](std::size_t i) { return label[i]; }) >= observed) ++at_least;
        ++seen;

        std::size_t k = m;
        while (k > 0 && idx[k - 1] == total - m + (k - 1)) --k;
        if (k == 0) break;
        ++idx[k - 1];
        for (std::size_t j = k; j < m; ++j) idx[j] = idx[j - 1] + 1;
    }
    return static_cast<double>(at_least) / static_cast<double>(seen);
}

double permutation_pvalue(std::span<const double> hit_times, std::span<const double> miss_times,
                          std::size_t iterations, Rng& rng) {
    require_nonempty(hit_times, "hit");
    require_nonempty(miss_times, "miss");
    const std::size_t m = hit_times.size();
    const std::size_t total = m + miss_times.size();
    const std::uint64_t splits = binomial(total, m);
    // Enumeration costs splits * total steps; very lopsided samples (m = 1,
    // n in the tens of thousands) fall back to resampling.
    if (splits <= kExhaustiveLimit && splits * total <= 50'000'000ULL) {
        return exact_permutation_pvalue(hit_times, miss_times);
    }
    if (iterations == 0) throw std::invalid_argument("permutation test needs at least one iteration");

    const Pooled p = pool(hit_times, miss_times);
    const auto mi = static_cast<std::int64_t>(m);
    const auto ni = static_cast<std::int64_t>(miss_times.size());
    const std::int64_t observed = scaled_dplus(p.group_end, mi, ni, [&](std::size_t i) { return p.is_hit[i]; });

    std::vector<char> label(total, 0);
    std::fill(label.begin(), label.begin() + static_cast<std::ptrdiff_t>(m), 1);
    std::size_t at_least = 0;
    for (std::size_t it = 0; it < iterations; ++it) {
        std::shuffle(label.begin(), label.end(), rng);
        if (scaled_dplus(p.group_end, mi, ni, [&](std::size_t i) { return label[i] != 0; }) >= observed) {
            ++at_least;
        }
    }
    return static_cast<double>(1 + at_least) / static_cast<double>(1 + iterations);
}

double bonferroni_threshold(double alpha, std::size_t n_victim_settings, std::size_t n_timing_sources) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (n_victim_settings == 0 || n_timing_sources == 0) {
        throw std::invalid_argument("Bonferroni counts must be >= 1");
    }
    return alpha / (static_cast<double>(n_victim_settings) * static_cast<double>(n_timing_sources));
}

PrCurve pr_curve(std::span<const LabeledDuration> samples) {
    std::vector<LabeledDuration> sorted(samples.begin(), samples.end());
    const auto positives = std::count_if(sorted.begin(), sorted.end(),
                                         [](const LabeledDuration& s) { return s.label == Procedure::HitProc; });
    if (positives == 0 || positives == static_cast<std::ptrdiff_t>(sorted.size())) {
        throw std::invalid_argument("PR curve needs at least one hit-procedure and one miss-procedure sample");
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const LabeledDuration& a, const LabeledDuration& b) { return a.duration < b.duration; });

    PrCurve curve;
    std::size_t tp = 0, fp = 0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        const double threshold = sorted[i].duration;
        for (; i < sorted.size() && sorted[i].duration == threshold; ++i) {
            if (sorted[i].label == Procedure::HitProc) ++tp; else ++fp;
        }
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double recall = static_cast<double>(tp) / static_cast<double>(positives);
        curve.average_precision += (recall - prev_recall) * precision;
        prev_recall = recall;
        curve.points.push_back({threshold, precision, recall});
    }
    curve.average_precision = std::clamp(curve.average_precision, 0.0, 1.0);
    return curve;
}

PrCurve pr_curve(std::span<const double> hit_times, std::span<const double> miss_times) {
    std::vector<LabeledDuration> samples;
    samples.reserve(hit_times.size() + miss_times.size());
    for (double v : hit_times) samples.push_back({v, Procedure::HitProc});
    for (double v : miss_times) samples.push_back({v, Procedure::MissProc});
    return pr_curve(samples);
}

Histogram histogram(std::span<const double> hit_times, std::span<const double> miss_times, std::size_t bin_count) {
    require_nonempty(hit_times, "hit");
    require_nonempty(miss_times, "miss");
    if (bin_count == 0) throw std::invalid_argument("bin count must be >= 1");

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (auto s : {hit_times, miss_times}) {
        for (double v : s) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }

    Histogram h;
    if (!(hi > lo)) {
        h.bin_edges = {lo, std::nextafter(lo, std::numeric_limits<double>::infinity())};
        h.hit_counts = {hit_times.size()};
        h.miss_counts = {miss_times.size()};
        return h;
    }

    const double width = (hi - lo) / static_cast<double>(bin_count);
    h.bin_edges.resize(bin_count + 1);
    for (std::size_t i = 0; i <= bin_count; ++i) h.bin_edges[i] = lo + width * static_cast<double>(i);
    h.bin_edges.back() = hi;
    h.hit_counts.assign(bin_count, 0);
    h.miss_counts.assign(bin_count, 0);

    auto bin_of = [&](double v) {
        auto b = static_cast<std::size_t>((v - lo) / width);
        return std::min(b, bin_count - 1);
    };
    for (double v : hit_times) ++h.hit_counts[bin_of(v)];
    for (double v : miss_times) ++h.miss_counts[bin_of(v)];
    return h;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman_rho(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("Spearman correlation needs two equal-length samples of size >= 2");
    }
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace cacheaudit::stats
