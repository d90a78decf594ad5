// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace cacheaudit {

struct AuditConfig {
    std::size_t prompt_length = 5000;
    std::size_t num_samples = 250;  // per procedure
    double alpha = 1e-8;
    double prefix_fraction_exact = 1.0;
    double prefix_fraction_prefix = 0.95;
    std::vector<std::size_t> victim_request_ladder{1, 5, 25};
    std::size_t level1_victim_requests = 25;
    std::uint64_t seed = 0;
    int level_max = 4;
    /// Consecutive failed trials tolerated before the audit aborts.
    std::size_t max_trial_resamples = 5;

    /// Desk-scale profile for simulator runs.
    static AuditConfig quick() {
        AuditConfig c;
        c.prompt_length = 200;
        c.num_samples = 50;
        c.alpha = 1e-3;
        return c;
    }

    /// Throws std::invalid_argument when an invariant is broken.
    void validate() const;
};

}  // namespace cacheaudit
