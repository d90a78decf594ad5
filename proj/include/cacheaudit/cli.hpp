// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: audit | simulate | analyze | cost.
//
// Exit codes are a stable contract: 0 success, 1 operational failure,
// 2 configuration error. Settings resolve as flags > environment > file.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cacheaudit/apiclient.hpp"
#include "cacheaudit/audit.hpp"
#include "cacheaudit/sim_server.hpp"

namespace cacheaudit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

struct RunManifest {
    std::string run_id;
    std::string subcommand;
    nlohmann::json resolved_config;
    std::vector<std::string> providers;
    std::uint64_t seed = 0;
};

/// UTC timestamp plus a short random suffix, e.g. 20261016T120102Z-3fa9c1.
std::string make_run_id();

struct ProviderEntry {
    client::ProviderSpec spec;
    audit::AuditIdentities identities;
};

/// providers.json: {"audit": {...config overrides...},
///                  "providers": [{name, base_url, api_flavor, model, path,
///                                 server_timing, identities{attacker,
///                                 same_org_victim, other_org_victim}}]}
std::vector<ProviderEntry> providers_from_json(const nlohmann::json& j);

/// Applies the keys present in `j` on top of `config`.
void apply_config_json(AuditConfig& config, const nlohmann::json& j);
nlohmann::json config_to_json(const AuditConfig& config);

/// Bearer tokens the `simulate` subcommand accepts when the config file
/// lists none.
std::map<std::string, sim::IdentityRecord> default_sim_identities();

/// Entry point. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

}  // namespace cacheaudit::cli
