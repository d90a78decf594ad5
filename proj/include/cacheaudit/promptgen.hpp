// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "cacheaudit/random.hpp"

namespace cacheaudit::promptgen {

/// The 52 single-letter tokens prompts are built from.
inline constexpr std::string_view kAlphabet =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";

bool is_token_char(char c) noexcept;

/// A prompt of single-letter tokens. `tokens` holds one char per token and
/// `text` is the same tokens joined by single spaces.
class TokenPrompt {
public:
    TokenPrompt() = default;

    /// Throws std::invalid_argument if `tokens` is empty or contains a
    /// character outside the alphabet.
    explicit TokenPrompt(std::string tokens);

    /// Parses space-separated text. Throws std::invalid_argument on an empty
    /// prompt, a multi-character token, or a non-alphabet token.
    static TokenPrompt parse(std::string_view text);

    const std::string& tokens() const noexcept { return tokens_; }
    const std::string& text() const noexcept { return text_; }
    std::size_t size() const noexcept { return tokens_.size(); }

    friend bool operator==(const TokenPrompt&, const TokenPrompt&) = default;

private:
    std::string tokens_;
    std::string text_;
};

struct PromptPair {
    TokenPrompt base;   // victim prompt
    TokenPrompt probe;  // attacker prompt
    std::size_t shared_prefix_tokens = 0;
};

/// Uniform prompt of exactly `length` tokens.
TokenPrompt sample_prompt(std::size_t length, Rng& rng);

/// Pair agreeing on exactly floor(prefix_fraction * length) leading tokens.
/// The first token after the shared prefix is resampled until it differs
/// from the base; later suffix tokens are unconditioned.
PromptPair sample_pair(std::size_t length, double prefix_fraction, Rng& rng);

/// Number of shared tokens sample_pair uses for a given length and fraction.
std::size_t shared_prefix_length(std::size_t length, double prefix_fraction);

/// Probability that two independent prompts agree on their first k tokens,
/// i.e. (1/52)^k.
double prefix_collision_probability(std::size_t k);

/// Length of the common prefix of two token strings.
std::size_t common_prefix_length(std::string_view a, std::string_view b) noexcept;

}  // namespace cacheaudit::promptgen
