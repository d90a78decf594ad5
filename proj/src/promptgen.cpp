// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cacheaudit/promptgen.hpp"

#include <cmath>
#include <stdexcept>

namespace cacheaudit::promptgen {

namespace {

std::string render(const std::string& tokens) {
    std::string text;
    text.reserve(tokens.size() * 2);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i != 0) text.push_back(' ');
        text.push_back(tokens[i]);
    }
    return text;
}

char draw_token(Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, kAlphabet.size() - 1);
    return kAlphabet[pick(rng)];
}

}  // namespace

bool is_token_char(char c) noexcept {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

TokenPrompt::TokenPrompt(std::string tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty()) throw std::invalid_argument("prompt must contain at least one token");
    for (char c : tokens_) {
        if (!is_token_char(c)) {
            throw std::invalid_argument(std::string("token outside the 52-letter alphabet: '") + c + "'");
        }
    }
    text_ = render(tokens_);
}

TokenPrompt TokenPrompt::parse(std::string_view text) {
    std::string tokens;
    tokens.reserve(text.size() / 2 + 1);
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t next = text.find(' ', pos);
        if (next == std::string_view::npos) next = text.size();
        std::string_view tok = text.substr(pos, next - pos);
        if (tok.size() != 1) {
            throw std::invalid_argument("malformed prompt: token '" + std::string(tok.substr(0, 16)) +
                                        "' at offset " + std::to_string(pos) + " is not a single letter");
        }
        tokens.push_back(tok[0]);
        pos = next + 1;
    }
    return TokenPrompt(std::move(tokens));
}

TokenPrompt sample_prompt(std::size_t length, Rng& rng) {
    if (length == 0) throw std::invalid_argument("prompt length must be >= 1");
    std::string tokens(length, 'a');
    for (auto& c : tokens) c = draw_token(rng);
    return TokenPrompt(std::move(tokens));
}

std::size_t shared_prefix_length(std::size_t length, double prefix_fraction) {
    if (!(prefix_fraction > 0.0 && prefix_fraction <= 1.0)) {
        throw std::invalid_argument("prefix fraction must lie in (0, 1]");
    }
    if (prefix_fraction == 1.0) return length;
    // Decimal fractions are inexact in binary, so a product such as
    // 0.95 * 5000 may land a hair below the integer it denotes.
    const double product = prefix_fraction * static_cast<double>(length);
    return static_cast<std::size_t>(std::floor(product + 1e-9));
}

PromptPair sample_pair(std::size_t length, double prefix_fraction, Rng& rng) {
    if (length == 0) throw std::invalid_argument("prompt length must be >= 1");
    const std::size_t shared = shared_prefix_length(length, prefix_fraction);

    TokenPrompt base = sample_prompt(length, rng);
    if (shared == length) return PromptPair{base, base, shared};

    std::string probe = base.tokens().substr(0, shared);
    char divergent = draw_token(rng);
    while (divergent == base.tokens()[shared]) divergent = draw_token(rng);
    probe.push_back(divergent);
    while (probe.size() < length) probe.push_back(draw_token(rng));
    return PromptPair{std::move(base), TokenPrompt(std::move(probe)), shared};
}

double prefix_collision_probability(std::size_t k) {
    return std::pow(1.0 / static_cast<double>(kAlphabet.size()), static_cast<double>(k));
}

std::size_t common_prefix_length(std::string_view a, std::string_view b) noexcept {
    std::size_t i = 0;
    const std::size_t n = std::min(a.size(), b.size());
    while (i < n && a[i] == b[i]) ++i;
    return i;
}

}  // namespace cacheaudit::promptgen
