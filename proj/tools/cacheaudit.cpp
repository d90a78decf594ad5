// Copyright 2026 The cacheaudit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cacheaudit/cli.hpp"

int main(int argc, char** argv) { return cacheaudit::cli::main(argc, argv); }
