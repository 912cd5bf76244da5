// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gapprune {

// Subcommands gen-data, train, eval, sweep, probe and bench-ttft. Returns the
// process exit code: 0 on success, 2 for usage errors, 1 for config or
// runtime errors (diagnostic on err).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gapprune
