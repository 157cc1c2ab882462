#pragma once

#include <string>
#include <vector>

namespace aps {

/// Entry point of the command-line tool.
///
/// Subcommands: invariance, oracle, train, stability, ood, criteria,
/// oddsize, bench. Global flags: --config PATH, --out DIR, --seed U64,
/// --precision {f32,f64}.
///
/// Exit codes: 0 success, 1 assertion failure (a documented threshold was
/// breached or a module aborted), 2 usage or configuration error.
int run_cli(const std::vector<std::string>& args);

int run_cli(int argc, const char* const* argv);

}  // namespace aps
