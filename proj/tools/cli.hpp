/// @file cli.hpp
/// @brief Entry point for the `stylecqa` command line tool.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace stylecqa::cli {

/// Runs one subcommand. Returns the process exit code: 0 on success, 1 on a
/// stage error (a JSON error summary is written to err), 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stylecqa::cli
