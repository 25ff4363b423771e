#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace densedet {

/// Runs one command line (argv[0] is the program name). Results go to `out`,
/// progress and the one-line error report to `err`. Returns the exit code:
/// 0 success, 1 usage, 2 data, 3 numeric failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Help text of a subcommand (empty name for the top level).
std::string cli_help(const std::string& subcommand);

/// Every long flag a subcommand accepts, without the leading dashes.
std::vector<std::string> cli_flags(const std::string& subcommand);

/// The subcommand names.
std::vector<std::string> cli_subcommands();

}  // namespace densedet
