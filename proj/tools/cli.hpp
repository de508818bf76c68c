#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cpcore::cli {

enum ExitCode : int { exit_ok = 0, exit_user_error = 1, exit_tolerance = 2, exit_internal = 3 };

/// Runs one command line. `args` excludes the program name. Data goes to
/// files (or `out` where a path is "-"), log lines to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Hex SHA-256 of a file's bytes. Throws UserError if it cannot be read.
std::string file_sha256(const std::string& path);

}  // namespace cpcore::cli
