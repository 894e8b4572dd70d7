#ifndef PSAL_CLI_HPP
#define PSAL_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace psal::cli {

/// Exit codes of run().
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kRuntime = 2;

/// Runs one subcommand. args excludes the program name. Result data goes to
/// `out`; usage messages and log lines go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace psal::cli

#endif  // PSAL_CLI_HPP
