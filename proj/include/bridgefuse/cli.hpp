#ifndef BRIDGEFUSE_CLI_HPP_
#define BRIDGEFUSE_CLI_HPP_

#include <iosfwd>

namespace bridgefuse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Default output root when neither the config nor --out names one.
inline constexpr const char* kOutputRootEnv = "BRIDGEFUSE_OUTPUT_ROOT";

/// Entry point shared by the executable and the tests. Subcommands:
/// gen-synth, train, evaluate, report.
int Main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bridgefuse::cli

#endif  // BRIDGEFUSE_CLI_HPP_
