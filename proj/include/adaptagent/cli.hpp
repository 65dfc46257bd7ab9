#pragma once

#include <iosfwd>

namespace adaptagent::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitValidation = 3;
inline constexpr int kExitRuntime = 4;

// Parses and runs one subcommand. Errors go to `err` as a JSON object
// {"error", "detail", "exit_code"}; summaries go to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace adaptagent::cli
