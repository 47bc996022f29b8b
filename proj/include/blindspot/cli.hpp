#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace blindspot {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Command-line entry point. args excludes the program name.
// Returns 0 on success, 1 on validation errors, 2 on runtime failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace blindspot
