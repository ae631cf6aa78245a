#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 1 on usage/validation errors, 2 on runtime errors.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rim::cli
