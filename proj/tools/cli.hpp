#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bdkf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

// Entry point of the bdkf binary, with the streams injectable for tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bdkf::cli
