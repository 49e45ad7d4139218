#pragma once

#include <string>
#include <vector>

namespace abtok::cli {

inline constexpr const char* kVersion = "0.1.0";

// Exit codes: 0 success, 2 input-schema errors, 1 anything else.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace abtok::cli
