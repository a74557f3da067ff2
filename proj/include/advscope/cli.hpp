#pragma once

#include <string>
#include <vector>

namespace advscope {

// Exit codes of the command-line driver.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitCompute = 4;

/// Runs one advscope command. args excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace advscope
