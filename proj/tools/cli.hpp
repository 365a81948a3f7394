#pragma once

#include <ostream>
#include <string>
#include <string_view>

namespace lanechange::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kValidationError = 2;
inline constexpr int kReplayMismatch = 3;

// Entry point shared by the binary and the tests. Results go to `out`;
// failures end with one JSON line {"error":{"kind","message"}} on `err`.
int run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err);

// SHA-1 of "blob <size>\0<content>", as `git hash-object` prints it.
std::string git_blob_sha1(std::string_view content);

}  // namespace lanechange::cli
