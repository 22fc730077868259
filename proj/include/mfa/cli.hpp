#pragma once

namespace mfa {

// Parses arguments and runs one command. Returns the process exit code:
// 0 success, 2 configuration error, 3 numerical failure. Errors are written
// to stderr as one-line JSON objects.
int run_cli(int argc, const char* const* argv);

}  // namespace mfa
