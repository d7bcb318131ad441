#pragma once

namespace usae {

// Exit codes: 0 success, 1 usage or parameter error, 2 data, format or I/O error.
int run_cli(int argc, const char* const* argv);

}  // namespace usae
