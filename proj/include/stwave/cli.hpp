#pragma once

namespace stwave {

// Full command-line entry point. Returns the process exit code:
//   0 success, 1 usage/config/data error, 2 numerical failure, 3 I/O failure.
int cli_main(int argc, const char* const* argv);

} // namespace stwave
