#pragma once

#include <iosfwd>

namespace ebmf {

// Exit codes: 0 success, 1 data/runtime error, 2 usage error.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

}  // namespace ebmf
