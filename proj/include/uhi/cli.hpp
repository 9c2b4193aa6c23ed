#pragma once

#include <iosfwd>

namespace uhi {

// Exit codes: 0 success, 2 usage error (usage printed to `err`), 1 runtime
// error.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace uhi
