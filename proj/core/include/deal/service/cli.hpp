#pragma once

#include <iosfwd>

namespace deal::service {

// Subcommands generate / train / eval / infer / serve. Returns 0 on success,
// 1 on usage or configuration errors, 2 on runtime failures.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace deal::service
