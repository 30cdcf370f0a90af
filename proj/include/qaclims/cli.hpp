#pragma once

#include <iosfwd>

namespace qaclims {

/// Entry point of the `qaclims` tool. Returns 0 on success, 2 for usage
/// errors and 1 for failures while running a command. Diagnostics go to
/// `err` as a single line.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qaclims
