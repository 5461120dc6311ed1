#pragma once

#include <iosfwd>

namespace ted {

// Entry point of the `ted` binary. Returns the process exit code; failures
// print one line `error: code=<Code> message="..."` to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ted
