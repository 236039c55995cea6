#pragma once

#include <cstddef>
#include <iosfwd>

namespace trajdiff::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumeric = 3,
};

// Entry point of the `trajdiff` tool: synth | train | generate | eval | plot.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Worker count after applying the TRAJDIFF_THREADS cap. 0 requests the
// hardware concurrency.
std::size_t resolve_workers(std::size_t requested);

}  // namespace trajdiff::cli
