#pragma once

namespace memo {

// Full command-line entry point: gen-data, train, infer, eval, sweep.
// Returns 0 on success, 1 on usage errors, 2 on runtime failures.
int dispatch(int argc, const char* const* argv);

}  // namespace memo
