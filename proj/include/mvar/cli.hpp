#pragma once

#include <string>
#include <vector>

namespace mvar::cli {

/// Runs one toolkit command (qc, train, forecast, evaluate, synth) given the
/// argument list after the program name. Returns the process exit code:
/// 0 success, 2 input or config error, 3 empty result, 4 missing dependency
/// artifact. Callable in-process; never calls std::exit.
int cli_main(const std::vector<std::string>& args);

}  // namespace mvar::cli
