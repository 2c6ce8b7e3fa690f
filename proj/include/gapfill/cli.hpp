#pragma once

// Command-line front end: synth, train, interpolate, eval, bench, crossmatrix
// and ablate. Exit codes: 0 success, 1 unexpected failure, 2 configuration or
// input error, 3 numerical failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace gapfill::cli {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

/// Runs one command line. `args` excludes the program name. Reports go to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace gapfill::cli
