#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace swintempo::cli {

/// Exit codes: 0 success, 1 invalid usage or input, 2 I/O, format or checkpoint failure.
constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

/// Runs one subcommand (`synth`, `preprocess`, `train`, `infer`, `evaluate`, `crossval`).
/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace swintempo::cli
