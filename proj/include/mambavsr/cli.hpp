#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mvsr::cli {

enum ExitCode : int {
    ok = 0,
    bad_args = 2,
    io_failure = 3,
    model_mismatch = 4,
    numeric_failure = 5,
};

// Runs one subcommand: sr, psnr-ssim, scan-viz, bench, degrade, align, init,
// train, verify. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

} // namespace mvsr::cli
