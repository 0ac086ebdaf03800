#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace lsens {

// Options every subcommand shares. paper_faithful pins the factor grid to
// the full nine-arch, five-loss, two-rate product and requires the 16/4/1
// scene split.
struct CliConfig {
    std::string manifest_path;  // dataset manifest
    std::string runs_root;      // session and matrix output directory
    std::uint64_t global_seed = 0;
    int jobs = 1;
    bool paper_faithful = false;
};

// Runs one command line in-process; args exclude the program name. Returns
// the exit code: 0 success, 2 rejected input, 1 runtime failure.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Same, writing to stdout/stderr.
int cli_main(const std::vector<std::string>& args);

}  // namespace lsens
