#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace pathm3::cli {

// args excludes the program name. Returns the process exit status:
// 0 success, 1 usage or validation error, 2 runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Most recent run directory under `runs_dir` that holds a checkpoint.
std::filesystem::path latest_run(const std::filesystem::path& runs_dir);

}  // namespace pathm3::cli
