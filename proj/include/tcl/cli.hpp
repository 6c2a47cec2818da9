#pragma once

#include "tcl/trainer.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace tcl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// `key = value` lines; `#` starts a comment. Later duplicates win.
std::map<std::string, std::string> parse_key_values(std::istream& in);
std::map<std::string, std::string> load_key_values(const std::string& path);

/// Applies recognized keys onto `config`; unknown keys are an error.
void apply_config(const std::map<std::string, std::string>& values, TrainConfig& config);
void write_config(std::ostream& out, const TrainConfig& config);

std::string version();

/// Entry point shared by the `tcl` binary and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tcl::cli
