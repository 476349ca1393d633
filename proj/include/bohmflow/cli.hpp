#pragma once

#include <cstdint>
#include <string>

namespace bohmflow {

// CLI overrides applied on top of the config file.
struct CliOverrides {
    int threads = 0;           // 0: BOHMFLOW_THREADS env, then hardware
    int particles = 0;         // propagate-ensemble override
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

// Subcommand drivers; return process exit codes.
//   0 ok, 1 configuration error, 2 numeric error, 3 training aborted,
//   4 comparison tolerances violated
int cmd_train(const std::string& config_path, const CliOverrides& ov);
int cmd_propagate(const std::string& config_path, const std::string& checkpoint_path,
                  const std::string& reference_dir, const CliOverrides& ov);
int cmd_reference(const std::string& config_path, const CliOverrides& ov);
int cmd_compare(const std::string& config_path, const std::string& run_dir,
                const std::string& reference_dir, const CliOverrides& ov);

}  // namespace bohmflow
