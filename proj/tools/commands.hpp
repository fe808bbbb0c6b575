#pragma once

#include "rfa/run_config.hpp"

#include <iosfwd>

namespace rfa::cmd {

// Each command returns a process exit code (0 on success) and writes its
// report to `out`; file artifacts go to the configured output directory.
int cmd_gradcheck(const RunConfig& config, std::ostream& out);
int cmd_equivalence(const RunConfig& config, std::ostream& out);
int cmd_bench_extract(const RunConfig& config, std::ostream& out);
int cmd_train(const RunConfig& config, std::ostream& out);
int cmd_eval(const RunConfig& config, std::ostream& out);
int cmd_count(const RunConfig& config, std::ostream& out);
int cmd_gradcam(const RunConfig& config, std::ostream& out);

} // namespace rfa::cmd
