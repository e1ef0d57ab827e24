#pragma once

#include "resprop/config.hpp"
#include "resprop/models.hpp"
#include "resprop/trainer.hpp"

namespace resprop {

/// Dispatches cfg.command (analyze, train, sweep-depth, sweep-batch,
/// gradcheck) and writes the command's CSV artifacts. Returns the process
/// exit code: 0 success, 1 validation error, 2 runtime failure.
int run_command(const RunConfig& cfg);

// Config decoding shared with the tests.
Family parse_family(const std::string& name);
BlockVariant parse_variant(const std::string& token);
Metric parse_metric(const std::string& name);

}  // namespace resprop
