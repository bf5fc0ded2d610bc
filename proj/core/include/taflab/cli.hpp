#pragma once

#include <string>
#include <vector>

#include "taflab/config.hpp"

// Command-line entry point. Subcommands: train, finetune, eval, eval-corrupt,
// ablate, cam-dump, attack-dump. Every command resolves a RunConfig from
// defaults, an optional --config file, and --key value flags (in that
// precedence order), echoes the resolved config into the output directory,
// and exits nonzero with a message on stderr for any failure.

namespace taflab {

int run_cli(int argc, const char* const* argv);

// Exposed for tests: turns raw arguments after the subcommand into the
// resolved configuration.
RunConfig resolve_config(const std::vector<std::string>& args);

}  // namespace taflab
