#pragma once

namespace dtr {

// Entry point behind the `dtr` binary.  Parses `argv`, dispatches to the
// train / eval / update-tree / diagnose / synth subcommands, and returns
// the process exit code: 0 on success, 1 on a usage error, 2 when a run
// fails at runtime.  All randomness derives from `--seed`.
int run_cli(int argc, const char* const* argv);

}  // namespace dtr
