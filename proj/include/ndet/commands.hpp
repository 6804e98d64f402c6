// Batch command-line front end: synthesis, feature extraction, training,
// inference, scoring, DET curves, and hyperparameter-axis ablations.
#pragma once

namespace ndet {

// Parses argv, dispatches to the selected subcommand, and maps failures to
// exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
// Logs go to stderr; stdout carries a single summary line per command.
int run_cli(int argc, char** argv);

}  // namespace ndet
