#pragma once

#include <ostream>

#include "pvpl/config.hpp"

namespace pvpl {

// One function per CLI subcommand. Each writes its declared outputs, reads
// them back to validate, and throws pvpl::Error on any failure. Outputs are
// a pure function of the config and input files.

/// Corpus JSONL and stats JSON.
void cmd_gen_corpus(const RunConfig& config, std::ostream& log);
/// Stage-1 checkpoint (encoder parameters, bank, config echo) and loss CSV.
/// A non-finite loss writes a diagnostics file next to the checkpoint.
void cmd_train_pvp(const RunConfig& config, std::ostream& log);
/// Stage-2 checkpoint (stage-1 entries plus prompts and adapter) and loss CSV
/// with tpc, global and local columns.
void cmd_transfer(const RunConfig& config, std::ostream& log);
/// Report JSON, plain-text table and per-image score CSV. Reads only the
/// prompts and adapter from the checkpoint.
void cmd_eval(const RunConfig& config, std::ostream& log);
/// Ablation CSV, one row per enabled stage.
void cmd_ablation(const RunConfig& config, std::ostream& log);
/// Gradient report. Returns false if any op failed (the report is still written).
bool cmd_gradcheck(const RunConfig& config, std::ostream& log);

}  // namespace pvpl
