#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pvpl/pipeline.hpp"

namespace pvpl {

/// Flat "section.key" -> raw value text from a TOML-style file.
///
/// Supported: `[section]` headers, `key = value` lines, `#` comments, values
/// that are integers, floats, `true`/`false` or double-quoted strings.
/// Keys before any header live in section "run".
struct ConfigTable {
  std::map<std::string, std::string> values;

  static ConfigTable parse(const std::string& text, const std::string& source = "<config>");
  static ConfigTable load(const std::string& path);

  /// Apply one `section.key=value` override.
  void set(const std::string& assignment);
};

struct RunPaths {
  std::string categories;           // empty: built-in categories
  std::string corpus = "corpus.jsonl";
  std::string corpus_stats = "corpus_stats.json";
  std::string pvp_checkpoint = "pvp.ckpt";
  std::string pvp_loss = "pvp_loss.csv";
  std::string transfer_checkpoint = "transfer.ckpt";
  std::string transfer_loss = "transfer_loss.csv";
  std::string report = "report";  // writes report.json, report.txt, report_scores.csv
  std::string ablation = "ablation.csv";
  std::string gradcheck = "gradcheck.txt";
  std::string eval_images;  // empty: rendered fixtures
};

struct RunConfig {
  PipelineConfig pipeline;
  RunPaths paths;
  double gradcheck_backward_scale = 1.0;
  std::size_t gradcheck_points = 10;
  std::uint64_t gradcheck_seed = 1;  // independent of run.seed

  /// Effective configuration as canonical JSON (sorted keys), used as the
  /// config echo in checkpoints and reports.
  std::string echo() const;
};

/// Build a RunConfig from a table: unknown keys and malformed values are
/// errors naming the key. Relative paths are resolved against base_dir.
RunConfig run_config_from(const ConfigTable& table, const std::string& base_dir = "");

/// File (optional) -> PVPL_SEED environment override -> --set overrides.
RunConfig resolve_run_config(const std::string& config_path,
                             const std::vector<std::string>& overrides);

/// Every key the config accepts, for help output.
std::vector<std::string> config_keys();

}  // namespace pvpl
