#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pvpl/evalkit.hpp"

namespace pvpl {

struct CorpusOptions {
  std::size_t count = 2000;
  std::size_t max_words = kDefaultMaxWords;
  std::size_t augment_factor = 2;
  double noise_rate = 0.1;
};

/// Which pipeline components are switched on. Each toggle matches one row
/// of the ablation table.
struct StageToggles {
  bool augmentation = true;
  bool reasonableness = true;
  bool noise = true;
  bool pvp = true;
  bool transfer = true;
  bool dual_adapter = true;
  bool tta = true;
};

/// Everything a run depends on. Sub-seeds are derived from `seed`.
struct PipelineConfig {
  std::uint64_t seed = 7;
  CategorySet categories = CategorySet::defaults();
  EncoderDims dims;
  PlantingConfig planting;
  RenderConfig render;
  CorpusOptions corpus;
  PvpTrainConfig pvp;
  TransferConfig transfer;
  EvalSettings eval{4.0f, 0.1f, 0.5f, 4, 0, 1};
  std::size_t eval_images = 200;
  StageToggles stages;

  void validate() const;
};

/// Sub-seed streams, fixed so adding a stream never shifts another.
enum class SeedStream : std::uint64_t {
  encoder = 1,
  corpus = 2,
  augment = 3,
  noise = 4,
  pvp_init = 5,
  pvp_order = 6,
  prompt_init = 7,
  transfer_order = 8,
  eval_images = 9,
  tta = 10,
};

std::uint64_t stage_seed(const PipelineConfig& config, SeedStream stream);

FrozenDualEncoder build_encoder(const PipelineConfig& config);

struct CorpusBuild {
  std::vector<CorpusRecord> generated;
  std::vector<Rejection> rejected;
  std::vector<CorpusRecord> records;  // final corpus
};

/// generate -> reasonableness check -> augment -> noise, per toggles.
CorpusBuild build_corpus(const PipelineConfig& config, const StageToggles& toggles);

/// Rendered evaluation fixtures.
std::vector<LabeledImage> eval_images(const PipelineConfig& config, const FrozenDualEncoder& enc);

PvpTrainConfig pvp_config(const PipelineConfig& config);
/// Transfer config with adapter switches and tpc weight set from toggles:
/// no PVP or no transfer trains text prompts with the tpc term off.
TransferConfig transfer_config(const PipelineConfig& config, const StageToggles& toggles);

struct TrainedModels {
  PvpBank bank;                   // empty when the pvp toggle is off
  TextPromptSet prompts;
  DualAdapter adapter;
  TrainHistory pvp_history;
  TrainHistory transfer_history;
};

/// Stage 1 then stage 2 on an encoded corpus.
TrainedModels train_models(const PipelineConfig& config, const StageToggles& toggles,
                           const FrozenDualEncoder& enc, const std::vector<EncodedText>& corpus);

/// Eval settings for the toggles (TTA views collapse to 1 when TTA is off).
EvalSettings eval_settings(const PipelineConfig& config, const StageToggles& toggles);

struct StageConfig {
  std::string name;
  StageToggles toggles;
};

/// The cumulative rows: baseline, +augmentation, +reasonableness, +noise,
/// +pvp, +transfer, +dual-adapter, +tta.
std::vector<StageConfig> default_stages();

/// Baseline plus one cumulative row per enabled toggle, in table order.
std::vector<StageConfig> enabled_stages(const StageToggles& enabled);

/// One mAP row per stage, in order. Stages with identical corpus or training
/// settings share work. With the pvp toggle on but transfer off, the global
/// branch scores come from the trained bank.
std::vector<AblationRow> ablation_table(
    const PipelineConfig& config, const std::vector<StageConfig>& stages,
    const std::vector<LabeledImage>& eval_set,
    const std::function<void(const std::string&)>& log = {});

}  // namespace pvpl
