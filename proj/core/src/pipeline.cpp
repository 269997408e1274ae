#include "pvpl/pipeline.hpp"

#include <map>
#include <memory>
#include <tuple>

#include "pvpl/errors.hpp"

namespace pvpl {

namespace {

void check_toggles(const StageToggles& t) {
  if (t.transfer && !t.pvp) throw ParameterError("transfer stage needs pvp pre-training");
  if (t.dual_adapter && !t.transfer) throw ParameterError("dual adapter needs the transfer stage");
}

using CorpusKey = std::tuple<bool, bool, bool>;
using TrainKey = std::tuple<bool, bool, bool, bool, bool, bool>;

CorpusKey corpus_key(const StageToggles& t) { return {t.augmentation, t.reasonableness, t.noise}; }
TrainKey train_key(const StageToggles& t) {
  return {t.augmentation, t.reasonableness, t.noise, t.pvp, t.transfer, t.dual_adapter};
}

}  // namespace

void PipelineConfig::validate() const {
  categories.validate();
  dims.validate();
  pvp.validate();
  transfer.validate();
  check_toggles(stages);
  if (corpus.count == 0) throw ParameterError("corpus count must be positive");
  if (corpus.augment_factor == 0) throw ParameterError("augment factor must be at least 1");
  if (!(corpus.noise_rate >= 0.0 && corpus.noise_rate <= 1.0)) {
    throw ParameterError("noise rate must lie in [0, 1]");
  }
  if (eval_images == 0) throw ParameterError("eval image count must be positive");
  if (eval.tta_views == 0) throw ParameterError("tta views must be at least 1");
  if (!(eval.fusion_weight >= 0.0f && eval.fusion_weight <= 1.0f)) {
    throw ParameterError("fusion weight must lie in [0, 1]");
  }
}

std::uint64_t stage_seed(const PipelineConfig& config, SeedStream stream) {
  return Rng::derive(config.seed, static_cast<std::uint64_t>(stream));
}

FrozenDualEncoder build_encoder(const PipelineConfig& config) {
  return FrozenDualEncoder::build(stage_seed(config, SeedStream::encoder), config.dims,
                                  vocab_spec(config.categories), config.planting, config.render);
}

CorpusBuild build_corpus(const PipelineConfig& config, const StageToggles& toggles) {
  const auto& cats = config.categories;
  const auto& co = config.corpus;
  CorpusBuild out;
  out.generated = generate_corpus(cats, co.count, stage_seed(config, SeedStream::corpus), co.max_words);
  auto records = out.generated;
  if (toggles.reasonableness) {
    auto checked = reasonableness_check(cats, records, co.max_words);
    records = std::move(checked.kept);
    out.rejected = std::move(checked.rejected);
  }
  if (toggles.augmentation && co.augment_factor > 1) {
    records = augment_corpus(cats, records, stage_seed(config, SeedStream::augment),
                             co.augment_factor, co.max_words);
  }
  if (toggles.noise && co.noise_rate > 0.0) {
    records = add_text_noise(cats, records, stage_seed(config, SeedStream::noise), co.noise_rate,
                             co.max_words);
  }
  out.records = std::move(records);
  return out;
}

std::vector<LabeledImage> eval_images(const PipelineConfig& config, const FrozenDualEncoder& enc) {
  return enc.render_set(config.eval_images, stage_seed(config, SeedStream::eval_images));
}

PvpTrainConfig pvp_config(const PipelineConfig& config) {
  auto c = config.pvp;
  c.seed = stage_seed(config, SeedStream::pvp_order);
  return c;
}

TransferConfig transfer_config(const PipelineConfig& config, const StageToggles& toggles) {
  auto c = config.transfer;
  c.seed = stage_seed(config, SeedStream::transfer_order);
  if (!toggles.transfer) c.lambda_tpc = 0.0f;
  c.text_adapter = toggles.transfer;
  c.visual_adapter = toggles.dual_adapter;
  return c;
}

TrainedModels train_models(const PipelineConfig& config, const StageToggles& toggles,
                           const FrozenDualEncoder& enc, const std::vector<EncodedText>& corpus) {
  check_toggles(toggles);
  TrainedModels m;
  if (toggles.pvp) {
    const auto& d = enc.dims();
    m.bank = init_bank(enc.num_classes(), d.image, d.image,
                       stage_seed(config, SeedStream::pvp_init), d);
    m.pvp_history = train_pvp(enc, m.bank, corpus, pvp_config(config));
  }
  const auto tc = transfer_config(config, toggles);
  m.prompts = init_prompts(enc, config.categories, tc.context_length,
                           stage_seed(config, SeedStream::prompt_init));
  m.adapter = init_adapter(enc.dims().latent, tc);
  m.transfer_history = train_transfer(enc, m.bank, m.prompts, m.adapter, corpus, tc);
  return m;
}

EvalSettings eval_settings(const PipelineConfig& config, const StageToggles& toggles) {
  auto s = config.eval;
  s.gamma = config.transfer.gamma;
  s.tau_local = config.transfer.tau_local;
  s.tta_seed = stage_seed(config, SeedStream::tta);
  if (!toggles.tta) s.tta_views = 1;
  return s;
}

std::vector<StageConfig> default_stages() { return enabled_stages(StageToggles{}); }

std::vector<StageConfig> enabled_stages(const StageToggles& enabled) {
  check_toggles(enabled);
  std::vector<StageConfig> out;
  StageToggles t{false, false, false, false, false, false, false};
  out.push_back({"baseline", t});
  const std::pair<bool StageToggles::*, const char*> rows[] = {
      {&StageToggles::augmentation, "+augmentation"},
      {&StageToggles::reasonableness, "+reasonableness"},
      {&StageToggles::noise, "+noise"},
      {&StageToggles::pvp, "+pvp"},
      {&StageToggles::transfer, "+transfer"},
      {&StageToggles::dual_adapter, "+dual-adapter"},
      {&StageToggles::tta, "+tta"},
  };
  for (const auto& [flag, name] : rows) {
    if (!(enabled.*flag)) continue;
    t.*flag = true;
    out.push_back({name, t});
  }
  return out;
}

namespace {

// PVP pre-training without transfer: the bank scores the global branch and
// the text prompts score the local one.
EvalReport evaluate_with_bank(const FrozenDualEncoder& enc, const PvpBank& bank,
                              const PromptClassifier& classifier,
                              const std::vector<LabeledImage>& images) {
  const auto& st = classifier.settings;
  const float w = st.fusion_weight;
  std::vector<LabeledImage> views;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (auto& v : tta_views(images[i].image, st.tta_views, st.tta_seed)) {
      views.push_back({std::move(v), images[i].labels});
      owner.push_back(i);
    }
  auto local_only = classifier;
  local_only.settings.tta_views = 1;
  const auto pvp = pvp_score_matrix(enc, bank, views, st.gamma, st.threads);
  const auto txt = score_images(enc, local_only, views);
  const std::size_t N = classifier.global.dim(0);
  std::vector<std::vector<double>> acc(images.size(), std::vector<double>(N, 0.0));
  std::vector<std::size_t> count(images.size(), 0);
  for (std::size_t k = 0; k < views.size(); ++k) {
    for (std::size_t c = 0; c < N; ++c) {
      acc[owner[k]][c] += static_cast<double>(w * pvp[k][c] + (1.0f - w) * txt[k].p_prime[c]);
    }
    ++count[owner[k]];
  }
  std::vector<std::vector<float>> fused(images.size(), std::vector<float>(N));
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t c = 0; c < N; ++c) {
      acc[i][c] /= static_cast<double>(count[i]);
      fused[i][c] = static_cast<float>(acc[i][c]);
    }
  auto rep = mean_average_precision(acc, label_matrix(images, N));
  rep.fused_scores = std::move(fused);
  return rep;
}

}  // namespace

std::vector<AblationRow> ablation_table(const PipelineConfig& config,
                                        const std::vector<StageConfig>& stages,
                                        const std::vector<LabeledImage>& eval_set,
                                        const std::function<void(const std::string&)>& log) {
  if (stages.empty()) throw InputError("ablation needs at least one stage");
  const auto enc = build_encoder(config);
  std::map<CorpusKey, std::shared_ptr<const std::vector<EncodedText>>> corpora;
  std::map<TrainKey, std::shared_ptr<const TrainedModels>> trained;
  std::vector<AblationRow> rows;
  for (const auto& stage : stages) {
    try {
      check_toggles(stage.toggles);
      auto& enc_corpus = corpora[corpus_key(stage.toggles)];
      if (!enc_corpus) {
        const auto built = build_corpus(config, stage.toggles);
        enc_corpus = std::make_shared<const std::vector<EncodedText>>(encode_records(enc, built.records));
      }
      auto& models = trained[train_key(stage.toggles)];
      if (!models) {
        // Prompts for a PVP-only stage are trained exactly as without PVP.
        auto text_toggles = stage.toggles;
        text_toggles.pvp = false;
        auto& plain = trained[train_key(text_toggles)];
        if (stage.toggles.pvp && !stage.toggles.transfer && plain) {
          auto m = *plain;
          const auto& d = enc.dims();
          m.bank = init_bank(enc.num_classes(), d.image, d.image,
                             stage_seed(config, SeedStream::pvp_init), d);
          m.pvp_history = train_pvp(enc, m.bank, *enc_corpus, pvp_config(config));
          models = std::make_shared<const TrainedModels>(std::move(m));
        } else {
          models = std::make_shared<const TrainedModels>(
              train_models(config, stage.toggles, enc, *enc_corpus));
        }
      }
      const auto settings = eval_settings(config, stage.toggles);
      const auto classifier = PromptClassifier::build(enc, models->prompts, models->adapter, settings);
      const auto report = stage.toggles.pvp && !stage.toggles.transfer
                              ? evaluate_with_bank(enc, models->bank, classifier, eval_set)
                              : evaluate(enc, classifier, eval_set);
      rows.push_back({stage.name, report.map});
      if (log) log(stage.name + " mAP " + std::to_string(report.map));
    } catch (const Error& e) {
      throw Error("stage '" + stage.name + "': " + e.what());
    }
  }
  return rows;
}

}  // namespace pvpl
