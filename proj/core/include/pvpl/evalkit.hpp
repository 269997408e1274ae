#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pvpl/transfer.hpp"

namespace pvpl {

struct ScorePair {
  std::vector<float> p;        // global branch
  std::vector<float> p_prime;  // local branch
  std::vector<float> fused;
};

struct EvalSettings {
  float gamma = 4.0f;
  float tau_local = 0.1f;
  float fusion_weight = 0.5f;  // fused = w p + (1 - w) p'
  std::size_t tta_views = 1;
  std::uint64_t tta_seed = 0;
  std::size_t threads = 1;
};

/// Precomputed class-side features for PVP-free inference.
struct PromptClassifier {
  Tensor global;  // [N x D], unit rows (adapted G)
  Tensor local;   // [N x D], unit rows
  EvalSettings settings;

  /// G through the text adapter, L as encoded.
  static PromptClassifier build(const FrozenDualEncoder& enc, const TextPromptSet& prompts,
                                const DualAdapter& adapter, const EvalSettings& settings);
};

/// Scores of one image. Only the encoder and the text-side model are inputs.
ScorePair infer_image(const FrozenDualEncoder& enc, const PromptClassifier& classifier,
                      const Tensor& image);
ScorePair infer_image(const FrozenDualEncoder& enc, const TextPromptSet& prompts,
                      const DualAdapter& adapter, const Tensor& image,
                      const EvalSettings& settings = {});

/// Deterministic geometric views: identity, horizontal flip, then a
/// seed-ordered pick from +-2 px circular shifts (alone or after a flip).
/// At most 10 views.
std::vector<Tensor> tta_views(const Tensor& image, std::size_t views, std::uint64_t seed);

/// Average of p, p' and fused over the views.
ScorePair tta_scores(const FrozenDualEncoder& enc, const PromptClassifier& classifier,
                     const Tensor& image, std::size_t views, std::uint64_t seed);

/// AP over items ranked by descending score, ties broken by item index:
/// (1/m) sum over relevant positions k of (relevant in top k) / k.
/// nullopt if no item is relevant.
std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<bool>& relevance);

struct EvalReport {
  std::string stage;
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> per_class_ap;  // nullopt: no positives, excluded
  double map = 0.0;
  std::size_t excluded_classes = 0;
  std::vector<std::vector<float>> fused_scores;  // images x N
  std::string config_echo;                       // JSON text, may be empty

  std::string to_json() const;
  std::string to_table() const;
};

/// Per-class AP over images and their mean over classes with a positive.
/// Throws InputError if shapes differ or no class has a positive.
EvalReport mean_average_precision(const std::vector<std::vector<double>>& scores,
                                  const std::vector<std::vector<bool>>& labels);

std::vector<std::vector<bool>> label_matrix(const std::vector<LabeledImage>& images,
                                            std::size_t num_classes);

/// Fused scores for every image (TTA when settings.tta_views > 1), on a
/// worker pool of settings.threads; output order and values do not depend on
/// the thread count.
std::vector<ScorePair> score_images(const FrozenDualEncoder& enc,
                                    const PromptClassifier& classifier,
                                    const std::vector<LabeledImage>& images);

/// Score images and compute the report.
EvalReport evaluate(const FrozenDualEncoder& enc, const PromptClassifier& classifier,
                    const std::vector<LabeledImage>& images);

/// gamma * cos(F_n, image global) for every image, [images x N], with F the
/// encoded bank.
std::vector<std::vector<float>> pvp_score_matrix(const FrozenDualEncoder& enc,
                                                 const PvpBank& bank,
                                                 const std::vector<LabeledImage>& images,
                                                 float gamma, std::size_t threads = 1);

struct AblationRow {
  std::string stage;
  double map = 0.0;
};

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::vector<AblationRow> parse_ablation_csv(const std::string& text);
std::string ablation_table_text(const std::vector<AblationRow>& rows);

}  // namespace pvpl
