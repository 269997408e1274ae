#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "pvpl/corpus.hpp"
#include "pvpl/encoders.hpp"

namespace pvpl {

/// One trainable image-shaped prompt per class.
struct PvpBank {
  std::vector<Tensor> prompts;  // each [H x W x 3]
  std::uint64_t init_seed = 0;

  std::size_t size() const { return prompts.size(); }
  /// Entries named "pvp.<index>".
  NamedTensors named() const;
  std::string checksum() const;
};

struct PvpTrainConfig {
  float margin = 1.0f;
  float lr = 0.5f;
  float momentum = 0.0f;
  float gamma = 4.0f;  // cosine scale applied before the hinge
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Loss for one optimizer step; `terms` holds weighted components when the
/// loss has more than one.
struct LossRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  std::vector<double> terms;
};

struct TrainHistory {
  std::vector<LossRow> steps;
  std::vector<double> epoch_mean;  // record-weighted mean loss per epoch
  std::size_t skipped_records = 0;  // records with no positive label
};

/// Frozen text features of a corpus, computed once.
struct EncodedText {
  Tensor global;    // [D]
  Tensor sequence;  // [L x D]
  std::vector<std::size_t> labels;
};

std::vector<EncodedText> encode_records(const FrozenDualEncoder& enc,
                                        const std::vector<CorpusRecord>& records);

/// N prompts of shape H x W x 3, i.i.d. normal(0, 0.02).
PvpBank init_bank(std::size_t num_classes, std::size_t height, std::size_t width,
                  std::uint64_t seed, const EncoderDims& dims);

/// Encoded global features of every prompt, [N x D]; differentiable in the bank.
Tensor bank_features(const FrozenDualEncoder& enc, const PvpBank& bank);

/// s_n = gamma * cos(text_global, EncI(P_n)), as an [N] tensor.
Tensor pvp_similarities(const FrozenDualEncoder& enc, const PvpBank& bank,
                        const Tensor& text_global, float gamma = 4.0f);

/// Sum over positive/negative pairs of max(0, m - s_i + s_j). Returns nullopt
/// when `positives` is empty (the caller skips the record). Throws
/// ParameterError if the sets overlap.
template <class T>
std::optional<BasicTensor<T>> ranking_loss(const BasicTensor<T>& scores,
                                           const std::vector<std::size_t>& positives,
                                           const std::vector<std::size_t>& negatives, T margin);

/// Ranking loss for every row of scores [B x N] against label sets, with the
/// complement as negatives, averaged over rows that have positives. nullopt if
/// no row has positives.
template <class T>
std::optional<BasicTensor<T>> batch_ranking_loss(const BasicTensor<T>& scores,
                                                 const std::vector<const std::vector<std::size_t>*>& labels,
                                                 T margin);

/// Optimize only the bank. Throws NumericalError on a non-finite loss.
TrainHistory train_pvp(const FrozenDualEncoder& enc, PvpBank& bank,
                       const std::vector<CorpusRecord>& corpus, const PvpTrainConfig& config);
TrainHistory train_pvp(const FrozenDualEncoder& enc, PvpBank& bank,
                       const std::vector<EncodedText>& corpus, const PvpTrainConfig& config);

/// Same as pvp_similarities with the image's global feature as the query.
std::vector<float> zero_shot_scores_pvp(const FrozenDualEncoder& enc, const PvpBank& bank,
                                        const Tensor& image, float gamma = 4.0f);

/// Batch order for an epoch: a seeded permutation of [0, n).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

}  // namespace pvpl
