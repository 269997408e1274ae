#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>

#include "pvpl/pvp.hpp"

namespace pvpl {

/// Learnable prompt contexts shared across classes, plus the frozen class
/// word embeddings they are prepended to.
struct TextPromptSet {
  Tensor global_context;  // [M x De]
  Tensor local_context;   // [M x De]
  Tensor class_words;     // [N x De], frozen

  std::size_t context_length() const { return global_context.dim(0); }
  std::size_t num_classes() const { return class_words.dim(0); }
  NamedTensors named() const;
  std::string checksum() const;
};

/// Two-layer residual adapter for one branch.
template <class T>
struct BasicAdapterBranch {
  BasicTensor<T> w1;     // [D x Da]
  BasicTensor<T> b1;     // [Da]
  BasicTensor<T> w2;     // [Da x D]
  BasicTensor<T> b2;     // [D]
  BasicTensor<T> alpha;  // [1], residual mix

  std::vector<BasicTensor<T>> params() const { return {w1, b1, w2, b2, alpha}; }
};
using AdapterBranch = BasicAdapterBranch<float>;

enum class Branch { text, visual };

struct DualAdapter {
  AdapterBranch text;
  AdapterBranch visual;

  const AdapterBranch& branch(Branch b) const { return b == Branch::text ? text : visual; }
  NamedTensors named() const;
  std::string checksum() const;
};

struct TransferConfig {
  float tau = 0.07f;
  float lambda_tpc = 1.0f;
  float lambda_global = 1.0f;
  float lambda_local = 1.0f;
  float margin = 1.0f;
  float gamma = 4.0f;
  float tau_local = 0.1f;
  float lr = 0.5f;           // prompt contexts
  float adapter_lr = 0.05f;  // adapter weights and alpha
  float momentum = 0.0f;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t context_length = 8;
  std::size_t adapter_hidden = 32;
  float alpha_init = 0.2f;
  bool text_adapter = true;    // train the text-branch adapter
  bool visual_adapter = true;  // train the visual-branch adapter

  void validate() const;
};

/// Contexts drawn from normal(0, 0.02); class words copied from the encoder's
/// token table (mean over tokens for multi-word names).
TextPromptSet init_prompts(const FrozenDualEncoder& enc, const CategorySet& categories,
                           std::size_t context_length, std::uint64_t seed);

/// Adapter weights scaled 1/sqrt(fan_in), zero biases, alpha = alpha_init on
/// enabled branches and 0 on disabled ones (identity path).
DualAdapter init_adapter(std::size_t latent, const TransferConfig& config);

/// G and L, each [N x D] with unit rows: the EOS feature of
/// [context_1..context_M, class word, EOS].
std::pair<Tensor, Tensor> class_embeddings(const FrozenDualEncoder& enc,
                                           const TextPromptSet& prompts);

/// normalize((1 - a) F + a MLP2(ReLU(MLP1(F)))) row-wise.
template <class T>
BasicTensor<T> apply_adapter(const BasicAdapterBranch<T>& branch, const BasicTensor<T>& features);
Tensor apply_adapter(const DualAdapter& adapter, Branch branch, const Tensor& features);

/// p_i = gamma cos(G_i, h). G rows and h must be unit norm.
template <class T>
BasicTensor<T> global_scores(const BasicTensor<T>& G, const BasicTensor<T>& h, T gamma);

/// p'_i = gamma sum_k a_ik sim_ik, sim_ik = cos(L_i, H_k), a_i = softmax(sim_i / tau_local).
template <class T>
BasicTensor<T> local_scores(const BasicTensor<T>& L, const BasicTensor<T>& H, T gamma,
                            T tau_local);

/// Symmetric contrastive loss over S = F_T F_I^T with diagonal targets:
/// sum_i CE(S[i]/tau, i) + CE(S^T[i]/tau, i). Needs N >= 2.
template <class T>
BasicTensor<T> tpc_loss(const BasicTensor<T>& FT, const BasicTensor<T>& FI, T tau);

/// Seen once per optimizer step.
struct TransferStep {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::size_t batch_records = 0;
  Shape similarity_shape;  // shape of S, empty when the tpc term is off
  double tpc = 0.0, global = 0.0, local = 0.0;  // weighted terms
  double total = 0.0;
};

/// Loss terms of one batch, unweighted, all attached to the graph.
struct TransferLosses {
  std::optional<Tensor> tpc;
  std::optional<Tensor> global;
  std::optional<Tensor> local;
  Shape similarity_shape;
};

TransferLosses transfer_losses(const FrozenDualEncoder& enc, const Tensor& pvp_features,
                               const TextPromptSet& prompts, const DualAdapter& adapter,
                               const std::vector<const EncodedText*>& batch,
                               const TransferConfig& config);

/// Train contexts and enabled adapter branches; bank and encoder stay frozen.
/// Loss rows carry weighted (tpc, global, local) terms that sum to the loss.
TrainHistory train_transfer(const FrozenDualEncoder& enc, const PvpBank& bank,
                            TextPromptSet& prompts, DualAdapter& adapter,
                            const std::vector<EncodedText>& corpus, const TransferConfig& config,
                            const std::function<void(const TransferStep&)>& on_step = {});

}  // namespace pvpl
