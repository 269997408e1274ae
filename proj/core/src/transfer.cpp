#include "pvpl/transfer.hpp"

#include <cmath>

#include "pvpl/ops.hpp"
#include "pvpl/optim.hpp"

namespace pvpl {

NamedTensors TextPromptSet::named() const {
  return {{"prompt.global_context", global_context},
          {"prompt.local_context", local_context},
          {"prompt.class_words", class_words}};
}

std::string TextPromptSet::checksum() const { return pvpl::checksum(named()); }

NamedTensors DualAdapter::named() const {
  NamedTensors out;
  for (const auto& [prefix, br] : {std::pair{"adapter.text.", &text}, std::pair{"adapter.visual.", &visual}}) {
    const std::string p = prefix;
    out.emplace_back(p + "w1", br->w1);
    out.emplace_back(p + "b1", br->b1);
    out.emplace_back(p + "w2", br->w2);
    out.emplace_back(p + "b2", br->b2);
    out.emplace_back(p + "alpha", br->alpha);
  }
  return out;
}

std::string DualAdapter::checksum() const { return pvpl::checksum(named()); }

void TransferConfig::validate() const {
  if (!(tau > 0.0f)) throw ParameterError("temperature must be positive");
  if (!(tau_local > 0.0f)) throw ParameterError("local temperature must be positive");
  if (!(margin > 0.0f)) throw ParameterError("margin must be positive");
  if (!(lr > 0.0f) || !(adapter_lr > 0.0f)) throw ParameterError("learning rates must be positive");
  if (lambda_tpc < 0.0f || lambda_global < 0.0f || lambda_local < 0.0f) {
    throw ParameterError("loss weights must be non-negative");
  }
  if (batch_size == 0) throw ParameterError("batch size must be positive");
  if (context_length == 0 || adapter_hidden == 0) throw ParameterError("prompt dims must be positive");
}

TextPromptSet init_prompts(const FrozenDualEncoder& enc, const CategorySet& categories,
                           std::size_t context_length, std::uint64_t seed) {
  if (categories.size() != enc.num_classes()) {
    throw DimensionError("category set has " + std::to_string(categories.size()) +
                         " classes, encoder has " + std::to_string(enc.num_classes()));
  }
  if (context_length + 2 > enc.dims().max_seq) {
    throw ParameterError("context length leaves no room for class word and EOS");
  }
  const std::size_t De = enc.dims().text_width;
  Rng rng(seed);
  auto draw = [&] {
    std::vector<float> v(context_length * De);
    for (auto& x : v) x = static_cast<float>(rng.normal(0.0, 0.02));
    return Tensor({context_length, De}, std::move(v), true);
  };
  TextPromptSet ps;
  ps.global_context = draw();
  ps.local_context = draw();
  std::vector<Tensor> words;
  for (const auto& name : categories.names) words.push_back(enc.phrase_embedding(name));
  ps.class_words = concat_rows(words).detach();
  return ps;
}

DualAdapter init_adapter(std::size_t latent, const TransferConfig& config) {
  Rng rng(Rng::derive(config.seed, 0xADA));
  const std::size_t D = latent, Da = config.adapter_hidden;
  auto mat = [&](std::size_t r, std::size_t c) {
    std::vector<float> v(r * c);
    const double sd = 1.0 / std::sqrt(static_cast<double>(r));
    for (auto& x : v) x = static_cast<float>(rng.normal(0.0, sd));
    return Tensor({r, c}, std::move(v));
  };
  auto branch = [&](bool enabled) {
    AdapterBranch b;
    b.w1 = mat(D, Da);
    b.b1 = Tensor::zeros({Da});
    b.w2 = mat(Da, D);
    b.b2 = Tensor::zeros({D});
    b.alpha = Tensor({1}, {enabled ? config.alpha_init : 0.0f});
    return b;
  };
  DualAdapter a;
  a.text = branch(config.text_adapter);
  a.visual = branch(config.visual_adapter);
  return a;
}

std::pair<Tensor, Tensor> class_embeddings(const FrozenDualEncoder& enc,
                                           const TextPromptSet& prompts) {
  const std::size_t N = prompts.num_classes();
  const Tensor eos = reshape(enc.token_embedding(FrozenDualEncoder::kEosId), {1, enc.dims().text_width});
  auto encode_all = [&](const Tensor& ctx) {
    std::vector<Tensor> rows;
    rows.reserve(N);
    for (std::size_t i = 0; i < N; ++i) {
      const auto seq = concat_rows<float>({ctx, select_rows(prompts.class_words, {i}), eos});
      rows.push_back(enc.encode_embeddings(seq).global);
    }
    return concat_rows(rows);
  };
  return {encode_all(prompts.global_context), encode_all(prompts.local_context)};
}

template <class T>
BasicTensor<T> apply_adapter(const BasicAdapterBranch<T>& br, const BasicTensor<T>& F) {
  auto hidden = relu(add_row(matmul(F, br.w1), br.b1));
  auto mlp = add_row(matmul(hidden, br.w2), br.b2);
  auto keep = affine(br.alpha, T(-1), T(1));
  return l2_normalize_rows(add(scale_by(F, keep), scale_by(mlp, br.alpha)));
}

Tensor apply_adapter(const DualAdapter& adapter, Branch branch, const Tensor& features) {
  return apply_adapter<float>(adapter.branch(branch), features);
}

template <class T>
BasicTensor<T> global_scores(const BasicTensor<T>& G, const BasicTensor<T>& h, T gamma) {
  const std::size_t N = G.dim(0), D = G.dim(1);
  if (h.size() != D) {
    throw DimensionError("global_scores: feature " + shape_string(h.shape()) +
                         " does not match " + shape_string(G.shape()));
  }
  auto hn = reshape(l2_normalize_rows(reshape(h, {D})), {D, 1});
  return affine(reshape(matmul(l2_normalize_rows(G), hn), {N}), gamma);
}

template <class T>
BasicTensor<T> local_scores(const BasicTensor<T>& L, const BasicTensor<T>& H, T gamma,
                            T tau_local) {
  if (H.rank() != 2 || H.dim(0) == 0) throw InputError("local_scores: empty sequence");
  if (H.dim(1) != L.dim(1)) {
    throw DimensionError("local_scores: " + shape_string(L.shape()) + " vs sequence " +
                         shape_string(H.shape()));
  }
  auto sim = matmul(l2_normalize_rows(L), transpose(l2_normalize_rows(H)));  // [N x K]
  auto weights = softmax(sim, tau_local);
  return affine(row_sum(mul(weights, sim)), gamma);
}

template <class T>
BasicTensor<T> tpc_loss(const BasicTensor<T>& FT, const BasicTensor<T>& FI, T tau) {
  if (!(tau > T(0))) throw ParameterError("tpc_loss: temperature must be positive");
  if (FT.rank() != 2 || FT.shape() != FI.shape()) {
    throw DimensionError("tpc_loss: feature shapes " + shape_string(FT.shape()) + " and " +
                         shape_string(FI.shape()) + " differ");
  }
  const std::size_t N = FT.dim(0);
  if (N < 2) throw DimensionError("tpc_loss: degenerate task, need at least two classes");
  auto S = affine(matmul(FT, transpose(FI)), T(1) / tau);
  if (S.shape() != Shape{N, N}) throw DimensionError("tpc_loss: similarity matrix is not N x N");
  std::vector<std::size_t> diag(N);
  for (std::size_t i = 0; i < N; ++i) diag[i] = i;
  return add(cross_entropy_rows(S, diag), cross_entropy_rows(transpose(S), diag));
}

TransferLosses transfer_losses(const FrozenDualEncoder& enc, const Tensor& pvp_features,
                               const TextPromptSet& prompts, const DualAdapter& adapter,
                               const std::vector<const EncodedText*>& batch,
                               const TransferConfig& config) {
  TransferLosses out;
  const auto [G_raw, L] = class_embeddings(enc, prompts);
  const Tensor G = apply_adapter(adapter.text, G_raw);
  const std::size_t N = G.dim(0), D = G.dim(1);

  if (config.lambda_tpc > 0.0f) {
    const Tensor FI = apply_adapter(adapter.visual, pvp_features);
    out.similarity_shape = {G.dim(0), FI.dim(0)};
    if (out.similarity_shape != Shape{N, N}) {
      throw DimensionError("similarity matrix " + shape_string(out.similarity_shape) +
                           " is not " + std::to_string(N) + "x" + std::to_string(N));
    }
    out.tpc = tpc_loss(G, FI, config.tau);
  }
  std::vector<const std::vector<std::size_t>*> labels;
  for (const auto* r : batch) labels.push_back(&r->labels);
  if (config.lambda_global > 0.0f && !batch.empty()) {
    std::vector<float> h;
    for (const auto* r : batch) h.insert(h.end(), r->global.data().begin(), r->global.data().end());
    const Tensor hb({batch.size(), D}, std::move(h));
    const auto scores = affine(matmul(hb, transpose(G)), config.gamma);
    out.global = batch_ranking_loss(scores, labels, config.margin);
  }
  if (config.lambda_local > 0.0f && !batch.empty()) {
    std::vector<Tensor> rows;
    for (const auto* r : batch) {
      rows.push_back(reshape(local_scores(L, r->sequence, config.gamma, config.tau_local), {1, N}));
    }
    out.local = batch_ranking_loss(concat_rows(rows), labels, config.margin);
  }
  return out;
}

TrainHistory train_transfer(const FrozenDualEncoder& enc, const PvpBank& bank,
                            TextPromptSet& prompts, DualAdapter& adapter,
                            const std::vector<EncodedText>& corpus, const TransferConfig& config,
                            const std::function<void(const TransferStep&)>& on_step) {
  config.validate();
  if (corpus.empty()) throw InputError("train_transfer: empty corpus");
  if (prompts.num_classes() != enc.num_classes()) {
    throw DimensionError("prompt set class count does not match encoder");
  }
  if (config.lambda_tpc > 0.0f && bank.size() != enc.num_classes()) {
    throw DimensionError("bank has " + std::to_string(bank.size()) + " prompts for " +
                         std::to_string(enc.num_classes()) + " classes");
  }

  // Bank is frozen: encode detached copies once.
  Tensor pvp_features;
  if (config.lambda_tpc > 0.0f) {
    PvpBank frozen;
    for (const auto& p : bank.prompts) frozen.prompts.push_back(p.detach());
    pvp_features = bank_features(enc, frozen);
  }

  prompts.global_context.set_requires_grad(true);
  prompts.local_context.set_requires_grad(true);
  prompts.class_words.set_requires_grad(false);
  std::vector<Tensor> adapter_params;
  for (auto [br, on] : {std::pair{&adapter.text, config.text_adapter},
                        std::pair{&adapter.visual, config.visual_adapter}}) {
    for (auto p : br->params()) {
      p.set_requires_grad(on);
      p.zero_grad();
      if (on) adapter_params.push_back(p);
    }
  }
  Sgd prompt_opt({prompts.global_context, prompts.local_context}, config.lr, config.momentum);
  Sgd adapter_opt(adapter_params, config.adapter_lr, config.momentum);

  TrainHistory hist;
  for (const auto& r : corpus) hist.skipped_records += r.labels.empty();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(corpus.size(), config.seed, epoch);
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    std::size_t step = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size, ++step) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      std::vector<const EncodedText*> batch;
      for (std::size_t k = b0; k < b1; ++k) batch.push_back(&corpus[order[k]]);
      const auto terms = transfer_losses(enc, pvp_features, prompts, adapter, batch, config);

      std::optional<Tensor> total;
      TransferStep info{epoch + 1, step, batch.size(), terms.similarity_shape, 0, 0, 0, 0};
      auto accumulate = [&](const std::optional<Tensor>& t, float w, double& slot) {
        if (!t || w == 0.0f) return;
        const Tensor weighted = affine(*t, w);
        slot = weighted.item();
        total = total ? add(*total, weighted) : weighted;
      };
      accumulate(terms.tpc, config.lambda_tpc, info.tpc);
      accumulate(terms.global, config.lambda_global, info.global);
      accumulate(terms.local, config.lambda_local, info.local);
      if (!total) continue;
      info.total = total->item();
      if (!std::isfinite(info.total)) {
        throw NumericalError("train_transfer: non-finite loss at epoch " +
                             std::to_string(epoch + 1) + " step " + std::to_string(step) +
                             " (tpc " + std::to_string(info.tpc) + ", global " +
                             std::to_string(info.global) + ", local " +
                             std::to_string(info.local) + ")");
      }
      if (on_step) on_step(info);

      prompt_opt.zero_grad();
      adapter_opt.zero_grad();
      backward(*total);
      prompt_opt.step();
      adapter_opt.step();

      hist.steps.push_back({epoch + 1, step, info.total, {info.tpc, info.global, info.local}});
      epoch_sum += info.total;
      ++epoch_steps;
    }
    hist.epoch_mean.push_back(epoch_steps ? epoch_sum / static_cast<double>(epoch_steps) : 0.0);
  }
  prompt_opt.zero_grad();
  adapter_opt.zero_grad();
  prompts.global_context.set_requires_grad(false);
  prompts.local_context.set_requires_grad(false);
  for (auto* br : {&adapter.text, &adapter.visual})
    for (auto p : br->params()) p.set_requires_grad(false);
  return hist;
}

#define PVPL_INSTANTIATE_TRANSFER(T)                                                          \
  template BasicTensor<T> apply_adapter(const BasicAdapterBranch<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> global_scores(const BasicTensor<T>&, const BasicTensor<T>&, T);     \
  template BasicTensor<T> local_scores(const BasicTensor<T>&, const BasicTensor<T>&, T, T);   \
  template BasicTensor<T> tpc_loss(const BasicTensor<T>&, const BasicTensor<T>&, T);

PVPL_INSTANTIATE_TRANSFER(float)
PVPL_INSTANTIATE_TRANSFER(double)

#undef PVPL_INSTANTIATE_TRANSFER

}  // namespace pvpl
