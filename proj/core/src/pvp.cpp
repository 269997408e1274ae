#include "pvpl/pvp.hpp"

#include <algorithm>
#include <cmath>

#include "pvpl/ops.hpp"
#include "pvpl/optim.hpp"

namespace pvpl {

NamedTensors PvpBank::named() const {
  NamedTensors out;
  for (std::size_t i = 0; i < prompts.size(); ++i) out.emplace_back("pvp." + std::to_string(i), prompts[i]);
  return out;
}

std::string PvpBank::checksum() const { return pvpl::checksum(named()); }

void PvpTrainConfig::validate() const {
  if (!(margin > 0.0f)) throw ParameterError("margin must be positive");
  if (!(lr > 0.0f)) throw ParameterError("learning rate must be positive");
  if (!(gamma > 0.0f)) throw ParameterError("similarity scale must be positive");
  if (batch_size == 0) throw ParameterError("batch size must be positive");
}

std::vector<EncodedText> encode_records(const FrozenDualEncoder& enc,
                                        const std::vector<CorpusRecord>& records) {
  std::vector<EncodedText> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto o = enc.encode_text(enc.tokenize(r.sentence));
    out.push_back({o.global, o.sequence, r.labels});
  }
  return out;
}

PvpBank init_bank(std::size_t num_classes, std::size_t height, std::size_t width,
                  std::uint64_t seed, const EncoderDims& dims) {
  if (height % dims.patch != 0 || width % dims.patch != 0) {
    throw DimensionError("prompt size " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not a multiple of patch size " + std::to_string(dims.patch));
  }
  if (height != dims.image || width != dims.image) {
    throw DimensionError("prompt size must equal the encoder image size " +
                         std::to_string(dims.image));
  }
  if (num_classes == 0) throw InputError("bank needs at least one class");
  Rng rng(seed);
  PvpBank bank;
  bank.init_seed = seed;
  for (std::size_t n = 0; n < num_classes; ++n) {
    std::vector<float> v(height * width * 3);
    for (auto& x : v) x = static_cast<float>(rng.normal(0.0, 0.02));
    bank.prompts.emplace_back(Shape{height, width, 3}, std::move(v), true);
  }
  return bank;
}

Tensor bank_features(const FrozenDualEncoder& enc, const PvpBank& bank) {
  std::vector<Tensor> rows;
  rows.reserve(bank.size());
  for (const auto& p : bank.prompts) rows.push_back(enc.encode_image(p).global);
  return concat_rows(rows);
}

Tensor pvp_similarities(const FrozenDualEncoder& enc, const PvpBank& bank,
                        const Tensor& text_global, float gamma) {
  const std::size_t D = enc.dims().latent;
  if (text_global.size() != D) {
    throw DimensionError("text feature " + shape_string(text_global.shape()) + " is not length " +
                         std::to_string(D));
  }
  auto f = bank_features(enc, bank);  // unit rows, so cos is a dot product
  auto s = matmul(f, reshape(text_global, {D, 1}));
  return affine(reshape(s, {bank.size()}), gamma);
}

namespace {

template <class T>
BasicTensor<T> hinge_pairs(const BasicTensor<T>& flat_scores, const std::vector<std::size_t>& pos,
                           const std::vector<std::size_t>& neg, T margin) {
  const Shape shape{pos.size()};
  auto sp = gather(flat_scores, pos, shape);
  auto sn = gather(flat_scores, neg, shape);
  return sum(relu(affine(sub(sn, sp), T(1), margin)));
}

}  // namespace

template <class T>
std::optional<BasicTensor<T>> ranking_loss(const BasicTensor<T>& scores,
                                           const std::vector<std::size_t>& positives,
                                           const std::vector<std::size_t>& negatives, T margin) {
  if (positives.empty()) return std::nullopt;
  for (std::size_t i : positives) {
    if (i >= scores.size()) throw ParameterError("positive index out of range");
    if (std::find(negatives.begin(), negatives.end(), i) != negatives.end()) {
      throw ParameterError("class " + std::to_string(i) + " is both positive and negative");
    }
  }
  for (std::size_t j : negatives)
    if (j >= scores.size()) throw ParameterError("negative index out of range");
  std::vector<std::size_t> pi, nj;
  for (std::size_t i : positives)
    for (std::size_t j : negatives) {
      pi.push_back(i);
      nj.push_back(j);
    }
  if (pi.empty()) return make_result<T>({}, {T(0)}, {scores}, [](detail::Node<T>&) {});
  return hinge_pairs(reshape(scores, {scores.size()}), pi, nj, margin);
}

template <class T>
std::optional<BasicTensor<T>> batch_ranking_loss(
    const BasicTensor<T>& scores, const std::vector<const std::vector<std::size_t>*>& labels,
    T margin) {
  const std::size_t B = scores.dim(0), N = scores.dim(1);
  if (labels.size() != B) throw DimensionError("one label set per score row required");
  std::vector<std::size_t> pi, nj;
  std::size_t used = 0;
  std::vector<bool> positive(N);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& lab = *labels[b];
    if (lab.empty()) continue;
    ++used;
    std::fill(positive.begin(), positive.end(), false);
    for (std::size_t c : lab) {
      if (c >= N) throw ParameterError("label index out of range");
      positive[c] = true;
    }
    for (std::size_t i : lab)
      for (std::size_t j = 0; j < N; ++j)
        if (!positive[j]) {
          pi.push_back(b * N + i);
          nj.push_back(b * N + j);
        }
  }
  if (used == 0) return std::nullopt;
  const T inv = T(1) / static_cast<T>(used);
  if (pi.empty()) return make_result<T>({}, {T(0)}, {scores}, [](detail::Node<T>&) {});
  return affine(hinge_pairs(reshape(scores, {B * N}), pi, nj, margin), inv);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(Rng::derive(seed, epoch));
  rng.shuffle(order);
  return order;
}

TrainHistory train_pvp(const FrozenDualEncoder& enc, PvpBank& bank,
                       const std::vector<CorpusRecord>& corpus, const PvpTrainConfig& config) {
  return train_pvp(enc, bank, encode_records(enc, corpus), config);
}

TrainHistory train_pvp(const FrozenDualEncoder& enc, PvpBank& bank,
                       const std::vector<EncodedText>& corpus, const PvpTrainConfig& config) {
  config.validate();
  if (corpus.empty()) throw InputError("train_pvp: empty corpus");
  if (bank.size() != enc.num_classes()) {
    throw DimensionError("bank has " + std::to_string(bank.size()) + " prompts for " +
                         std::to_string(enc.num_classes()) + " classes");
  }
  for (auto& p : bank.prompts) p.set_requires_grad(true);
  const std::size_t D = enc.dims().latent;
  Sgd opt(bank.prompts, config.lr, config.momentum);
  TrainHistory hist;
  for (const auto& r : corpus) hist.skipped_records += r.labels.empty();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(corpus.size(), config.seed, epoch);
    double epoch_sum = 0.0;
    std::size_t epoch_n = 0;
    std::size_t step = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size, ++step) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      std::vector<float> hdata;
      std::vector<const std::vector<std::size_t>*> labels;
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& r = corpus[order[k]];
        hdata.insert(hdata.end(), r.global.data().begin(), r.global.data().end());
        labels.push_back(&r.labels);
      }
      const std::size_t B = b1 - b0;
      const Tensor h({B, D}, std::move(hdata));
      const auto f = bank_features(enc, bank);
      const auto scores = affine(matmul(h, transpose(f)), config.gamma);
      auto loss = batch_ranking_loss(scores, labels, config.margin);
      if (!loss) continue;
      const double value = loss->item();
      if (!std::isfinite(value)) {
        throw NumericalError("train_pvp: non-finite loss at epoch " + std::to_string(epoch + 1) +
                             " step " + std::to_string(step));
      }
      opt.zero_grad();
      backward(*loss);
      opt.step();
      for (const auto& p : bank.prompts)
        for (float v : p.data())
          if (!std::isfinite(v)) {
            throw NumericalError("train_pvp: non-finite prompt value at epoch " +
                                 std::to_string(epoch + 1) + " step " + std::to_string(step));
          }
      std::size_t used = 0;
      for (auto* l : labels) used += !l->empty();
      epoch_sum += value * static_cast<double>(used);
      epoch_n += used;
      hist.steps.push_back({epoch + 1, step, value, {}});
    }
    hist.epoch_mean.push_back(epoch_n ? epoch_sum / static_cast<double>(epoch_n) : 0.0);
  }
  opt.zero_grad();
  for (auto& p : bank.prompts) p.set_requires_grad(false);
  return hist;
}

std::vector<float> zero_shot_scores_pvp(const FrozenDualEncoder& enc, const PvpBank& bank,
                                        const Tensor& image, float gamma) {
  const auto s = pvp_similarities(enc, bank, enc.encode_image(image.detach()).global, gamma);
  return {s.data().begin(), s.data().end()};
}

template std::optional<BasicTensor<float>> ranking_loss(const BasicTensor<float>&,
                                                        const std::vector<std::size_t>&,
                                                        const std::vector<std::size_t>&, float);
template std::optional<BasicTensor<double>> ranking_loss(const BasicTensor<double>&,
                                                         const std::vector<std::size_t>&,
                                                         const std::vector<std::size_t>&, double);
template std::optional<BasicTensor<float>> batch_ranking_loss(
    const BasicTensor<float>&, const std::vector<const std::vector<std::size_t>*>&, float);
template std::optional<BasicTensor<double>> batch_ranking_loss(
    const BasicTensor<double>&, const std::vector<const std::vector<std::size_t>*>&, double);

}  // namespace pvpl
