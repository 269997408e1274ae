#include "pvpl/encoders.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "pvpl/ops.hpp"
#include "pvpl/text.hpp"

namespace pvpl {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

template <class T>
struct FrozenDualEncoder::Params {
  BasicTensor<T> text_q, text_k, text_v, text_proj;
  BasicTensor<T> patch_proj, position, image_q, image_k, pool_q, pool_k, pool_v;
  std::vector<std::size_t> patch_idx;
};

template <>
const FrozenDualEncoder::Params<float>& FrozenDualEncoder::params<float>() const {
  return *params32_;
}
template <>
const FrozenDualEncoder::Params<double>& FrozenDualEncoder::params<double>() const {
  return *params64_;
}

void EncoderDims::validate() const {
  if (!text_width || !latent || !patch || !image || !max_seq) {
    throw ParameterError("encoder dims must all be positive");
  }
  if (image % patch != 0) {
    throw DimensionError("image size " + std::to_string(image) +
                         " is not a multiple of patch size " + std::to_string(patch));
  }
  if (max_seq < 2) throw ParameterError("max_seq must leave room for a token and EOS");
}

namespace {

Mat randn(Rng& rng, Eigen::Index r, Eigen::Index c, double std = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal() * std;
  return m;
}

// Thin Q factor of a tall matrix: orthonormal columns spanning `a`.
Mat orthonormal_columns(const Mat& a) {
  Eigen::HouseholderQR<Mat> qr(a);
  return qr.householderQ() * Mat::Identity(a.rows(), a.cols());
}

Tensor to_tensor(const Mat& m) {
  std::vector<float> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      v[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::move(v));
}

// Per-axis basis for class patterns, lowest frequency first: constant, a
// half-period bump, then even cosines. All are symmetric about the centre.
std::vector<Vec> axis_waves(Eigen::Index n) {
  const double pi = std::acos(-1.0);
  auto wave = [&](auto&& f) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      v(i) = f(pi * (static_cast<double>(i) + 0.5) / static_cast<double>(n));
    }
    return v;
  };
  std::vector<Vec> out{Vec::Ones(n), wave([](double t) { return std::sin(t); })};
  for (Eigen::Index k = 2; k < n; k += 2) {
    out.push_back(wave([&](double t) { return std::cos(static_cast<double>(k) * t); }));
  }
  return out;
}

}  // namespace

std::vector<std::size_t> patch_indices(const EncoderDims& dims) {
  const std::size_t S = dims.image, P = dims.patch, G = dims.patches_per_side();
  std::vector<std::size_t> idx;
  idx.reserve(S * S * 3);
  for (std::size_t py = 0; py < G; ++py)
    for (std::size_t px = 0; px < G; ++px)
      for (std::size_t dy = 0; dy < P; ++dy)
        for (std::size_t dx = 0; dx < P; ++dx)
          for (std::size_t c = 0; c < 3; ++c)
            idx.push_back(((py * P + dy) * S + px * P + dx) * 3 + c);
  return idx;
}

FrozenDualEncoder FrozenDualEncoder::build(std::uint64_t seed, const EncoderDims& dims,
                                           const VocabSpec& vocab,
                                           const PlantingConfig& planting,
                                           const RenderConfig& render) {
  dims.validate();
  const std::size_t N = vocab.class_tokens.size();
  const auto De = static_cast<Eigen::Index>(dims.text_width);
  const auto D = static_cast<Eigen::Index>(dims.latent);
  const auto pp = static_cast<Eigen::Index>(dims.patch_pixels());
  const auto P = static_cast<Eigen::Index>(dims.num_patches());
  // Class directions, salience and object-ness share the token space with a
  // nonempty scene complement.
  if (N == 0) throw InputError("encoder needs at least one class");
  if (N + 4 > dims.text_width || N > dims.latent || static_cast<Eigen::Index>(N) > pp) {
    throw ParameterError("too many classes (" + std::to_string(N) + ") for text width " +
                         std::to_string(dims.text_width) + "; at most text_width - 4 fit");
  }
  if (render.max_copies < 1 || render.amp_lo > render.amp_hi) {
    throw ParameterError("invalid render config");
  }

  FrozenDualEncoder enc;
  enc.dims_ = dims;
  enc.seed_ = seed;
  enc.num_classes_ = N;
  enc.render_ = render;

  // Vocabulary: specials, class tokens, then filler words.
  std::vector<int> token_class;  // -1 for non-class tokens
  auto add_token = [&](const std::string& t, int cls) {
    auto it = enc.token_to_id_.find(t);
    if (it != enc.token_to_id_.end()) {
      const int prev = token_class[static_cast<std::size_t>(it->second)];
      if (cls >= 0 && prev >= 0 && prev != cls) {
        throw InputError("token '" + t + "' belongs to two classes");
      }
      return;
    }
    enc.token_to_id_.emplace(t, static_cast<std::int32_t>(enc.id_to_token_.size()));
    enc.id_to_token_.push_back(t);
    token_class.push_back(cls);
  };
  add_token("<oov>", -1);
  add_token("<eos>", -1);
  for (std::size_t c = 0; c < N; ++c) {
    if (vocab.class_tokens[c].empty()) throw InputError("class without tokens");
    for (const auto& form : vocab.class_tokens[c])
      for (const auto& t : split_words(form)) add_token(t, static_cast<int>(c));
  }
  for (const auto& w : vocab.words)
    for (const auto& t : split_words(w))
      if (!enc.token_to_id_.count(t)) add_token(t, -1);

  Rng rng(seed);
  const PlantingConfig& pc = planting;

  // Text geometry.
  const Mat Q = orthonormal_columns(randn(rng, De, De));
  const auto n = static_cast<Eigen::Index>(N);
  const Vec s = Q.col(n);
  const Vec w0 = Q.col(n + 1);
  const Mat comp = Q.rightCols(De - n - 2);
  const Mat proj_full = orthonormal_columns(randn(rng, D, De)).transpose();  // De x D
  const Mat anchors = Q.leftCols(n).transpose() * proj_full;                  // N x D
  // The projection ignores salience so attention routing does not leak into
  // the shared space.
  const Mat proj = (Mat::Identity(De, De) - s * s.transpose()) * proj_full;

  const auto V = static_cast<Eigen::Index>(enc.id_to_token_.size());
  Mat emb(V, De);
  const double scene_norm = pc.scene_scale * std::sqrt(static_cast<double>(De)) / 4.0;
  const double kc = static_cast<double>(comp.cols());
  for (Eigen::Index t = 0; t < V; ++t) {
    const int cls = token_class[static_cast<std::size_t>(t)];
    Vec e;
    if (t == kEosId) {
      e = pc.eos_salience * s;
    } else if (cls >= 0) {
      const auto c = static_cast<Eigen::Index>(cls);
      e = Q.col(c) + pc.cross_talk * Q.col((c + 1) % n) + pc.object_bias * w0 +
          pc.class_salience * s;
    } else {
      e = comp * randn(rng, comp.cols(), 1) / std::sqrt(kc) * scene_norm;
    }
    emb.row(t) = (e + randn(rng, De, 1, pc.token_noise)).transpose();
  }
  const double attn_noise = 0.1 / std::sqrt(static_cast<double>(De));
  const Mat ss = s * s.transpose();
  const Mat text_q = pc.attention_gain * ss + randn(rng, De, De, attn_noise);
  const Mat text_k = pc.attention_gain * ss + randn(rng, De, De, attn_noise);
  const Mat text_v = Mat::Identity(De, De) + randn(rng, De, De, attn_noise);

  // Image geometry: mirror-symmetric orthonormal class patterns built from
  // slowly varying waves, so small shifts keep much of each pattern.
  const auto Pp = static_cast<Eigen::Index>(dims.patch);
  const auto axis = axis_waves(Pp);
  struct Wave {
    std::size_t ix, iy;
    Eigen::Index ch;
  };
  std::vector<Wave> waves;
  for (std::size_t ix = 0; ix < axis.size(); ++ix)
    for (std::size_t iy = 0; iy < axis.size(); ++iy)
      for (Eigen::Index ch = 0; ch < 3; ++ch) waves.push_back({ix, iy, ch});
  std::stable_sort(waves.begin(), waves.end(),
                   [](const Wave& a, const Wave& b) { return a.ix + a.iy < b.ix + b.iy; });
  const std::size_t used_waves =
      std::min(waves.size(), std::max<std::size_t>(12, 2 * static_cast<std::size_t>(n)));
  if (static_cast<std::size_t>(n) > used_waves) {
    throw ParameterError("too many classes for the patch size");
  }
  Mat raw = Mat::Zero(pp, n);
  for (std::size_t w = 0; w < used_waves; ++w) {
    const auto& wv = waves[w];
    Vec basis = Vec::Zero(pp);
    for (Eigen::Index dy = 0; dy < Pp; ++dy)
      for (Eigen::Index dx = 0; dx < Pp; ++dx)
        basis((dy * Pp + dx) * 3 + wv.ch) = axis[wv.ix](dx) * axis[wv.iy](dy);
    raw += basis * (randn(rng, 1, n) / static_cast<double>(1 + wv.ix + wv.iy));
  }
  const Mat pattern_unit = orthonormal_columns(raw).transpose();  // N x pp, unit rows
  const Mat patterns = pattern_unit * (std::sqrt(static_cast<double>(pp)) * pc.pattern_std);
  Mat patch_proj = randn(rng, pp, D, pc.projection_std / std::sqrt(static_cast<double>(pp)));
  for (Eigen::Index c = 0; c < n; ++c) patch_proj.col(c) += pc.pattern_gain * pattern_unit.row(c).transpose();
  const Mat position = randn(rng, P, D, pc.position_std);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));
  const Mat image_q = randn(rng, D, D, inv_sqrt_d);
  const Mat image_k = randn(rng, D, D, inv_sqrt_d);
  const Vec object_dir = (w0.transpose() * proj).transpose().normalized();
  Mat pool_v(D, D);
  for (Eigen::Index j = 0; j < D; ++j) {
    if (j < n) {
      pool_v.row(j) = anchors.row(j).normalized();
    } else {
      Vec r = randn(rng, D, 1).normalized() + pc.clutter_object * object_dir;
      pool_v.row(j) = r.normalized().transpose() * pc.clutter_amp;
    }
  }
  const Mat pool_q = randn(rng, D, D, inv_sqrt_d);
  const Mat pool_k = randn(rng, D, D, inv_sqrt_d);

  enc.token_embedding_ = to_tensor(emb);
  enc.text_q_ = to_tensor(text_q);
  enc.text_k_ = to_tensor(text_k);
  enc.text_v_ = to_tensor(text_v);
  enc.text_proj_ = to_tensor(proj);
  enc.patch_proj_ = to_tensor(patch_proj);
  enc.position_ = to_tensor(position);
  enc.image_q_ = to_tensor(image_q);
  enc.image_k_ = to_tensor(image_k);
  enc.pool_q_ = to_tensor(pool_q);
  enc.pool_k_ = to_tensor(pool_k);
  enc.pool_v_ = to_tensor(pool_v);
  enc.patterns_ = to_tensor(patterns);
  enc.anchors_ = to_tensor(anchors);

  auto p32 = std::make_shared<Params<float>>(
      Params<float>{enc.text_q_, enc.text_k_, enc.text_v_, enc.text_proj_, enc.patch_proj_,
                    enc.position_, enc.image_q_, enc.image_k_, enc.pool_q_, enc.pool_k_,
                    enc.pool_v_, patch_indices(dims)});
  auto p64 = std::make_shared<Params<double>>(Params<double>{
      p32->text_q.cast<double>(), p32->text_k.cast<double>(), p32->text_v.cast<double>(),
      p32->text_proj.cast<double>(), p32->patch_proj.cast<double>(),
      p32->position.cast<double>(), p32->image_q.cast<double>(), p32->image_k.cast<double>(),
      p32->pool_q.cast<double>(), p32->pool_k.cast<double>(), p32->pool_v.cast<double>(),
      p32->patch_idx});
  enc.params32_ = std::move(p32);
  enc.params64_ = std::move(p64);
  return enc;
}

std::int32_t FrozenDualEncoder::token_id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kOovId : it->second;
}

std::vector<std::int32_t> FrozenDualEncoder::tokenize(const std::string& sentence) const {
  std::vector<std::int32_t> ids;
  for (const auto& w : split_words(sentence)) {
    if (ids.size() + 1 >= dims_.max_seq) break;
    ids.push_back(token_id(w));
  }
  ids.push_back(kEosId);
  return ids;
}

Tensor FrozenDualEncoder::token_embedding(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
    throw InputError("token id " + std::to_string(id) + " out of vocabulary");
  }
  const std::size_t De = dims_.text_width;
  auto d = token_embedding_.data();
  return Tensor({De}, std::vector<float>(d.begin() + id * De, d.begin() + (id + 1) * De));
}

Tensor FrozenDualEncoder::phrase_embedding(const std::string& phrase) const {
  const auto words = split_words(phrase);
  if (words.empty()) throw InputError("empty class phrase");
  const std::size_t De = dims_.text_width;
  std::vector<float> acc(De, 0.0f);
  for (const auto& w : words) {
    const Tensor e = token_embedding(token_id(w));
    for (std::size_t j = 0; j < De; ++j) acc[j] += e.data()[j];
  }
  for (auto& v : acc) v /= static_cast<float>(words.size());
  return Tensor({De}, std::move(acc));
}

EncoderOutput FrozenDualEncoder::encode_text(const std::vector<std::int32_t>& ids) const {
  if (ids.empty() || ids.back() != kEosId) throw InputError("token sequence must end with EOS");
  if (ids.size() > dims_.max_seq) {
    throw InputError("token sequence of length " + std::to_string(ids.size()) +
                     " exceeds max " + std::to_string(dims_.max_seq));
  }
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
      throw InputError("token id " + std::to_string(id) + " out of vocabulary");
    }
    rows.push_back(static_cast<std::size_t>(id));
  }
  return encode_embeddings<float>(select_rows(token_embedding_, rows));
}

template <class T>
BasicEncoderOutput<T> FrozenDualEncoder::encode_embeddings(const BasicTensor<T>& X) const {
  if (X.rank() != 2 || X.dim(1) != dims_.text_width) {
    throw DimensionError("text embeddings must be [L x " + std::to_string(dims_.text_width) +
                         "], got " + shape_string(X.shape()));
  }
  if (X.dim(0) == 0 || X.dim(0) > dims_.max_seq) {
    throw InputError("text sequence length " + std::to_string(X.dim(0)) + " outside [1, " +
                     std::to_string(dims_.max_seq) + "]");
  }
  const auto& p = params<T>();
  const T inv = T(1) / std::sqrt(static_cast<T>(dims_.text_width));
  auto q = matmul(X, p.text_q);
  auto k = matmul(X, p.text_k);
  auto a = softmax(affine(matmul(q, transpose(k)), inv));
  auto y = add(X, matmul(a, matmul(X, p.text_v)));
  auto h = matmul(y, p.text_proj);
  auto global = l2_normalize_rows(row(h, X.dim(0) - 1));
  return {global, h};
}

template <class T>
BasicEncoderOutput<T> FrozenDualEncoder::encode_image(const BasicTensor<T>& image) const {
  const std::size_t S = dims_.image;
  if (image.shape() != Shape{S, S, 3}) {
    throw DimensionError("image must be " + shape_string({S, S, 3}) + ", got " +
                         shape_string(image.shape()));
  }
  const auto& p = params<T>();
  const std::size_t P = dims_.num_patches();
  const std::size_t D = dims_.latent;
  const T inv = T(1) / std::sqrt(static_cast<T>(D));
  auto x = gather(image, p.patch_idx, {P, dims_.patch_pixels()});
  auto e = relu(add(matmul(x, p.patch_proj), p.position));
  auto att = softmax(affine(matmul(matmul(e, p.image_q), transpose(matmul(e, p.image_k))), inv));
  auto e2 = add(e, matmul(att, e));
  auto v = matmul(e2, p.pool_v);
  auto query = matmul(reshape(mean_rows(e2), {1, D}), p.pool_q);           // [1 x D]
  auto logits = affine(matmul(matmul(e2, p.pool_k), transpose(query)), inv);  // [P x 1]
  auto weights = softmax(reshape(logits, {P}));
  auto pooled = matmul(reshape(weights, {1, P}), v);
  auto global = l2_normalize_rows(reshape(pooled, {D}));
  return {global, v};
}

Tensor FrozenDualEncoder::pattern_tile(std::size_t cls) const {
  if (cls >= num_classes_) throw ParameterError("class index out of range");
  const std::size_t pp = dims_.patch_pixels();
  auto d = patterns_.data();
  return Tensor({dims_.patch, dims_.patch, 3},
                std::vector<float>(d.begin() + cls * pp, d.begin() + (cls + 1) * pp));
}

Tensor FrozenDualEncoder::render(const std::vector<std::size_t>& labels, Rng& rng) const {
  const std::size_t S = dims_.image, Pz = dims_.patch, G = dims_.patches_per_side();
  std::vector<float> img(S * S * 3, 0.0f);
  std::vector<std::size_t> slots(G * G);
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  rng.shuffle(slots);
  auto put = [&](std::size_t slot, auto&& value) {
    const std::size_t py = slot / G, px = slot % G;
    for (std::size_t dy = 0; dy < Pz; ++dy)
      for (std::size_t dx = 0; dx < Pz; ++dx)
        for (std::size_t c = 0; c < 3; ++c)
          img[((py * Pz + dy) * S + px * Pz + dx) * 3 + c] = value((dy * Pz + dx) * 3 + c);
  };
  std::size_t used = 0;
  for (std::size_t cls : labels) {
    if (cls >= num_classes_) throw ParameterError("render: class index out of range");
    const auto copies = static_cast<std::size_t>(rng.uniform_int(1, render_.max_copies));
    for (std::size_t k = 0; k < copies && used < slots.size(); ++k) {
      const float amp = static_cast<float>(rng.uniform(render_.amp_lo, render_.amp_hi));
      const float* pat = patterns_.data().data() + cls * dims_.patch_pixels();
      put(slots[used++], [&](std::size_t i) { return pat[i] * amp; });
    }
  }
  for (; used < slots.size(); ++used) {
    put(slots[used],
        [&](std::size_t) { return static_cast<float>(rng.normal() * render_.background_std); });
  }
  for (auto& v : img) v += static_cast<float>(rng.normal() * render_.pixel_noise);
  return Tensor({S, S, 3}, std::move(img));
}

std::vector<LabeledImage> FrozenDualEncoder::render_set(std::size_t count, std::uint64_t seed,
                                                        std::size_t max_labels) const {
  static constexpr std::size_t kLabelCounts[] = {1, 1, 2, 2, 3};
  Rng rng(seed);
  const std::size_t cap = std::max<std::size_t>(1, std::min(max_labels, num_classes_));
  std::vector<LabeledImage> out;
  out.reserve(count);
  std::vector<std::size_t> classes(num_classes_);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = std::min(kLabelCounts[rng.index(5)], cap);
    for (std::size_t c = 0; c < num_classes_; ++c) classes[c] = c;
    // partial Fisher-Yates
    for (std::size_t j = 0; j < k; ++j) std::swap(classes[j], classes[j + rng.index(num_classes_ - j)]);
    std::vector<std::size_t> labels(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(k));
    Tensor img = render(labels, rng);
    std::sort(labels.begin(), labels.end());
    out.push_back({std::move(img), std::move(labels)});
  }
  return out;
}

NamedTensors FrozenDualEncoder::parameters() const {
  return {
      {"encoder.text.token_embedding", token_embedding_},
      {"encoder.text.attn_q", text_q_},
      {"encoder.text.attn_k", text_k_},
      {"encoder.text.attn_v", text_v_},
      {"encoder.text.projection", text_proj_},
      {"encoder.image.patch_projection", patch_proj_},
      {"encoder.image.position", position_},
      {"encoder.image.attn_q", image_q_},
      {"encoder.image.attn_k", image_k_},
      {"encoder.image.pool_q", pool_q_},
      {"encoder.image.pool_k", pool_k_},
      {"encoder.image.pool_v", pool_v_},
      {"encoder.image.class_patterns", patterns_},
      {"encoder.anchors", anchors_},
  };
}

std::string FrozenDualEncoder::checksum() const { return pvpl::checksum(parameters()); }

template BasicEncoderOutput<float> FrozenDualEncoder::encode_embeddings(const Tensor&) const;
template BasicEncoderOutput<double> FrozenDualEncoder::encode_embeddings(
    const BasicTensor<double>&) const;
template BasicEncoderOutput<float> FrozenDualEncoder::encode_image(const Tensor&) const;
template BasicEncoderOutput<double> FrozenDualEncoder::encode_image(
    const BasicTensor<double>&) const;

}  // namespace pvpl
