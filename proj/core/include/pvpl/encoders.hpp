#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pvpl/hash.hpp"
#include "pvpl/rng.hpp"
#include "pvpl/tensor.hpp"

namespace pvpl {

struct EncoderDims {
  std::size_t text_width = 32;  // token embedding width
  std::size_t latent = 64;      // shared space
  std::size_t patch = 8;
  std::size_t image = 32;  // square images, image x image x 3
  std::size_t max_seq = 32;

  std::size_t patches_per_side() const { return image / patch; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t patch_pixels() const { return patch * patch * 3; }
  void validate() const;
};

/// Geometry of the planted toy space. Defaults are the tuned toy task.
struct PlantingConfig {
  // text side
  float cross_talk = 0.0f;      // class word leaks toward the next class's direction
  float object_bias = 0.5f;     // shared "object-ness" component of class words
  float class_salience = 3.0f;  // attention salience of class words
  float eos_salience = 3.0f;
  float attention_gain = 1.0f;
  float scene_scale = 0.5f;
  float token_noise = 0.05f;
  // image side
  float pattern_gain = 2.5f;    // patch projection response to class patterns
  float projection_std = 1.0f;
  float position_std = 0.3f;
  float clutter_amp = 0.5f;     // norm of non-class value atoms
  float clutter_object = 1.0f;  // object-ness leaking into clutter atoms
  float pattern_std = 0.3f;     // per-pixel std of rendered class patterns
};

/// How fixtures are drawn from the class patterns.
struct RenderConfig {
  int max_copies = 2;  // each object occupies 1..max_copies patch slots
  float amp_lo = 0.7f;
  float amp_hi = 1.3f;
  float background_std = 0.3f;
  float pixel_noise = 0.15f;
};

/// Word lists the encoder vocabulary is built from. Class tokens get planted
/// embeddings; every other word is scene filler.
struct VocabSpec {
  std::vector<std::vector<std::string>> class_tokens;  // per class, every token of every surface form
  std::vector<std::string> words;
};

template <class T>
struct BasicEncoderOutput {
  BasicTensor<T> global;    // [latent], unit norm
  BasicTensor<T> sequence;  // [L x latent]
};
using EncoderOutput = BasicEncoderOutput<float>;

struct LabeledImage {
  Tensor image;  // [image x image x 3]
  std::vector<std::size_t> labels;
};

/// Frozen toy dual encoder with planted class structure.
///
/// Text: token embeddings, one residual self-attention layer, projection to the
/// shared space; the global feature is the normalized EOS row. Image: 8x8 patches
/// projected to the latent width, one residual self-attention layer, and
/// attention pooling with the mean patch as query.
///
/// All parameters are a pure function of (seed, dims, vocab, planting). Nothing
/// here is mutable after build, so one instance can be shared across threads.
class FrozenDualEncoder {
 public:
  static constexpr std::int32_t kOovId = 0;
  static constexpr std::int32_t kEosId = 1;

  static FrozenDualEncoder build(std::uint64_t seed, const EncoderDims& dims,
                                 const VocabSpec& vocab, const PlantingConfig& planting = {},
                                 const RenderConfig& render = {});

  const EncoderDims& dims() const { return dims_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t vocab_size() const { return id_to_token_.size(); }
  std::int32_t token_id(const std::string& token) const;
  const std::string& token(std::int32_t id) const { return id_to_token_.at(id); }

  /// Lowercase, split on non-alphanumerics, map through the vocabulary, append
  /// EOS, truncate to max_seq (EOS kept as the last id).
  std::vector<std::int32_t> tokenize(const std::string& sentence) const;

  EncoderOutput encode_text(const std::vector<std::int32_t>& ids) const;

  /// Encode an explicit embedding sequence [L x text_width] whose last row
  /// plays the EOS role. Differentiable with respect to the rows.
  template <class T>
  BasicEncoderOutput<T> encode_embeddings(const BasicTensor<T>& rows) const;

  /// Image [image x image x 3] -> features. Differentiable w.r.t. the image.
  template <class T>
  BasicEncoderOutput<T> encode_image(const BasicTensor<T>& image) const;
  EncoderOutput encode_image(const Tensor& image) const { return encode_image<float>(image); }

  /// Frozen embedding row of a token id, [text_width].
  Tensor token_embedding(std::int32_t id) const;
  /// Mean embedding of a class surface form's tokens (multi-token names).
  Tensor phrase_embedding(const std::string& phrase) const;

  /// Planted class anchor directions [num_classes x latent], orthonormal.
  const Tensor& anchors() const { return anchors_; }

  /// Render an image containing the given classes.
  Tensor render(const std::vector<std::size_t>& labels, Rng& rng) const;
  /// Render a single class pattern tile with no noise, [patch x patch x 3].
  Tensor pattern_tile(std::size_t cls) const;
  /// `count` images with 1..3 distinct labels each.
  std::vector<LabeledImage> render_set(std::size_t count, std::uint64_t seed,
                                       std::size_t max_labels = 3) const;

  /// Named parameter list in a fixed order.
  NamedTensors parameters() const;
  /// SHA-256 over serialize_named(parameters()).
  std::string checksum() const;

 private:
  template <class T>
  struct Params;
  template <class T>
  const Params<T>& params() const;

  EncoderDims dims_;
  std::uint64_t seed_ = 0;
  std::size_t num_classes_ = 0;
  RenderConfig render_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;

  Tensor token_embedding_;  // [V x De]
  Tensor text_q_, text_k_, text_v_;  // [De x De]
  Tensor text_proj_;                 // [De x D]
  Tensor patch_proj_;                // [pp x D]
  Tensor position_;                  // [P x D]
  Tensor image_q_, image_k_;         // [D x D]
  Tensor pool_q_, pool_k_, pool_v_;  // [D x D]
  Tensor patterns_;                  // [N x pp]
  Tensor anchors_;                   // [N x D]
  std::shared_ptr<const Params<float>> params32_;
  std::shared_ptr<const Params<double>> params64_;
};

/// Patch layout [P x pp] of an image [S x S x 3] as gather indices.
std::vector<std::size_t> patch_indices(const EncoderDims& dims);

}  // namespace pvpl
