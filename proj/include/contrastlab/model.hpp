#pragma once

// Dual encoders: a 2-layer tanh perceptron over image features and a
// mean-pooled token-embedding tower for text, each followed by a linear
// projection into the shared embedding space and L2 normalization, plus the
// learnable log-temperature. Forward caches enough to run the exact analytic
// backward pass, including the normalization Jacobian.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "contrastlab/corpus.hpp"
#include "contrastlab/sampler.hpp"

namespace contrastlab {

struct ModelDims {
  int d_img = 32;
  int vocab_size = 96;
  int d_txt = 32;
  int vision_hidden = 64;
  int text_hidden = 64;
  int vision_feat = 32;
  int text_feat = 32;
  int embed_dim = 512;  // shared projection space

  void validate() const;
};

struct EncoderParams {
  ModelDims dims;

  Eigen::MatrixXd vision_w1;  // vision_hidden x d_img
  Eigen::VectorXd vision_b1;
  Eigen::MatrixXd vision_w2;  // vision_feat x vision_hidden
  Eigen::VectorXd vision_b2;
  Eigen::MatrixXd vision_proj;  // embed_dim x vision_feat, no bias

  Eigen::MatrixXd token_embedding;  // vocab_size x d_txt
  Eigen::MatrixXd text_w1;          // text_hidden x d_txt
  Eigen::VectorXd text_b1;
  Eigen::MatrixXd text_w2;  // text_feat x text_hidden
  Eigen::VectorXd text_b2;
  Eigen::MatrixXd text_proj;  // embed_dim x text_feat, no bias

  double log_temperature = 0.0;

  double temperature() const;

  // Uniform walk over every parameter tensor (log_temperature included as a
  // 1-element tensor); the optimizer, clipping, serialization and the
  // finite-difference harness all build on this.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("vision_w1", vision_w1.data(), vision_w1.size());
    fn("vision_b1", vision_b1.data(), vision_b1.size());
    fn("vision_w2", vision_w2.data(), vision_w2.size());
    fn("vision_b2", vision_b2.data(), vision_b2.size());
    fn("vision_proj", vision_proj.data(), vision_proj.size());
    fn("token_embedding", token_embedding.data(), token_embedding.size());
    fn("text_w1", text_w1.data(), text_w1.size());
    fn("text_b1", text_b1.data(), text_b1.size());
    fn("text_w2", text_w2.data(), text_w2.size());
    fn("text_b2", text_b2.data(), text_b2.size());
    fn("text_proj", text_proj.data(), text_proj.size());
    fn("log_temperature", &log_temperature, static_cast<Eigen::Index>(1));
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<EncoderParams*>(this)->for_each_tensor(
        [&](const char* name, double* data, Eigen::Index size) {
          fn(name, static_cast<const double*>(data), size);
        });
  }

  Eigen::Index parameter_count() const;
};

// Seeded scaled-uniform init (scale 1/sqrt(fan_in)); log_temperature = ln 0.07.
EncoderParams init_params(const ModelDims& dims, std::uint64_t seed);

// Same shapes as `params`, every entry zero. Gradients are carried in an
// EncoderParams so tensor-wise walks line up with the parameters.
EncoderParams zeros_like(const EncoderParams& params);

struct EmbeddingBatch {
  Eigen::MatrixXd image_emb;  // N x embed_dim, unit-norm rows
  Eigen::MatrixXd text_emb;   // N x embed_dim, unit-norm rows
  std::vector<int> study_ids;
  Framing framing;
};

struct ForwardCache {
  // One row per study; pre-activation inputs and post-activation values the
  // backward pass needs.
  Eigen::MatrixXd vision_input;   // N x d_img
  Eigen::MatrixXd vision_h1;      // N x vision_hidden (tanh outputs)
  Eigen::MatrixXd vision_feat;    // N x vision_feat
  Eigen::VectorXd vision_norm;    // pre-normalization L2 norms
  std::vector<bool> vision_fallback;

  std::vector<TokenSeq> tokens;  // resolved text per study (after empty fallback)
  Eigen::MatrixXd text_mean;     // N x d_txt (mean-pooled embeddings)
  Eigen::MatrixXd text_h1;       // N x text_hidden
  Eigen::MatrixXd text_feat;     // N x text_feat
  Eigen::VectorXd text_norm;
  std::vector<bool> text_fallback;

  Eigen::MatrixXd image_emb;  // unit rows (copies of the EmbeddingBatch)
  Eigen::MatrixXd text_emb;
};

// Deterministic forward pass; text input selected by the framing. Empty token
// sequences fall back to the reserved empty token so mean pooling never
// divides by zero; zero pre-normalization vectors map to a fixed basis vector.
EmbeddingBatch encode_batch(const EncoderParams& params, const std::vector<const Study*>& studies,
                            Framing framing, ForwardCache* cache = nullptr);

// Text tower on its own (prompt encoding).
Eigen::VectorXd encode_text(const EncoderParams& params, const TokenSeq& tokens);

// Exact analytic gradients for all encoder parameters given upstream
// gradients w.r.t. the unit-norm embedding rows. log_temperature's gradient
// is owned by the objective and left at zero here.
EncoderParams encode_backward(const EncoderParams& params, const ForwardCache& cache,
                              const Eigen::MatrixXd& d_image_emb,
                              const Eigen::MatrixXd& d_text_emb);

}  // namespace contrastlab
