#include "contrastlab/model.hpp"

#include <cmath>
#include <stdexcept>

#include "contrastlab/rng.hpp"

namespace contrastlab {

namespace {

constexpr double kInitialTemperature = 0.07;
constexpr double kNormEpsilon = 1e-300;  // below this a pre-norm vector counts as zero

void fill_scaled_uniform(Eigen::Ref<Eigen::MatrixXd> m, int fan_in, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      m(r, c) = scale * (2.0 * rng.next_unit() - 1.0);
}

// Unit-normalizes `v` in place; a zero vector maps to the first basis vector.
// Returns the pre-normalization norm (0 marks the fallback).
double normalize_row(Eigen::Ref<Eigen::RowVectorXd> v) {
  const double norm = v.norm();
  if (norm < kNormEpsilon) {
    v.setZero();
    v(0) = 1.0;
    return 0.0;
  }
  v /= norm;
  return norm;
}

}  // namespace

void ModelDims::validate() const {
  for (int value : {d_img, vocab_size, d_txt, vision_hidden, text_hidden, vision_feat,
                    text_feat, embed_dim}) {
    if (value < 1) throw std::invalid_argument("model dimensions must be positive");
  }
}

double EncoderParams::temperature() const { return std::exp(log_temperature); }

Eigen::Index EncoderParams::parameter_count() const {
  Eigen::Index total = 0;
  for_each_tensor([&](const char*, const double*, Eigen::Index size) { total += size; });
  return total;
}

EncoderParams init_params(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  EncoderParams p;
  p.dims = dims;
  p.vision_w1.resize(dims.vision_hidden, dims.d_img);
  p.vision_b1 = Eigen::VectorXd::Zero(dims.vision_hidden);
  p.vision_w2.resize(dims.vision_feat, dims.vision_hidden);
  p.vision_b2 = Eigen::VectorXd::Zero(dims.vision_feat);
  p.vision_proj.resize(dims.embed_dim, dims.vision_feat);
  p.token_embedding.resize(dims.vocab_size, dims.d_txt);
  p.text_w1.resize(dims.text_hidden, dims.d_txt);
  p.text_b1 = Eigen::VectorXd::Zero(dims.text_hidden);
  p.text_w2.resize(dims.text_feat, dims.text_hidden);
  p.text_b2 = Eigen::VectorXd::Zero(dims.text_feat);
  p.text_proj.resize(dims.embed_dim, dims.text_feat);

  Rng root(seed);
  Rng vision_rng = root.stream(1);
  Rng text_rng = root.stream(2);
  fill_scaled_uniform(p.vision_w1, dims.d_img, vision_rng);
  fill_scaled_uniform(p.vision_w2, dims.vision_hidden, vision_rng);
  fill_scaled_uniform(p.vision_proj, dims.vision_feat, vision_rng);
  fill_scaled_uniform(p.token_embedding, dims.d_txt, text_rng);
  fill_scaled_uniform(p.text_w1, dims.d_txt, text_rng);
  fill_scaled_uniform(p.text_w2, dims.text_hidden, text_rng);
  fill_scaled_uniform(p.text_proj, dims.text_feat, text_rng);
  p.log_temperature = std::log(kInitialTemperature);
  return p;
}

EncoderParams zeros_like(const EncoderParams& params) {
  EncoderParams z = params;
  z.for_each_tensor([](const char*, double* data, Eigen::Index size) {
    for (Eigen::Index i = 0; i < size; ++i) data[i] = 0.0;
  });
  return z;
}

namespace {

struct TextRowResult {
  TokenSeq tokens;
  Eigen::VectorXd mean;
  Eigen::VectorXd h1;
  Eigen::VectorXd feat;
  Eigen::RowVectorXd emb;
  double norm = 0.0;
};

TextRowResult text_forward(const EncoderParams& p, const TokenSeq& raw_tokens) {
  TextRowResult row;
  row.tokens = raw_tokens.empty() ? TokenSeq{kEmptyToken} : raw_tokens;
  for (int token : row.tokens) {
    if (token < 0 || token >= p.dims.vocab_size)
      throw std::out_of_range("token id out of vocabulary range: " + std::to_string(token));
  }
  row.mean = Eigen::VectorXd::Zero(p.dims.d_txt);
  for (int token : row.tokens) row.mean += p.token_embedding.row(token).transpose();
  row.mean /= static_cast<double>(row.tokens.size());
  row.h1 = (p.text_w1 * row.mean + p.text_b1).array().tanh();
  row.feat = p.text_w2 * row.h1 + p.text_b2;
  row.emb = (p.text_proj * row.feat).transpose();
  row.norm = normalize_row(row.emb);
  return row;
}

}  // namespace

EmbeddingBatch encode_batch(const EncoderParams& params, const std::vector<const Study*>& studies,
                            Framing framing, ForwardCache* cache) {
  const auto n = static_cast<Eigen::Index>(studies.size());
  if (n == 0) throw std::invalid_argument("encode_batch: empty batch");
  const ModelDims& dims = params.dims;

  EmbeddingBatch batch;
  batch.framing = framing;
  batch.image_emb.resize(n, dims.embed_dim);
  batch.text_emb.resize(n, dims.embed_dim);
  batch.study_ids.reserve(studies.size());

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.vision_input.resize(n, dims.d_img);
  c.vision_h1.resize(n, dims.vision_hidden);
  c.vision_feat.resize(n, dims.vision_feat);
  c.vision_norm.resize(n);
  c.vision_fallback.assign(static_cast<std::size_t>(n), false);
  c.tokens.resize(static_cast<std::size_t>(n));
  c.text_mean.resize(n, dims.d_txt);
  c.text_h1.resize(n, dims.text_hidden);
  c.text_feat.resize(n, dims.text_feat);
  c.text_norm.resize(n);
  c.text_fallback.assign(static_cast<std::size_t>(n), false);

  for (Eigen::Index i = 0; i < n; ++i) {
    const Study& study = *studies[static_cast<std::size_t>(i)];
    batch.study_ids.push_back(study.study_id);
    if (study.image_features.size() != dims.d_img)
      throw std::invalid_argument("study " + std::to_string(study.study_id) +
                                  " image feature dimension does not match the model");

    c.vision_input.row(i) = study.image_features.transpose();
    const Eigen::VectorXd h1 =
        (params.vision_w1 * study.image_features + params.vision_b1).array().tanh();
    const Eigen::VectorXd feat = params.vision_w2 * h1 + params.vision_b2;
    Eigen::RowVectorXd emb = (params.vision_proj * feat).transpose();
    const double norm = normalize_row(emb);
    c.vision_h1.row(i) = h1.transpose();
    c.vision_feat.row(i) = feat.transpose();
    c.vision_norm(i) = norm;
    c.vision_fallback[static_cast<std::size_t>(i)] = norm == 0.0;
    batch.image_emb.row(i) = emb;

    const TokenSeq& text = framing.kind == Framing::Kind::kFullReport
                               ? study.full_report
                               : study.sections[static_cast<std::size_t>(framing.section_index)].text;
    TextRowResult row = text_forward(params, text);
    c.tokens[static_cast<std::size_t>(i)] = std::move(row.tokens);
    c.text_mean.row(i) = row.mean.transpose();
    c.text_h1.row(i) = row.h1.transpose();
    c.text_feat.row(i) = row.feat.transpose();
    c.text_norm(i) = row.norm;
    c.text_fallback[static_cast<std::size_t>(i)] = row.norm == 0.0;
    batch.text_emb.row(i) = row.emb;
  }

  c.image_emb = batch.image_emb;
  c.text_emb = batch.text_emb;
  return batch;
}

Eigen::VectorXd encode_text(const EncoderParams& params, const TokenSeq& tokens) {
  return text_forward(params, tokens).emb.transpose();
}

EncoderParams encode_backward(const EncoderParams& params, const ForwardCache& cache,
                              const Eigen::MatrixXd& d_image_emb,
                              const Eigen::MatrixXd& d_text_emb) {
  const Eigen::Index n = cache.vision_input.rows();
  if (d_image_emb.rows() != n || d_text_emb.rows() != n ||
      d_image_emb.cols() != params.dims.embed_dim || d_text_emb.cols() != params.dims.embed_dim)
    throw std::invalid_argument("encode_backward: gradient shapes do not match the cache");

  EncoderParams grads = zeros_like(params);
  grads.log_temperature = 0.0;

  for (Eigen::Index i = 0; i < n; ++i) {
    // Vision tower.
    if (!cache.vision_fallback[static_cast<std::size_t>(i)]) {
      const Eigen::RowVectorXd e = cache.image_emb.row(i);
      const Eigen::RowVectorXd up = d_image_emb.row(i);
      // Normalization Jacobian: (I - e e^T) / r.
      const Eigen::VectorXd d_prenorm =
          ((up - e * (e.dot(up))) / cache.vision_norm(i)).transpose();
      const Eigen::VectorXd feat = cache.vision_feat.row(i).transpose();
      grads.vision_proj.noalias() += d_prenorm * feat.transpose();
      const Eigen::VectorXd d_feat = params.vision_proj.transpose() * d_prenorm;
      const Eigen::VectorXd h1 = cache.vision_h1.row(i).transpose();
      grads.vision_w2.noalias() += d_feat * h1.transpose();
      grads.vision_b2 += d_feat;
      const Eigen::VectorXd d_h1 = params.vision_w2.transpose() * d_feat;
      const Eigen::VectorXd d_pre = d_h1.array() * (1.0 - h1.array().square());
      grads.vision_w1.noalias() += d_pre * cache.vision_input.row(i);
      grads.vision_b1 += d_pre;
    }

    // Text tower.
    if (!cache.text_fallback[static_cast<std::size_t>(i)]) {
      const Eigen::RowVectorXd e = cache.text_emb.row(i);
      const Eigen::RowVectorXd up = d_text_emb.row(i);
      const Eigen::VectorXd d_prenorm =
          ((up - e * (e.dot(up))) / cache.text_norm(i)).transpose();
      const Eigen::VectorXd feat = cache.text_feat.row(i).transpose();
      grads.text_proj.noalias() += d_prenorm * feat.transpose();
      const Eigen::VectorXd d_feat = params.text_proj.transpose() * d_prenorm;
      const Eigen::VectorXd h1 = cache.text_h1.row(i).transpose();
      grads.text_w2.noalias() += d_feat * h1.transpose();
      grads.text_b2 += d_feat;
      const Eigen::VectorXd d_h1 = params.text_w2.transpose() * d_feat;
      const Eigen::VectorXd d_pre = d_h1.array() * (1.0 - h1.array().square());
      grads.text_w1.noalias() += d_pre * cache.text_mean.row(i);
      grads.text_b1 += d_pre;
      const Eigen::RowVectorXd d_mean =
          (params.text_w1.transpose() * d_pre).transpose() /
          static_cast<double>(cache.tokens[static_cast<std::size_t>(i)].size());
      for (int token : cache.tokens[static_cast<std::size_t>(i)])
        grads.token_embedding.row(token) += d_mean;
    }
  }

  return grads;
}

}  // namespace contrastlab
