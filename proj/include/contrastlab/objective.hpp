#pragma once

// Symmetric InfoNCE with analytic gradients, the warmup+cosine learning-rate
// schedule, AdamW with decoupled weight decay, and global-norm gradient
// clipping.

#include <cstdint>

#include <Eigen/Core>

#include "contrastlab/model.hpp"

namespace contrastlab {

struct SimilarityMatrix {
  Eigen::MatrixXd s;  // s(i, j) = cosine of image i and text j (raw, unscaled)
  double tau = 0.07;  // carried alongside; scaling happens inside the loss
};

SimilarityMatrix similarity_matrix(const EmbeddingBatch& batch, double tau);

struct LossReport {
  double total = 0.0;  // (i2t + t2i) / 2
  double i2t = 0.0;
  double t2i = 0.0;
  int batch_size = 0;
};

// Mean of the image-to-text and text-to-image softmax cross-entropies over
// s / tau; log-sum-exp runs with max subtraction so small temperatures
// cannot overflow.
LossReport infonce_loss(const SimilarityMatrix& sim);

struct InfonceGrads {
  Eigen::MatrixXd d_image_emb;  // N x embed_dim
  Eigen::MatrixXd d_text_emb;
  double d_log_temperature = 0.0;
};

InfonceGrads infonce_backward(const SimilarityMatrix& sim, const EmbeddingBatch& batch);

struct ScheduleSpec {
  double peak_lr = 1e-5;
  std::int64_t total_steps = 0;
  double warmup_fraction = 0.10;
  double warmup_start_divisor = 25.0;

  std::int64_t warmup_steps() const;  // ceil(warmup_fraction * total_steps)
  void validate() const;
};

// Linear ramp from peak/divisor to peak over the warmup, then cosine decay
// to zero at total_steps.
double lr_at_step(const ScheduleSpec& spec, std::int64_t step);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  EncoderParams first_moment;
  EncoderParams second_moment;
  std::int64_t step = 0;
  AdamWConfig config;
};

OptimizerState make_optimizer_state(const EncoderParams& params, AdamWConfig config = {});

// Bias-corrected decoupled-weight-decay update. Weight decay never touches
// log_temperature. Throws on non-finite gradients (the step is rejected and
// params/state stay untouched).
void adamw_step(EncoderParams& params, const EncoderParams& grads, OptimizerState& state,
                double lr);

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the pre-clip norm.
double clip_gradients(EncoderParams& grads, double max_norm = 1.0);

}  // namespace contrastlab
