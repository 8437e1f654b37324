#include "contrastlab/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace contrastlab {

SimilarityMatrix similarity_matrix(const EmbeddingBatch& batch, double tau) {
  if (batch.image_emb.rows() == 0) throw std::invalid_argument("similarity_matrix: empty batch");
  if (tau <= 0.0) throw std::invalid_argument("similarity_matrix: tau must be positive");
  SimilarityMatrix sim;
  sim.s.noalias() = batch.image_emb * batch.text_emb.transpose();
  sim.tau = tau;
  return sim;
}

namespace {

// Row-wise softmax of s / tau with max subtraction; also accumulates the
// log-softmax diagonal terms. Operating on the transpose covers columns.
void softmax_rows(const Eigen::MatrixXd& s, double tau, Eigen::MatrixXd& probs,
                  double& neg_log_diag_sum) {
  const Eigen::Index n = s.rows();
  probs.resize(n, n);
  neg_log_diag_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double row_max = s.row(i).maxCoeff() / tau;
    double denom = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double z = std::exp(s(i, j) / tau - row_max);
      probs(i, j) = z;
      denom += z;
    }
    probs.row(i) /= denom;
    neg_log_diag_sum -= s(i, i) / tau - row_max - std::log(denom);
  }
}

}  // namespace

LossReport infonce_loss(const SimilarityMatrix& sim) {
  const Eigen::Index n = sim.s.rows();
  if (n == 0 || sim.s.cols() != n)
    throw std::invalid_argument("infonce_loss: similarity matrix must be square and non-empty");
  if (!(sim.tau > 0.0)) throw std::invalid_argument("infonce_loss: tau must be positive");
  if (!sim.s.allFinite()) throw std::invalid_argument("infonce_loss: non-finite similarity");

  Eigen::MatrixXd probs;
  double i2t_sum = 0.0;
  double t2i_sum = 0.0;
  softmax_rows(sim.s, sim.tau, probs, i2t_sum);
  const Eigen::MatrixXd st = sim.s.transpose();
  softmax_rows(st, sim.tau, probs, t2i_sum);

  LossReport report;
  report.batch_size = static_cast<int>(n);
  report.i2t = i2t_sum / static_cast<double>(n);
  report.t2i = t2i_sum / static_cast<double>(n);
  report.total = 0.5 * (report.i2t + report.t2i);
  return report;
}

InfonceGrads infonce_backward(const SimilarityMatrix& sim, const EmbeddingBatch& batch) {
  const Eigen::Index n = sim.s.rows();
  if (sim.s.cols() != n) throw std::invalid_argument("infonce_backward: matrix not square");
  if (batch.image_emb.rows() != n || batch.text_emb.rows() != n)
    throw std::invalid_argument("infonce_backward: batch does not match the similarity matrix");

  Eigen::MatrixXd row_probs;
  Eigen::MatrixXd col_probs_t;
  double unused = 0.0;
  softmax_rows(sim.s, sim.tau, row_probs, unused);
  softmax_rows(sim.s.transpose(), sim.tau, col_probs_t, unused);

  // dL/ds = ((P_row - I) + (P_col - I)) / (2 N tau).
  Eigen::MatrixXd d_s = row_probs + col_probs_t.transpose();
  d_s.diagonal().array() -= 2.0;
  d_s /= 2.0 * static_cast<double>(n) * sim.tau;

  InfonceGrads grads;
  grads.d_image_emb.noalias() = d_s * batch.text_emb;
  grads.d_text_emb.noalias() = d_s.transpose() * batch.image_emb;
  grads.d_log_temperature = -(d_s.array() * sim.s.array()).sum();
  return grads;
}

std::int64_t ScheduleSpec::warmup_steps() const {
  return static_cast<std::int64_t>(
      std::ceil(warmup_fraction * static_cast<double>(total_steps)));
}

void ScheduleSpec::validate() const {
  if (peak_lr <= 0.0) throw std::invalid_argument("peak_lr must be positive");
  if (total_steps < 1) throw std::invalid_argument("total_steps must be positive");
  if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
    throw std::invalid_argument("warmup_fraction must lie in (0, 1)");
  if (warmup_start_divisor <= 0.0)
    throw std::invalid_argument("warmup_start_divisor must be positive");
}

double lr_at_step(const ScheduleSpec& spec, std::int64_t step) {
  spec.validate();
  if (step < 0 || step > spec.total_steps)
    throw std::out_of_range("lr_at_step: step " + std::to_string(step) +
                            " outside [0, " + std::to_string(spec.total_steps) + "]");
  if (step == spec.total_steps) return 0.0;
  const std::int64_t warmup = spec.warmup_steps();
  const double start = spec.peak_lr / spec.warmup_start_divisor;
  if (step < warmup) {
    return start + (spec.peak_lr - start) * static_cast<double>(step) /
                       static_cast<double>(warmup);
  }
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(spec.total_steps - warmup);
  return 0.5 * spec.peak_lr * (1.0 + std::cos(M_PI * progress));
}

OptimizerState make_optimizer_state(const EncoderParams& params, AdamWConfig config) {
  OptimizerState state;
  state.first_moment = zeros_like(params);
  state.second_moment = zeros_like(params);
  state.step = 0;
  state.config = config;
  return state;
}

void adamw_step(EncoderParams& params, const EncoderParams& grads, OptimizerState& state,
                double lr) {
  bool finite = true;
  grads.for_each_tensor([&](const char*, const double* g, Eigen::Index size) {
    for (Eigen::Index i = 0; i < size; ++i)
      if (!std::isfinite(g[i])) finite = false;
  });
  if (!finite)
    throw std::runtime_error("adamw_step: non-finite gradient, step rejected");

  const AdamWConfig& c = state.config;
  const std::int64_t t = state.step + 1;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));

  struct Tensors {
    double* p;
    const double* g;
    double* m;
    double* v;
    Eigen::Index size;
    bool decay;
  };
  std::vector<Tensors> tensors;
  params.for_each_tensor([&](const char* name, double* p, Eigen::Index size) {
    tensors.push_back({p, nullptr, nullptr, nullptr, size,
                       std::string_view(name) != "log_temperature"});
  });
  std::size_t k = 0;
  grads.for_each_tensor([&](const char*, const double* g, Eigen::Index) {
    tensors[k++].g = g;
  });
  k = 0;
  state.first_moment.for_each_tensor([&](const char*, double* m, Eigen::Index) {
    tensors[k++].m = m;
  });
  k = 0;
  state.second_moment.for_each_tensor([&](const char*, double* v, Eigen::Index) {
    tensors[k++].v = v;
  });

  for (const auto& tensor : tensors) {
    for (Eigen::Index i = 0; i < tensor.size; ++i) {
      const double g = tensor.g[i];
      tensor.m[i] = c.beta1 * tensor.m[i] + (1.0 - c.beta1) * g;
      tensor.v[i] = c.beta2 * tensor.v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = tensor.m[i] / bias1;
      const double v_hat = tensor.v[i] / bias2;
      double update = m_hat / (std::sqrt(v_hat) + c.epsilon);
      if (tensor.decay) update += c.weight_decay * tensor.p[i];
      tensor.p[i] -= lr * update;
    }
  }
  state.step = t;
}

double clip_gradients(EncoderParams& grads, double max_norm) {
  double squared = 0.0;
  grads.for_each_tensor([&](const char*, const double* g, Eigen::Index size) {
    for (Eigen::Index i = 0; i < size; ++i) squared += g[i] * g[i];
  });
  const double norm = std::sqrt(squared);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    grads.for_each_tensor([&](const char*, double* g, Eigen::Index size) {
      for (Eigen::Index i = 0; i < size; ++i) g[i] *= scale;
    });
  }
  return norm;
}

}  // namespace contrastlab
