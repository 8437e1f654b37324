#include <doctest.h>

#include <cmath>
#include <vector>

#include "contrastlab/objective.hpp"
#include "contrastlab/rng.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace contrastlab;
using namespace contrastlab::testing;

namespace {

// Direct evaluation of the loss formula: exp/sum with no stabilization.
// Independent oracle for infonce_loss.
double naive_infonce(const Eigen::MatrixXd& s, double tau) {
  const Eigen::Index n = s.rows();
  double i2t = 0.0;
  double t2i = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double row_denom = 0.0;
    double col_denom = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      row_denom += std::exp(s(i, j) / tau);
      col_denom += std::exp(s(j, i) / tau);
    }
    i2t += -std::log(std::exp(s(i, i) / tau) / row_denom);
    t2i += -std::log(std::exp(s(i, i) / tau) / col_denom);
  }
  return 0.5 * (i2t + t2i) / static_cast<double>(n);
}

SimilarityMatrix random_similarity(int n, double tau, std::uint64_t seed) {
  Rng rng(seed);
  SimilarityMatrix sim;
  sim.s.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) sim.s(i, j) = 2.0 * rng.next_unit() - 1.0;
  sim.tau = tau;
  return sim;
}

}  // namespace

TEST_CASE("similarity matrix equals pairwise dot products") {
  const EmbeddingBatch batch = random_embedding_batch(5, 16, 42);
  const SimilarityMatrix sim = similarity_matrix(batch, 0.07);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      double dot = 0.0;
      for (int d = 0; d < 16; ++d) dot += batch.image_emb(i, d) * batch.text_emb(j, d);
      CHECK(sim.s(i, j) == doctest::Approx(dot).epsilon(1e-12));
      CHECK(std::abs(sim.s(i, j)) <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("similarity of identical matrices has unit diagonal") {
  EmbeddingBatch batch = random_embedding_batch(4, 16, 1);
  batch.text_emb = batch.image_emb;
  const SimilarityMatrix sim = similarity_matrix(batch, 0.07);
  for (int i = 0; i < 4; ++i) CHECK(sim.s(i, i) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("similarity of orthogonal rows is zero off the diagonal") {
  EmbeddingBatch batch;
  batch.framing = Framing::full_report();
  batch.image_emb = Eigen::MatrixXd::Identity(4, 8);
  batch.text_emb = Eigen::MatrixXd::Identity(4, 8);
  const SimilarityMatrix sim = similarity_matrix(batch, 0.07);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(sim.s(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("infonce loss: single pair is exactly zero") {
  SimilarityMatrix sim;
  sim.s = Eigen::MatrixXd::Constant(1, 1, 0.37);
  sim.tau = 0.07;
  const LossReport report = infonce_loss(sim);
  CHECK(report.total == 0.0);
  CHECK(report.i2t == 0.0);
  CHECK(report.t2i == 0.0);
}

TEST_CASE("infonce loss: all-equal similarities give ln N") {
  SimilarityMatrix sim;
  sim.s = Eigen::MatrixXd::Constant(8, 8, 0.5);
  sim.tau = 0.07;
  const LossReport report = infonce_loss(sim);
  CHECK(std::abs(report.total - std::log(8.0)) < 1e-12);
}

TEST_CASE("infonce loss matches the naive formula on random batches") {
  Rng seeds(99);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(seeds.next_below(7));
    const double tau = 0.03 + 0.5 * seeds.next_unit();
    const SimilarityMatrix sim = random_similarity(n, tau, seeds.next_u64());
    const LossReport report = infonce_loss(sim);
    CHECK(std::abs(report.total - naive_infonce(sim.s, tau)) < 1e-10);
    CHECK(std::abs(report.total - 0.5 * (report.i2t + report.t2i)) < 1e-12);
    CHECK(report.total >= 0.0);
  }
}

TEST_CASE("infonce loss is symmetric under transposition") {
  const SimilarityMatrix sim = random_similarity(6, 0.07, 7);
  SimilarityMatrix transposed;
  transposed.s = sim.s.transpose();
  transposed.tau = sim.tau;
  const LossReport a = infonce_loss(sim);
  const LossReport b = infonce_loss(transposed);
  CHECK(std::abs(a.total - b.total) < 1e-12);
  CHECK(std::abs(a.i2t - b.t2i) < 1e-12);
}

TEST_CASE("infonce loss is invariant to constant shifts") {
  const SimilarityMatrix sim = random_similarity(5, 0.07, 11);
  SimilarityMatrix shifted = sim;
  shifted.s.array() += 0.4;
  CHECK(std::abs(infonce_loss(sim).total - infonce_loss(shifted).total) < 1e-10);
}

TEST_CASE("infonce loss rejects non-finite input") {
  SimilarityMatrix sim = random_similarity(3, 0.07, 3);
  sim.s(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(infonce_loss(sim));
}

TEST_CASE("infonce gradient: finite differences over embeddings and log tau") {
  const EmbeddingBatch batch = random_embedding_batch(4, 12, 5);
  const double log_tau = std::log(0.07);

  const SimilarityMatrix sim = similarity_matrix(batch, std::exp(log_tau));
  const InfonceGrads grads = infonce_backward(sim, batch);

  const double h = 1e-5;
  auto loss_at = [&](const EmbeddingBatch& b, double lt) {
    return infonce_loss(similarity_matrix(b, std::exp(lt))).total;
  };

  double max_rel = 0.0;
  EmbeddingBatch probe = batch;
  for (int side = 0; side < 2; ++side) {
    Eigen::MatrixXd& matrix = side == 0 ? probe.image_emb : probe.text_emb;
    const Eigen::MatrixXd& analytic = side == 0 ? grads.d_image_emb : grads.d_text_emb;
    for (int i = 0; i < matrix.rows(); ++i) {
      for (int j = 0; j < matrix.cols(); ++j) {
        const double saved = matrix(i, j);
        matrix(i, j) = saved + h;
        const double plus = loss_at(probe, log_tau);
        matrix(i, j) = saved - h;
        const double minus = loss_at(probe, log_tau);
        matrix(i, j) = saved;
        max_rel = std::max(max_rel, relative_error(analytic(i, j), (plus - minus) / (2 * h)));
      }
    }
  }
  const double plus = loss_at(batch, log_tau + h);
  const double minus = loss_at(batch, log_tau - h);
  max_rel = std::max(max_rel,
                     relative_error(grads.d_log_temperature, (plus - minus) / (2 * h)));
  CHECK(max_rel < 1e-5);
}

TEST_CASE("infonce gradient: diagonal entries pull positives up") {
  SimilarityMatrix sim;
  sim.s = Eigen::MatrixXd::Constant(4, 4, 0.2);
  sim.tau = 0.07;
  EmbeddingBatch batch = random_embedding_batch(4, 8, 21);
  const InfonceGrads grads = infonce_backward(sim, batch);
  // Reconstruct dL/ds via the row/column softmax definition to probe signs.
  Eigen::MatrixXd d_s = Eigen::MatrixXd::Constant(4, 4, 2.0 / 4.0);
  d_s.diagonal().array() -= 2.0;
  d_s /= 2.0 * 4.0 * sim.tau;
  for (int i = 0; i < 4; ++i) CHECK(d_s(i, i) < 0.0);
}

TEST_CASE("infonce gradient sums to zero over the matrix") {
  const EmbeddingBatch batch = random_embedding_batch(5, 12, 17);
  const SimilarityMatrix sim = similarity_matrix(batch, 0.07);
  // (P_row - I) rows and (P_col - I) columns each sum to zero, so the total
  // gradient w.r.t. s sums to zero.
  const InfonceGrads grads = infonce_backward(sim, batch);
  (void)grads;
  Eigen::MatrixXd row_probs(5, 5);
  Eigen::MatrixXd col_probs(5, 5);
  for (int i = 0; i < 5; ++i) {
    row_probs.row(i) = (sim.s.row(i) / sim.tau).array().exp();
    row_probs.row(i) /= row_probs.row(i).sum();
    col_probs.col(i) = (sim.s.col(i) / sim.tau).array().exp();
    col_probs.col(i) /= col_probs.col(i).sum();
  }
  Eigen::MatrixXd d_s = row_probs + col_probs;
  d_s.diagonal().array() -= 2.0;
  d_s /= 2.0 * 5.0 * sim.tau;
  CHECK(std::abs(d_s.sum()) < 1e-12);
}

TEST_CASE("infonce gradient: single pair gives zero gradients") {
  EmbeddingBatch batch = random_embedding_batch(1, 8, 2);
  const SimilarityMatrix sim = similarity_matrix(batch, 0.07);
  const InfonceGrads grads = infonce_backward(sim, batch);
  CHECK(grads.d_image_emb.cwiseAbs().maxCoeff() < 1e-15);
  CHECK(grads.d_text_emb.cwiseAbs().maxCoeff() < 1e-15);
  CHECK(std::abs(grads.d_log_temperature) < 1e-15);
}

TEST_CASE("learning rate schedule hits its anchor values") {
  ScheduleSpec spec;
  spec.peak_lr = 1e-5;
  spec.total_steps = 1000;
  CHECK(std::abs(lr_at_step(spec, 0) - 4e-7) < 1e-18);
  const auto warmup = spec.warmup_steps();
  CHECK(warmup == 100);
  CHECK(std::abs(lr_at_step(spec, warmup) - 1e-5) < 1e-18);
  CHECK(std::abs(lr_at_step(spec, spec.total_steps)) < 1e-18);

  // Continuity at the warmup/cosine boundary.
  const double start = spec.peak_lr / spec.warmup_start_divisor;
  const double warmup_formula_at_boundary =
      start + (spec.peak_lr - start) * static_cast<double>(warmup) / static_cast<double>(warmup);
  CHECK(std::abs(warmup_formula_at_boundary - lr_at_step(spec, warmup)) < 1e-12);

  // Cosine midpoint halves the peak.
  const auto midpoint = warmup + (spec.total_steps - warmup) / 2;
  CHECK(std::abs(lr_at_step(spec, midpoint) - 5e-6) < 1e-18);
}

TEST_CASE("learning rate schedule is nonnegative and in range everywhere") {
  ScheduleSpec spec;
  spec.peak_lr = 3e-4;
  spec.total_steps = 137;
  for (std::int64_t step = 0; step <= spec.total_steps; ++step) {
    const double lr = lr_at_step(spec, step);
    CHECK(lr >= 0.0);
    CHECK(lr <= spec.peak_lr * (1.0 + 1e-12));
  }
  CHECK_THROWS(lr_at_step(spec, -1));
  CHECK_THROWS(lr_at_step(spec, spec.total_steps + 1));
}

TEST_CASE("adamw: zero gradient and zero decay leave parameters unchanged") {
  EncoderParams params = init_params(tiny_dims(), 3);
  const EncoderParams before = params;
  AdamWConfig config;
  config.weight_decay = 0.0;
  OptimizerState state = make_optimizer_state(params, config);
  adamw_step(params, zeros_like(params), state, 0.1);
  CHECK(params_allclose(params, before));
}

TEST_CASE("adamw: first step on a unit scalar gradient moves by roughly lr") {
  // Hand-evaluated Adam recurrence at t=1: m_hat = g, v_hat = g^2, so the
  // update is lr * g / (|g| + eps) = lr for g = 1.
  EncoderParams params = init_params(tiny_dims(), 3);
  params.log_temperature = 1.0;
  EncoderParams grads = zeros_like(params);
  grads.log_temperature = 1.0;
  AdamWConfig config;
  config.weight_decay = 0.0;
  OptimizerState state = make_optimizer_state(params, config);
  adamw_step(params, grads, state, 0.1);
  CHECK(params.log_temperature == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw: decoupled weight decay scales parameters") {
  EncoderParams params = init_params(tiny_dims(), 3);
  const double w_before = params.vision_w1(0, 0);
  AdamWConfig config;
  config.weight_decay = 0.01;
  OptimizerState state = make_optimizer_state(params, config);
  adamw_step(params, zeros_like(params), state, 0.1);
  CHECK(params.vision_w1(0, 0) == doctest::Approx(w_before * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
  // log_temperature is excluded from decay.
  CHECK(params.log_temperature == std::log(0.07));
}

TEST_CASE("adamw rejects non-finite gradients and leaves state untouched") {
  EncoderParams params = init_params(tiny_dims(), 3);
  const double before = params.vision_w1(0, 0);
  EncoderParams grads = zeros_like(params);
  grads.vision_w1(0, 0) = std::numeric_limits<double>::infinity();
  OptimizerState state = make_optimizer_state(params, {});
  CHECK_THROWS_AS(adamw_step(params, grads, state, 0.1), std::runtime_error);
  CHECK(params.vision_w1(0, 0) == before);
  CHECK(state.step == 0);
}

TEST_CASE("adamw with zero weight decay matches a reference Adam") {
  // Reference Adam on the log_temperature scalar, 100 random steps.
  EncoderParams params = init_params(tiny_dims(), 5);
  AdamWConfig config;
  config.weight_decay = 0.0;
  OptimizerState state = make_optimizer_state(params, config);

  double reference = params.log_temperature;
  double m = 0.0;
  double v = 0.0;
  Rng rng(8);
  for (int t = 1; t <= 100; ++t) {
    const double g = rng.next_gaussian();
    EncoderParams grads = zeros_like(params);
    grads.log_temperature = g;
    adamw_step(params, grads, state, 1e-3);

    m = config.beta1 * m + (1 - config.beta1) * g;
    v = config.beta2 * v + (1 - config.beta2) * g * g;
    const double m_hat = m / (1 - std::pow(config.beta1, t));
    const double v_hat = v / (1 - std::pow(config.beta2, t));
    reference -= 1e-3 * m_hat / (std::sqrt(v_hat) + config.epsilon);
    CHECK(std::abs(params.log_temperature - reference) < 1e-12);
  }
}

TEST_CASE("gradient clipping") {
  EncoderParams grads = zeros_like(init_params(tiny_dims(), 1));

  SUBCASE("norm below the limit is untouched") {
    grads.log_temperature = 0.5;
    const double norm = clip_gradients(grads, 1.0);
    CHECK(norm == doctest::Approx(0.5));
    CHECK(grads.log_temperature == 0.5);
  }

  SUBCASE("norm above the limit is scaled to exactly the limit") {
    grads.log_temperature = 4.0;
    const double norm = clip_gradients(grads, 1.0);
    CHECK(norm == doctest::Approx(4.0));
    double squared = 0.0;
    grads.for_each_tensor([&](const char*, const double* g, Eigen::Index size) {
      for (Eigen::Index i = 0; i < size; ++i) squared += g[i] * g[i];
    });
    CHECK(std::abs(std::sqrt(squared) - 1.0) < 1e-12);
  }

  SUBCASE("3-4-5 vector clips to 0.6, 0.8") {
    grads.vision_b1(0) = 3.0;
    grads.vision_b1(1) = 4.0;
    clip_gradients(grads, 1.0);
    CHECK(grads.vision_b1(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(grads.vision_b1(1) == doctest::Approx(0.8).epsilon(1e-12));
  }
}
