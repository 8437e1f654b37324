#pragma once

// Training loop over batch plans: per-epoch metrics, validation-loss
// tracking under a fixed framing sequence, checkpointing with exact resume,
// best-checkpoint selection and overfit flagging.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "contrastlab/corpus.hpp"
#include "contrastlab/model.hpp"
#include "contrastlab/objective.hpp"
#include "contrastlab/sampler.hpp"

namespace contrastlab {

struct TrainConfig {
  int batch_size = 8;
  int max_epochs = 300;
  double peak_lr = 1e-5;
  double warmup_fraction = 0.10;
  double warmup_start_divisor = 25.0;
  double max_grad_norm = 1.0;
  SamplerKind sampler = SamplerKind::kShuffled;
  RatioSpec ratio{4, 4};  // balanced samplers only
  int eval_every = 1;     // checkpoint cadence, in epochs
  std::uint64_t seed = 1;
  std::optional<int> early_stop_patience;
  CaseLabelMode label_mode = CaseLabelMode::kAnyAbnormal;
  AdamWConfig optimizer;
  ModelDims dims;  // d_img / vocab_size must match the corpus
  double tau_min = 1e-3;
  double tau_max = 1.0;
  bool verbose_step_metrics = false;  // per-step loss lines in step_loss.csv

  void validate() const;
};

struct MetricRow {
  int epoch = 0;
  std::int64_t global_step = 0;
  double train_loss_mean = 0.0;
  double val_loss_mean = 0.0;
  double lr = 0.0;
  double pre_clip_grad_norm_mean = 0.0;
  double tau = 0.0;
};

struct CheckpointRecord {
  int epoch = 0;
  std::string path;
  double val_loss = 0.0;
  std::optional<double> zero_shot_macro_f1;  // filled by the zeroshot pass
  std::optional<std::string> zeroshot_csv;
};

enum class BestCriterion { kValLoss, kMacroF1 };

// argmin val_loss / argmax macro F1; ties go to the earliest epoch.
const CheckpointRecord& select_best_checkpoint(const std::vector<CheckpointRecord>& records,
                                               BestCriterion criterion);

struct OverfitFlag {
  bool flagged = false;
  int first_epoch = -1;
};

// Flags the first epoch at which validation loss has risen for `patience`
// consecutive evaluations while training loss fell over the same window.
OverfitFlag detect_overfitting(const std::vector<MetricRow>& metrics, int patience);

// Mean symmetric InfoNCE over seeded fixed validation batches; the same
// alternating framing sequence is used on every call so values are
// comparable across epochs.
double evaluate_validation_loss(const EncoderParams& params, const Corpus& corpus,
                                const std::vector<int>& val_ids, int batch_size,
                                std::uint64_t seed);

// In-memory trainer; run_training() wraps it with the run-directory layout.
class Trainer {
 public:
  Trainer(const Corpus& corpus, TrainConfig config, std::vector<int> train_ids,
          std::vector<int> val_ids);

  // One pass of the sampler's plan. Appends a MetricRow. Throws
  // std::runtime_error on a non-finite loss.
  const MetricRow& run_epoch();

  double validation_loss() const;

  const EncoderParams& params() const { return params_; }
  const std::vector<MetricRow>& metrics() const { return metrics_; }
  // (global_step, loss) pairs; populated only when verbose_step_metrics is on.
  const std::vector<std::pair<std::int64_t, double>>& step_losses() const {
    return step_losses_;
  }
  std::int64_t global_step() const { return global_step_; }
  int epoch() const { return epoch_; }
  int batches_per_epoch() const { return batches_per_epoch_; }
  std::int64_t total_steps() const;
  const TrainConfig& config() const { return config_; }

  void save_checkpoint(const std::string& path) const;
  // Restores params/optimizer/step so subsequent epochs are bit-identical
  // with an uninterrupted run.
  void load_checkpoint(const std::string& path);

 private:
  BatchPlan plan_for_epoch(int epoch) const;

  const Corpus& corpus_;
  TrainConfig config_;
  std::vector<int> train_ids_;
  std::vector<int> val_ids_;
  std::vector<StudyLabelView> label_view_;       // section-balanced sampler input
  std::vector<CaseLabeledId> case_labeled_ids_;  // case-balanced sampler input
  EncoderParams params_;
  OptimizerState opt_state_;
  std::int64_t global_step_ = 0;
  int epoch_ = 0;
  int batches_per_epoch_ = 0;
  std::uint64_t val_seed_ = 0;
  std::vector<MetricRow> metrics_;
  std::vector<std::pair<std::int64_t, double>> step_losses_;
};

struct RunResult {
  std::string run_dir;
  std::vector<MetricRow> metrics;
  std::vector<CheckpointRecord> checkpoints;
  bool early_stopped = false;
  int final_epoch = 0;
};

// Full training run into `run_dir`: metrics.csv (one row per epoch),
// checkpoints/epoch_%04d.json per eval_every (final epoch always), and a
// last-good checkpoint retained if a non-finite loss aborts the run.
RunResult run_training(const Corpus& corpus, const TrainConfig& config,
                       const std::vector<int>& train_ids, const std::vector<int>& val_ids,
                       const std::string& run_dir);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricRow& row);
void write_metrics_csv(const std::vector<MetricRow>& metrics, const std::string& path);

}  // namespace contrastlab
