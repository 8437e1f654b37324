#include "contrastlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "contrastlab/checkpoint.hpp"
#include "contrastlab/io.hpp"
#include "contrastlab/rng.hpp"

namespace contrastlab {

namespace {

// Fixed tag mixed into config.seed for the validation batching, so every
// evaluation in a run sees the same batches and framings.
constexpr std::uint64_t kValidationStreamTag = 0x76616c;

std::string config_fingerprint(const TrainConfig& c) {
  std::ostringstream out;
  out << c.batch_size << '|' << c.max_epochs << '|' << format_double(c.peak_lr, 17) << '|'
      << format_double(c.warmup_fraction, 17) << '|' << c.warmup_start_divisor << '|'
      << to_string(c.sampler) << '|' << c.ratio.normal_per_batch << ':'
      << c.ratio.abnormal_per_batch << '|' << c.eval_every << '|' << c.seed << '|'
      << to_string(c.label_mode) << '|' << format_double(c.optimizer.weight_decay, 17) << '|'
      << c.dims.d_img << 'x' << c.dims.vocab_size << 'x' << c.dims.d_txt << 'x'
      << c.dims.vision_hidden << 'x' << c.dims.text_hidden << 'x' << c.dims.vision_feat << 'x'
      << c.dims.text_feat << 'x' << c.dims.embed_dim;
  return fnv1a64_hex(out.str());
}

std::vector<const Study*> resolve_batch(const Corpus& corpus, const Batch& batch) {
  std::vector<const Study*> studies;
  studies.reserve(batch.study_ids.size());
  for (int id : batch.study_ids) studies.push_back(&corpus.study_by_id(id));
  return studies;
}

double clamp_log_tau(double log_tau, double tau_min, double tau_max) {
  return std::clamp(log_tau, std::log(tau_min), std::log(tau_max));
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2)
    throw std::invalid_argument(
        "batch_size must be at least 2: a single-pair batch has identically zero loss");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be positive");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be positive");
  if (peak_lr <= 0.0) throw std::invalid_argument("peak_lr must be positive");
  if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
    throw std::invalid_argument("warmup_fraction must lie in (0, 1)");
  if (max_grad_norm <= 0.0) throw std::invalid_argument("max_grad_norm must be positive");
  if (tau_min <= 0.0 || tau_max < tau_min)
    throw std::invalid_argument("temperature clamp range is invalid");
  if (sampler != SamplerKind::kShuffled && ratio.batch_size() != batch_size)
    throw std::invalid_argument("ratio does not add up to the batch size");
  if (early_stop_patience && *early_stop_patience < 1)
    throw std::invalid_argument("early_stop_patience must be positive when set");
  dims.validate();
}

const CheckpointRecord& select_best_checkpoint(const std::vector<CheckpointRecord>& records,
                                               BestCriterion criterion) {
  if (records.empty()) throw std::invalid_argument("select_best_checkpoint: no records");
  const CheckpointRecord* best = nullptr;
  for (const auto& record : records) {
    if (criterion == BestCriterion::kMacroF1 && !record.zero_shot_macro_f1)
      throw std::invalid_argument("select_best_checkpoint: record at epoch " +
                                  std::to_string(record.epoch) + " has no macro F1");
    if (!best) {
      best = &record;
      continue;
    }
    if (criterion == BestCriterion::kValLoss) {
      if (record.val_loss < best->val_loss) best = &record;
    } else {
      if (*record.zero_shot_macro_f1 > *best->zero_shot_macro_f1) best = &record;
    }
  }
  return *best;
}

OverfitFlag detect_overfitting(const std::vector<MetricRow>& metrics, int patience) {
  if (patience < 1) throw std::invalid_argument("detect_overfitting: patience must be positive");
  if (static_cast<int>(metrics.size()) < patience + 1) return {};
  for (std::size_t t = 1; t + static_cast<std::size_t>(patience) - 1 < metrics.size(); ++t) {
    bool sustained = true;
    for (std::size_t i = 0; i < static_cast<std::size_t>(patience); ++i) {
      const auto& prev = metrics[t + i - 1];
      const auto& cur = metrics[t + i];
      if (!(cur.val_loss_mean > prev.val_loss_mean &&
            cur.train_loss_mean < prev.train_loss_mean)) {
        sustained = false;
        break;
      }
    }
    if (sustained) return {true, metrics[t].epoch};
  }
  return {};
}

double evaluate_validation_loss(const EncoderParams& params, const Corpus& corpus,
                                const std::vector<int>& val_ids, int batch_size,
                                std::uint64_t seed) {
  if (val_ids.empty()) throw std::invalid_argument("evaluate_validation_loss: empty split");
  const int effective = std::min<int>(batch_size, static_cast<int>(val_ids.size()));
  const BatchPlan plan = shuffled_batches(val_ids, effective, seed, /*epoch=*/0,
                                          /*step_offset=*/0);
  if (plan.batches.empty())
    throw std::invalid_argument("evaluate_validation_loss: split smaller than one batch");
  double sum = 0.0;
  for (const auto& batch : plan.batches) {
    const auto studies = resolve_batch(corpus, batch);
    const EmbeddingBatch emb = encode_batch(params, studies, batch.framing);
    sum += infonce_loss(similarity_matrix(emb, params.temperature())).total;
  }
  return sum / static_cast<double>(plan.batches.size());
}

Trainer::Trainer(const Corpus& corpus, TrainConfig config, std::vector<int> train_ids,
                 std::vector<int> val_ids)
    : corpus_(corpus),
      config_(std::move(config)),
      train_ids_(std::move(train_ids)),
      val_ids_(std::move(val_ids)) {
  config_.validate();
  if (train_ids_.empty()) throw std::invalid_argument("trainer: empty training pool");
  if (val_ids_.empty()) throw std::invalid_argument("trainer: empty validation pool");
  if (!corpus_.studies.empty() &&
      corpus_.studies.front().image_features.size() != config_.dims.d_img)
    throw std::invalid_argument("trainer: model d_img does not match the corpus");
  if (corpus_.config.vocab_size > config_.dims.vocab_size)
    throw std::invalid_argument("trainer: model vocabulary smaller than the corpus vocabulary");

  switch (config_.sampler) {
    case SamplerKind::kSectionBalanced:
      label_view_ = make_label_view(corpus_, train_ids_);
      break;
    case SamplerKind::kCaseBalanced:
      for (int id : train_ids_) {
        const CaseLabel label = derive_case_label(corpus_.study_by_id(id), config_.label_mode);
        if (label == CaseLabel::kExcluded) continue;
        case_labeled_ids_.push_back({id, label == CaseLabel::kAbnormal});
      }
      break;
    default:
      break;
  }

  // Epoch geometry is fixed for the whole run so the step budget and the
  // framing parity are known up front.
  batches_per_epoch_ = static_cast<int>(plan_for_epoch(0).batches.size());
  if (batches_per_epoch_ == 0)
    throw std::invalid_argument("trainer: sampler produces no batches per epoch");

  params_ = init_params(config_.dims, config_.seed);
  opt_state_ = make_optimizer_state(params_, config_.optimizer);
  val_seed_ = Rng(config_.seed).stream(kValidationStreamTag).seed();
}

std::int64_t Trainer::total_steps() const {
  return static_cast<std::int64_t>(config_.max_epochs) * batches_per_epoch_;
}

BatchPlan Trainer::plan_for_epoch(int epoch) const {
  const std::int64_t offset = static_cast<std::int64_t>(epoch) * batches_per_epoch_;
  switch (config_.sampler) {
    case SamplerKind::kShuffled:
      return shuffled_batches(train_ids_, config_.batch_size, config_.seed, epoch, offset);
    case SamplerKind::kSectionBalanced:
      return section_balanced_batches(label_view_, config_.ratio, config_.batch_size,
                                      config_.seed, epoch, offset);
    default:
      return case_balanced_batches(case_labeled_ids_, config_.ratio, config_.batch_size,
                                   config_.seed, epoch, offset);
  }
}

const MetricRow& Trainer::run_epoch() {
  const BatchPlan plan = plan_for_epoch(epoch_);
  const ScheduleSpec schedule{config_.peak_lr, total_steps(), config_.warmup_fraction,
                              config_.warmup_start_divisor};

  double loss_sum = 0.0;
  double norm_sum = 0.0;
  double lr = 0.0;
  for (const auto& batch : plan.batches) {
    const auto studies = resolve_batch(corpus_, batch);
    ForwardCache cache;
    const EmbeddingBatch emb = encode_batch(params_, studies, batch.framing, &cache);
    const SimilarityMatrix sim = similarity_matrix(emb, params_.temperature());
    const LossReport loss = infonce_loss(sim);
    if (!std::isfinite(loss.total))
      throw std::runtime_error("non-finite training loss at step " +
                               std::to_string(global_step_));
    loss_sum += loss.total;
    if (config_.verbose_step_metrics) step_losses_.emplace_back(global_step_, loss.total);

    const InfonceGrads upstream = infonce_backward(sim, emb);
    EncoderParams grads = encode_backward(params_, cache, upstream.d_image_emb,
                                          upstream.d_text_emb);
    grads.log_temperature = upstream.d_log_temperature;

    norm_sum += clip_gradients(grads, config_.max_grad_norm);
    lr = lr_at_step(schedule, global_step_);
    adamw_step(params_, grads, opt_state_, lr);
    params_.log_temperature =
        clamp_log_tau(params_.log_temperature, config_.tau_min, config_.tau_max);
    ++global_step_;
  }

  MetricRow row;
  row.epoch = epoch_;
  row.global_step = global_step_;
  row.train_loss_mean = loss_sum / static_cast<double>(plan.batches.size());
  row.val_loss_mean = validation_loss();
  row.lr = lr;
  row.pre_clip_grad_norm_mean = norm_sum / static_cast<double>(plan.batches.size());
  row.tau = params_.temperature();
  metrics_.push_back(row);
  ++epoch_;
  return metrics_.back();
}

double Trainer::validation_loss() const {
  return evaluate_validation_loss(params_, corpus_, val_ids_, config_.batch_size, val_seed_);
}

void Trainer::save_checkpoint(const std::string& path) const {
  CheckpointState state;
  state.params = params_;
  state.optimizer = opt_state_;
  state.global_step = global_step_;
  state.epoch = epoch_;
  state.config_hash = config_fingerprint(config_);
  save_checkpoint_state(state, path);
}

void Trainer::load_checkpoint(const std::string& path) {
  CheckpointState state = load_checkpoint_state(path);
  if (state.config_hash != config_fingerprint(config_))
    throw std::runtime_error("checkpoint config hash does not match this run's config");
  params_ = std::move(state.params);
  opt_state_ = std::move(state.optimizer);
  global_step_ = state.global_step;
  epoch_ = state.epoch;
}

std::string metrics_csv_header() { return "epoch,global_step,train_loss,val_loss,lr,grad_norm,tau"; }

std::string metrics_csv_row(const MetricRow& row) {
  std::ostringstream out;
  out << row.epoch << ',' << row.global_step << ',' << format_double(row.train_loss_mean) << ','
      << format_double(row.val_loss_mean) << ',' << format_double(row.lr) << ','
      << format_double(row.pre_clip_grad_norm_mean) << ',' << format_double(row.tau);
  return out.str();
}

void write_metrics_csv(const std::vector<MetricRow>& metrics, const std::string& path) {
  std::ostringstream out;
  out << metrics_csv_header() << '\n';
  for (const auto& row : metrics) out << metrics_csv_row(row) << '\n';
  write_file(path, out.str());
}

RunResult run_training(const Corpus& corpus, const TrainConfig& config,
                       const std::vector<int>& train_ids, const std::vector<int>& val_ids,
                       const std::string& run_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  fs::create_directories(run_dir + "/checkpoints");

  Trainer trainer(corpus, config, train_ids, val_ids);

  RunResult result;
  result.run_dir = run_dir;

  auto checkpoint_path = [&](int epoch) {
    char name[48];
    std::snprintf(name, sizeof(name), "checkpoints/epoch_%04d", epoch);
    return run_dir + "/" + name;
  };

  int rising_evals = 0;
  double best_val = std::numeric_limits<double>::infinity();
  bool aborted = false;
  std::string abort_reason;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    MetricRow row;
    try {
      row = trainer.run_epoch();
    } catch (const std::exception& e) {
      // Non-finite loss or rejected step: keep the last good checkpoint and
      // everything logged so far.
      aborted = true;
      abort_reason = e.what();
      break;
    }

    const bool checkpoint_due =
        (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.max_epochs;
    if (checkpoint_due) {
      const std::string path = checkpoint_path(epoch);
      trainer.save_checkpoint(path);
      result.checkpoints.push_back({epoch, path, row.val_loss_mean, std::nullopt, std::nullopt});
    }

    if (config.early_stop_patience) {
      if (row.val_loss_mean < best_val) {
        best_val = row.val_loss_mean;
        rising_evals = 0;
      } else {
        ++rising_evals;
        if (rising_evals >= *config.early_stop_patience) {
          result.early_stopped = true;
          if (!checkpoint_due) {
            const std::string path = checkpoint_path(epoch);
            trainer.save_checkpoint(path);
            result.checkpoints.push_back(
                {epoch, path, row.val_loss_mean, std::nullopt, std::nullopt});
          }
          break;
        }
      }
    }
  }

  result.metrics = trainer.metrics();
  result.final_epoch = trainer.epoch() - 1;
  write_metrics_csv(result.metrics, run_dir + "/metrics.csv");
  if (config.verbose_step_metrics) {
    std::ostringstream out;
    out << "global_step,loss\n";
    for (const auto& [step, loss] : trainer.step_losses())
      out << step << ',' << format_double(loss) << '\n';
    write_file(run_dir + "/step_loss.csv", out.str());
  }

  if (aborted)
    throw std::runtime_error("training aborted: " + abort_reason + " (run directory " + run_dir +
                             " keeps the metrics and last good checkpoint)");
  return result;
}

}  // namespace contrastlab
