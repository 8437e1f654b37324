#pragma once

// Experiment orchestration: strict config parsing, single runs that pair the
// trainer with per-checkpoint zero-shot evaluation, the full grid, and the
// CSV reports (summary / scaling curve / per-finding matrix).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "contrastlab/corpus.hpp"
#include "contrastlab/sampler.hpp"
#include "contrastlab/trainer.hpp"
#include "contrastlab/zeroshot.hpp"

namespace contrastlab {

enum class DatasetFamily { kFull, kNab };

const char* to_string(DatasetFamily family);

struct ExperimentSpec {
  std::string name;
  DatasetFamily dataset = DatasetFamily::kFull;
  double data_fraction = 1.0;  // NAB runs only; one of 0.2 / 0.4 / 1.0
  SamplerKind sampler = SamplerKind::kShuffled;
  int normal_percent = 50;  // balanced samplers only
  TrainConfig train;

  std::string sampler_display_name() const;  // Shuffled / SectionBalanced / NABBatchSampler
};

struct NabPoolSpec {
  int normal_count = 1587;
  int abnormal_count = 1902;
  std::uint64_t seed = 5;
};

struct GridConfig {
  std::optional<SyntheticConfig> corpus;  // generated unless a corpus file is supplied
  SplitFractions split_fractions;
  std::uint64_t split_seed = 11;
  std::optional<NabPoolSpec> nab_pool;
  PromptConfig prompts;
  TrainConfig defaults;
  std::vector<ExperimentSpec> experiments;
};

// Strict parse: unknown keys are rejected with their path; syntax errors
// carry line/column.
GridConfig parse_config(const std::string& path);
GridConfig parse_config_text(const std::string& text, const std::string& origin);

struct CorpusGenConfig {
  SyntheticConfig synthetic;
  SplitFractions fractions;
  std::uint64_t split_seed = 11;
};

// Accepts either a bare corpus block or a full grid config (its `corpus`
// block is used).
CorpusGenConfig parse_corpus_generation_config(const std::string& path);

// Generate + patient-level split in one step (what `corpus generate` runs).
Corpus build_corpus(const CorpusGenConfig& config);

struct OutputRecord {
  std::string path;  // relative to the run directory
  std::string fnv64;
};

struct BestRecord {
  int epoch = 0;
  std::string checkpoint;
  double val_loss = 0.0;
  double macro_f1 = 0.0;
};

struct RunManifest {
  std::string name;
  std::string run_dir;
  ExperimentSpec spec;
  std::string corpus_hash;
  std::uint64_t seed = 0;
  std::string build_id;
  std::string started_at;
  std::string finished_at;
  int training_size = 0;
  std::vector<OutputRecord> outputs;
  std::vector<CheckpointRecord> checkpoint_records;
  BestRecord best_by_val_loss;
  BestRecord best_by_macro_f1;
  OverfitFlag overfitting;  // patience-3 divergence flag over the metrics
};

void save_manifest(const RunManifest& manifest, const std::string& path);
RunManifest load_manifest(const std::string& path);

// Resolves the spec's training pool against the corpus: Full = the train
// split; NAB = the train split filtered by case label (optionally trimmed to
// the configured pool counts), then stratified-subsampled by data_fraction.
std::vector<int> resolve_training_pool(const ExperimentSpec& spec, const GridConfig& grid,
                                       const Corpus& corpus);

RunManifest run_experiment(const ExperimentSpec& spec, const GridConfig& grid,
                           const Corpus& corpus, const std::string& out_dir);

struct GridRunEntry {
  std::string name;
  bool failed = false;
  std::string error;
  std::optional<RunManifest> manifest;
};

struct GridResult {
  std::vector<GridRunEntry> entries;  // config order
  std::string summary_path;
  std::string grid_dir;
};

// Runs every spec sequentially; a failed spec is recorded and the grid
// continues. Emits summary.csv with the Experiment/Dataset/TrainingSize/
// Sampler/BestF1/BestEpoch schema.
GridResult run_grid(const GridConfig& grid, const Corpus& corpus, const std::string& out_dir);

std::string summary_csv_header();
void write_summary_csv(const GridResult& result, const std::string& path);

// Plot-ready rows (training_size,epoch,macro_f1,is_best,monotone_with_size)
// from fraction-run manifests.
void emit_scaling_curve_data(const std::vector<RunManifest>& manifests, const std::string& path);

// findings x experiments matrix of best-checkpoint F1 values, findings sorted
// descending by the first experiment's column.
void emit_perfinding_matrix(const std::vector<RunManifest>& manifests, const std::string& path);

// Names of the runs recorded in a grid directory, in config order.
std::vector<std::string> grid_run_names(const std::string& grid_dir);

const char* build_id();

}  // namespace contrastlab
