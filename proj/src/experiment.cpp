#include "contrastlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "contrastlab/checkpoint.hpp"
#include "contrastlab/io.hpp"
#include "contrastlab/rng.hpp"

#ifndef CONTRASTLAB_BUILD_ID
#define CONTRASTLAB_BUILD_ID "contrastlab-dev"
#endif

namespace contrastlab {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

void reject_unknown_keys(const json& node, const std::set<std::string>& allowed,
                         const std::string& path) {
  for (const auto& item : node.items()) {
    if (!allowed.count(item.key()))
      throw std::runtime_error("unknown key '" + item.key() + "' at " + path);
  }
}

void apply_dims_keys(const json& node, ModelDims& dims, const std::string& path) {
  reject_unknown_keys(node,
                      {"d_txt", "vision_hidden", "text_hidden", "vision_feat", "text_feat",
                       "embed_dim"},
                      path);
  if (node.contains("d_txt")) dims.d_txt = node.at("d_txt").get<int>();
  if (node.contains("vision_hidden")) dims.vision_hidden = node.at("vision_hidden").get<int>();
  if (node.contains("text_hidden")) dims.text_hidden = node.at("text_hidden").get<int>();
  if (node.contains("vision_feat")) dims.vision_feat = node.at("vision_feat").get<int>();
  if (node.contains("text_feat")) dims.text_feat = node.at("text_feat").get<int>();
  if (node.contains("embed_dim")) dims.embed_dim = node.at("embed_dim").get<int>();
}

const std::set<std::string> kTrainKeys = {
    "batch_size",    "epochs",        "peak_lr",       "warmup_fraction",
    "warmup_start_divisor", "weight_decay", "eval_every", "seed",
    "label_mode",    "max_grad_norm", "early_stop_patience", "dims",
    "verbose_step_metrics"};

void apply_train_keys(const json& node, TrainConfig& config, const std::string& path) {
  if (node.contains("batch_size")) config.batch_size = node.at("batch_size").get<int>();
  if (node.contains("epochs")) config.max_epochs = node.at("epochs").get<int>();
  if (node.contains("peak_lr")) config.peak_lr = node.at("peak_lr").get<double>();
  if (node.contains("warmup_fraction"))
    config.warmup_fraction = node.at("warmup_fraction").get<double>();
  if (node.contains("warmup_start_divisor"))
    config.warmup_start_divisor = node.at("warmup_start_divisor").get<double>();
  if (node.contains("weight_decay"))
    config.optimizer.weight_decay = node.at("weight_decay").get<double>();
  if (node.contains("eval_every")) config.eval_every = node.at("eval_every").get<int>();
  if (node.contains("seed")) config.seed = node.at("seed").get<std::uint64_t>();
  if (node.contains("label_mode"))
    config.label_mode = case_label_mode_from_string(node.at("label_mode").get<std::string>());
  if (node.contains("max_grad_norm"))
    config.max_grad_norm = node.at("max_grad_norm").get<double>();
  if (node.contains("early_stop_patience"))
    config.early_stop_patience = node.at("early_stop_patience").get<int>();
  if (node.contains("verbose_step_metrics"))
    config.verbose_step_metrics = node.at("verbose_step_metrics").get<bool>();
  if (node.contains("dims")) apply_dims_keys(node.at("dims"), config.dims, path + ".dims");
}

SyntheticConfig parse_corpus_block(const json& node, SplitFractions& fractions,
                                   std::uint64_t& split_seed) {
  reject_unknown_keys(node,
                      {"n_studies", "n_findings", "d_img", "vocab_size", "tokens_per_section",
                       "abnormal_section_rate", "noise_sigma", "seed",
                       "max_studies_per_patient", "split_fractions", "split_seed"},
                      "corpus");
  SyntheticConfig config;
  if (node.contains("n_studies")) config.n_studies = node.at("n_studies").get<int>();
  if (node.contains("n_findings")) config.n_findings = node.at("n_findings").get<int>();
  if (node.contains("d_img")) config.d_img = node.at("d_img").get<int>();
  if (node.contains("vocab_size")) config.vocab_size = node.at("vocab_size").get<int>();
  if (node.contains("tokens_per_section"))
    config.tokens_per_section = node.at("tokens_per_section").get<int>();
  if (node.contains("abnormal_section_rate"))
    config.abnormal_section_rate = node.at("abnormal_section_rate").get<double>();
  if (node.contains("noise_sigma")) config.noise_sigma = node.at("noise_sigma").get<double>();
  if (node.contains("seed")) config.seed = node.at("seed").get<std::uint64_t>();
  if (node.contains("max_studies_per_patient"))
    config.max_studies_per_patient = node.at("max_studies_per_patient").get<int>();
  if (node.contains("split_fractions")) {
    const auto values = node.at("split_fractions").get<std::vector<double>>();
    if (values.size() != 3)
      throw std::runtime_error("corpus.split_fractions must have 3 entries (train, val, test)");
    fractions = {values[0], values[1], values[2]};
  }
  if (node.contains("split_seed")) split_seed = node.at("split_seed").get<std::uint64_t>();
  return config;
}

bool fraction_is(double value, double target) { return std::abs(value - target) < 1e-9; }

}  // namespace

const char* to_string(DatasetFamily family) {
  return family == DatasetFamily::kFull ? "Full" : "NAB";
}

std::string ExperimentSpec::sampler_display_name() const { return to_string(sampler); }

GridConfig parse_config_text(const std::string& text, const std::string& origin) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw std::runtime_error("empty config file: " + origin);
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, column] = line_column_at(text, e.byte > 0 ? e.byte - 1 : 0);
    throw std::runtime_error("config parse error in " + origin + " at line " +
                             std::to_string(line) + ", column " + std::to_string(column) + ": " +
                             e.what());
  }

  reject_unknown_keys(root, {"version", "corpus", "nab_pool", "prompts", "defaults",
                             "experiments"},
                      "(top level)");

  GridConfig grid;
  if (root.contains("version") && root.at("version").get<int>() != 1)
    throw std::runtime_error("unsupported config version in " + origin);

  if (root.contains("corpus"))
    grid.corpus = parse_corpus_block(root.at("corpus"), grid.split_fractions, grid.split_seed);

  if (root.contains("nab_pool")) {
    const auto& node = root.at("nab_pool");
    reject_unknown_keys(node, {"normal", "abnormal", "seed"}, "nab_pool");
    NabPoolSpec pool;
    if (node.contains("normal")) pool.normal_count = node.at("normal").get<int>();
    if (node.contains("abnormal")) pool.abnormal_count = node.at("abnormal").get<int>();
    if (node.contains("seed")) pool.seed = node.at("seed").get<std::uint64_t>();
    grid.nab_pool = pool;
  }

  if (root.contains("prompts")) {
    const auto& node = root.at("prompts");
    reject_unknown_keys(node, {"prompts_per_side", "filler_tokens_per_prompt", "seed"},
                        "prompts");
    if (node.contains("prompts_per_side"))
      grid.prompts.prompts_per_side = node.at("prompts_per_side").get<int>();
    if (node.contains("filler_tokens_per_prompt"))
      grid.prompts.filler_tokens_per_prompt = node.at("filler_tokens_per_prompt").get<int>();
    if (node.contains("seed")) grid.prompts.seed = node.at("seed").get<std::uint64_t>();
  }

  if (root.contains("defaults")) {
    reject_unknown_keys(root.at("defaults"), kTrainKeys, "defaults");
    apply_train_keys(root.at("defaults"), grid.defaults, "defaults");
  }

  if (!root.contains("experiments") || !root.at("experiments").is_array() ||
      root.at("experiments").empty())
    throw std::runtime_error("no experiments in " + origin);

  std::set<std::string> names;
  std::set<std::string> experiment_keys = kTrainKeys;
  for (const char* key : {"name", "dataset", "data_fraction", "sampler", "normal_percent"})
    experiment_keys.insert(key);

  int index = 0;
  for (const auto& node : root.at("experiments")) {
    const std::string path = "experiments[" + std::to_string(index++) + "]";
    reject_unknown_keys(node, experiment_keys, path);

    ExperimentSpec spec;
    spec.train = grid.defaults;
    if (!node.contains("name")) throw std::runtime_error(path + ": missing 'name'");
    spec.name = node.at("name").get<std::string>();
    if (spec.name.empty()) throw std::runtime_error(path + ": empty experiment name");
    if (!names.insert(spec.name).second)
      throw std::runtime_error(path + ": duplicate experiment name '" + spec.name + "'");

    if (node.contains("dataset")) {
      const auto dataset = node.at("dataset").get<std::string>();
      if (dataset == "Full") spec.dataset = DatasetFamily::kFull;
      else if (dataset == "NAB") spec.dataset = DatasetFamily::kNab;
      else throw std::runtime_error(path + ": unknown dataset '" + dataset + "'");
    }
    if (node.contains("data_fraction"))
      spec.data_fraction = node.at("data_fraction").get<double>();
    if (!(fraction_is(spec.data_fraction, 0.2) || fraction_is(spec.data_fraction, 0.4) ||
          fraction_is(spec.data_fraction, 1.0)))
      throw std::runtime_error(path + ": data_fraction must be one of 0.2, 0.4, 1.0");
    if (!fraction_is(spec.data_fraction, 1.0) && spec.dataset != DatasetFamily::kNab)
      throw std::runtime_error(path + ": fractional runs are defined on the NAB family only");

    if (node.contains("sampler"))
      spec.sampler = sampler_kind_from_string(node.at("sampler").get<std::string>());
    spec.train.sampler = spec.sampler;

    if (node.contains("normal_percent")) {
      if (spec.sampler == SamplerKind::kShuffled)
        throw std::runtime_error(path +
                                 ": normal_percent is meaningless with the Shuffled sampler");
      spec.normal_percent = node.at("normal_percent").get<int>();
    }

    apply_train_keys(node, spec.train, path);
    if (spec.sampler != SamplerKind::kShuffled)
      spec.train.ratio = ratio_from_percent(spec.normal_percent, spec.train.batch_size);

    grid.experiments.push_back(std::move(spec));
  }

  return grid;
}

GridConfig parse_config(const std::string& path) {
  return parse_config_text(read_file(path), path);
}

CorpusGenConfig parse_corpus_generation_config(const std::string& path) {
  const std::string text = read_file(path);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw std::runtime_error("empty config file: " + path);
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, column] = line_column_at(text, e.byte > 0 ? e.byte - 1 : 0);
    throw std::runtime_error("config parse error in " + path + " at line " +
                             std::to_string(line) + ", column " + std::to_string(column) + ": " +
                             e.what());
  }
  CorpusGenConfig config;
  const json& block = root.contains("corpus") ? root.at("corpus") : root;
  config.synthetic = parse_corpus_block(block, config.fractions, config.split_seed);
  return config;
}

Corpus build_corpus(const CorpusGenConfig& config) {
  Corpus corpus = generate_synthetic_corpus(config.synthetic);
  corpus.splits = split_patient_level(corpus, config.fractions, config.split_seed);
  return corpus;
}

std::vector<int> resolve_training_pool(const ExperimentSpec& spec, const GridConfig& grid,
                                       const Corpus& corpus) {
  const std::vector<int>& train_split = corpus.split_ids("train");
  if (spec.dataset == DatasetFamily::kFull) {
    if (!fraction_is(spec.data_fraction, 1.0))
      throw std::invalid_argument("fractional runs are defined on the NAB family only");
    return train_split;
  }

  // NAB family: filter by case label, optionally trim to the configured pool
  // counts, then take the stratified fraction.
  std::vector<LabeledId> labeled;
  labeled.reserve(train_split.size());
  for (int id : train_split) {
    const CaseLabel label = derive_case_label(corpus.study_by_id(id), spec.train.label_mode);
    if (label == CaseLabel::kExcluded) continue;
    labeled.push_back({id, label});
  }

  if (grid.nab_pool) {
    std::vector<int> normals;
    std::vector<int> abnormals;
    for (const auto& entry : labeled)
      (entry.label == CaseLabel::kNormal ? normals : abnormals).push_back(entry.study_id);
    if (static_cast<int>(normals.size()) < grid.nab_pool->normal_count ||
        static_cast<int>(abnormals.size()) < grid.nab_pool->abnormal_count)
      throw std::runtime_error(
          "NAB pool trim needs " + std::to_string(grid.nab_pool->normal_count) + "/" +
          std::to_string(grid.nab_pool->abnormal_count) + " normal/abnormal studies but only " +
          std::to_string(normals.size()) + "/" + std::to_string(abnormals.size()) +
          " are available; generate a larger corpus");
    Rng rng(grid.nab_pool->seed);
    Rng normal_rng = rng.stream(0);
    Rng abnormal_rng = rng.stream(1);
    normal_rng.shuffle(normals);
    abnormal_rng.shuffle(abnormals);
    normals.resize(static_cast<std::size_t>(grid.nab_pool->normal_count));
    abnormals.resize(static_cast<std::size_t>(grid.nab_pool->abnormal_count));
    labeled.clear();
    for (int id : normals) labeled.push_back({id, CaseLabel::kNormal});
    for (int id : abnormals) labeled.push_back({id, CaseLabel::kAbnormal});
    std::sort(labeled.begin(), labeled.end(),
              [](const LabeledId& a, const LabeledId& b) { return a.study_id < b.study_id; });
  }

  if (fraction_is(spec.data_fraction, 1.0)) {
    std::vector<int> ids;
    ids.reserve(labeled.size());
    for (const auto& entry : labeled) ids.push_back(entry.study_id);
    return ids;
  }
  return stratified_subsample(labeled, spec.data_fraction, spec.train.seed);
}

namespace {

json spec_to_json(const ExperimentSpec& spec) {
  json node;
  node["name"] = spec.name;
  node["dataset"] = to_string(spec.dataset);
  node["data_fraction"] = spec.data_fraction;
  node["sampler"] = to_string(spec.sampler);
  node["normal_percent"] = spec.normal_percent;
  node["train"] = {{"batch_size", spec.train.batch_size},
                   {"epochs", spec.train.max_epochs},
                   {"peak_lr", spec.train.peak_lr},
                   {"warmup_fraction", spec.train.warmup_fraction},
                   {"warmup_start_divisor", spec.train.warmup_start_divisor},
                   {"weight_decay", spec.train.optimizer.weight_decay},
                   {"eval_every", spec.train.eval_every},
                   {"seed", spec.train.seed},
                   {"label_mode", to_string(spec.train.label_mode)},
                   {"ratio_normal", spec.train.ratio.normal_per_batch},
                   {"ratio_abnormal", spec.train.ratio.abnormal_per_batch}};
  return node;
}

ExperimentSpec spec_from_json(const json& node) {
  ExperimentSpec spec;
  spec.name = node.at("name").get<std::string>();
  spec.dataset = node.at("dataset").get<std::string>() == "Full" ? DatasetFamily::kFull
                                                                 : DatasetFamily::kNab;
  spec.data_fraction = node.at("data_fraction").get<double>();
  spec.sampler = sampler_kind_from_string(node.at("sampler").get<std::string>());
  spec.normal_percent = node.at("normal_percent").get<int>();
  const auto& train = node.at("train");
  spec.train.batch_size = train.at("batch_size").get<int>();
  spec.train.max_epochs = train.at("epochs").get<int>();
  spec.train.peak_lr = train.at("peak_lr").get<double>();
  spec.train.warmup_fraction = train.at("warmup_fraction").get<double>();
  spec.train.warmup_start_divisor = train.at("warmup_start_divisor").get<double>();
  spec.train.optimizer.weight_decay = train.at("weight_decay").get<double>();
  spec.train.eval_every = train.at("eval_every").get<int>();
  spec.train.seed = train.at("seed").get<std::uint64_t>();
  spec.train.label_mode = case_label_mode_from_string(train.at("label_mode").get<std::string>());
  spec.train.ratio = {train.at("ratio_normal").get<int>(),
                      train.at("ratio_abnormal").get<int>()};
  spec.train.sampler = spec.sampler;
  return spec;
}

json best_to_json(const BestRecord& best) {
  return {{"epoch", best.epoch},
          {"checkpoint", best.checkpoint},
          {"val_loss", best.val_loss},
          {"macro_f1", best.macro_f1}};
}

BestRecord best_from_json(const json& node) {
  BestRecord best;
  best.epoch = node.at("epoch").get<int>();
  best.checkpoint = node.at("checkpoint").get<std::string>();
  best.val_loss = node.at("val_loss").get<double>();
  best.macro_f1 = node.at("macro_f1").get<double>();
  return best;
}

}  // namespace

void save_manifest(const RunManifest& manifest, const std::string& path) {
  json root;
  root["version"] = 1;
  root["name"] = manifest.name;
  root["spec"] = spec_to_json(manifest.spec);
  root["corpus_hash"] = manifest.corpus_hash;
  root["seed"] = manifest.seed;
  root["build_id"] = manifest.build_id;
  root["started_at"] = manifest.started_at;
  root["finished_at"] = manifest.finished_at;
  root["training_size"] = manifest.training_size;
  json outputs = json::array();
  for (const auto& output : manifest.outputs)
    outputs.push_back({{"path", output.path}, {"fnv64", output.fnv64}});
  root["outputs"] = std::move(outputs);
  json records = json::array();
  for (const auto& record : manifest.checkpoint_records) {
    json node = {{"epoch", record.epoch},
                 {"checkpoint", record.path},
                 {"val_loss", record.val_loss}};
    if (record.zero_shot_macro_f1) node["macro_f1"] = *record.zero_shot_macro_f1;
    if (record.zeroshot_csv) node["zeroshot_csv"] = *record.zeroshot_csv;
    records.push_back(std::move(node));
  }
  root["checkpoint_records"] = std::move(records);
  root["best_by_val_loss"] = best_to_json(manifest.best_by_val_loss);
  root["best_by_macro_f1"] = best_to_json(manifest.best_by_macro_f1);
  root["overfitting"] = {{"flagged", manifest.overfitting.flagged},
                         {"first_epoch", manifest.overfitting.first_epoch}};
  write_file(path, root.dump(2) + "\n");
}

RunManifest load_manifest(const std::string& path) {
  json root;
  try {
    root = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("manifest parse error in " + path + ": " + e.what());
  }
  RunManifest manifest;
  manifest.name = root.at("name").get<std::string>();
  manifest.spec = spec_from_json(root.at("spec"));
  manifest.corpus_hash = root.at("corpus_hash").get<std::string>();
  manifest.seed = root.at("seed").get<std::uint64_t>();
  manifest.build_id = root.at("build_id").get<std::string>();
  manifest.started_at = root.at("started_at").get<std::string>();
  manifest.finished_at = root.at("finished_at").get<std::string>();
  manifest.training_size = root.at("training_size").get<int>();
  for (const auto& node : root.at("outputs"))
    manifest.outputs.push_back(
        {node.at("path").get<std::string>(), node.at("fnv64").get<std::string>()});
  for (const auto& node : root.at("checkpoint_records")) {
    CheckpointRecord record;
    record.epoch = node.at("epoch").get<int>();
    record.path = node.at("checkpoint").get<std::string>();
    record.val_loss = node.at("val_loss").get<double>();
    if (node.contains("macro_f1")) record.zero_shot_macro_f1 = node.at("macro_f1").get<double>();
    if (node.contains("zeroshot_csv"))
      record.zeroshot_csv = node.at("zeroshot_csv").get<std::string>();
    manifest.checkpoint_records.push_back(std::move(record));
  }
  manifest.best_by_val_loss = best_from_json(root.at("best_by_val_loss"));
  manifest.best_by_macro_f1 = best_from_json(root.at("best_by_macro_f1"));
  if (root.contains("overfitting")) {
    manifest.overfitting.flagged = root.at("overfitting").at("flagged").get<bool>();
    manifest.overfitting.first_epoch = root.at("overfitting").at("first_epoch").get<int>();
  }
  manifest.run_dir = fs::path(path).parent_path().string();
  return manifest;
}

namespace {

RunManifest run_experiment_impl(const ExperimentSpec& spec, const GridConfig& grid,
                                const Corpus& corpus, const std::string& out_dir) {
  RunManifest manifest;
  manifest.name = spec.name;
  manifest.run_dir = out_dir;
  manifest.spec = spec;
  manifest.seed = spec.train.seed;
  manifest.build_id = build_id();
  manifest.started_at = utc_timestamp();

  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/zeroshot");

  // Corpus identity: hash of the canonical serialization.
  {
    const std::string tmp = out_dir + "/.corpus_hash_probe.json";
    save_corpus(corpus, tmp);
    manifest.corpus_hash = hash_file_hex(tmp);
    fs::remove(tmp);
  }

  ExperimentSpec resolved = spec;
  resolved.train.dims.d_img = corpus.config.d_img;
  resolved.train.dims.vocab_size = corpus.config.vocab_size;

  const std::vector<int> train_ids = resolve_training_pool(resolved, grid, corpus);
  manifest.training_size = static_cast<int>(train_ids.size());
  const std::vector<int>& val_ids = corpus.split_ids("val");

  RunResult run = run_training(corpus, resolved.train, train_ids, val_ids, out_dir);

  // Per-checkpoint zero-shot evaluation on the held-out test split.
  const std::uint64_t zeroshot_seed = Rng(resolved.train.seed).stream(0x7a73).seed();
  for (auto& record : run.checkpoints) {
    const CheckpointState state = load_checkpoint_state(record.path);
    const ZeroShotReport report =
        evaluate_all_findings(state.params, corpus, grid.prompts, zeroshot_seed, "test");
    char name[48];
    std::snprintf(name, sizeof(name), "zeroshot/epoch_%04d.csv", record.epoch);
    const std::string csv_path = out_dir + "/" + name;
    write_zeroshot_csv(report, csv_path);
    record.zero_shot_macro_f1 = report.macro_f1_percent;
    record.zeroshot_csv = name;
  }

  // Training-dynamics bookkeeping: flag sustained train/val divergence.
  constexpr int kOverfitPatience = 3;
  if (static_cast<int>(run.metrics.size()) > kOverfitPatience)
    manifest.overfitting = detect_overfitting(run.metrics, kOverfitPatience);

  manifest.checkpoint_records = run.checkpoints;
  {
    const CheckpointRecord& by_loss = select_best_checkpoint(run.checkpoints,
                                                             BestCriterion::kValLoss);
    const CheckpointRecord& by_f1 = select_best_checkpoint(run.checkpoints,
                                                           BestCriterion::kMacroF1);
    manifest.best_by_val_loss = {by_loss.epoch, by_loss.path, by_loss.val_loss,
                                 by_loss.zero_shot_macro_f1.value_or(0.0)};
    manifest.best_by_macro_f1 = {by_f1.epoch, by_f1.path, by_f1.val_loss,
                                 by_f1.zero_shot_macro_f1.value_or(0.0)};
  }

  // Record and hash every file the run produced.
  manifest.outputs.push_back({"metrics.csv", hash_file_hex(out_dir + "/metrics.csv")});
  for (const auto& record : run.checkpoints) {
    const std::string relative = fs::relative(record.path, out_dir).string();
    manifest.outputs.push_back({relative, hash_file_hex(record.path)});
    if (record.zeroshot_csv)
      manifest.outputs.push_back(
          {*record.zeroshot_csv, hash_file_hex(out_dir + "/" + *record.zeroshot_csv)});
  }

  manifest.finished_at = utc_timestamp();
  save_manifest(manifest, out_dir + "/manifest.json");
  return manifest;
}

}  // namespace

RunManifest run_experiment(const ExperimentSpec& spec, const GridConfig& grid,
                           const Corpus& corpus, const std::string& out_dir) {
  try {
    return run_experiment_impl(spec, grid, corpus, out_dir);
  } catch (const std::exception& e) {
    throw std::runtime_error("experiment '" + spec.name + "': " + e.what());
  }
}

std::string summary_csv_header() {
  return "Experiment,Dataset,TrainingSize,Sampler,BestF1,BestEpoch";
}

void write_summary_csv(const GridResult& result, const std::string& path) {
  std::ostringstream out;
  out << summary_csv_header() << '\n';
  for (const auto& entry : result.entries) {
    if (entry.failed || !entry.manifest) {
      out << entry.name << ",,,,failed,\n";
      continue;
    }
    const RunManifest& manifest = *entry.manifest;
    out << manifest.name << ',' << to_string(manifest.spec.dataset) << ','
        << manifest.training_size << ',' << manifest.spec.sampler_display_name() << ','
        << format_fixed(manifest.best_by_macro_f1.macro_f1, 2) << ','
        << manifest.best_by_macro_f1.epoch << '\n';
  }
  write_file(path, out.str());
}

GridResult run_grid(const GridConfig& grid, const Corpus& corpus, const std::string& out_dir) {
  if (grid.experiments.empty()) throw std::invalid_argument("run_grid: no experiments");
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/runs");

  GridResult result;
  result.grid_dir = out_dir;
  for (const auto& spec : grid.experiments) {
    GridRunEntry entry;
    entry.name = spec.name;
    try {
      entry.manifest = run_experiment(spec, grid, corpus, out_dir + "/runs/" + spec.name);
    } catch (const std::exception& e) {
      entry.failed = true;
      entry.error = e.what();
    }
    result.entries.push_back(std::move(entry));
  }

  result.summary_path = out_dir + "/summary.csv";
  write_summary_csv(result, result.summary_path);

  json names = json::array();
  for (const auto& entry : result.entries)
    names.push_back({{"name", entry.name},
                     {"failed", entry.failed},
                     {"error", entry.error}});
  json root = {{"version", 1}, {"runs", std::move(names)}};
  write_file(out_dir + "/grid_manifest.json", root.dump(2) + "\n");
  return result;
}

std::vector<std::string> grid_run_names(const std::string& grid_dir) {
  const json root = json::parse(read_file(grid_dir + "/grid_manifest.json"));
  std::vector<std::string> names;
  for (const auto& node : root.at("runs")) {
    if (!node.at("failed").get<bool>()) names.push_back(node.at("name").get<std::string>());
  }
  return names;
}

void emit_scaling_curve_data(const std::vector<RunManifest>& manifests, const std::string& path) {
  if (manifests.empty()) throw std::invalid_argument("emit_scaling_curve_data: no manifests");
  std::vector<const RunManifest*> ordered;
  for (const auto& manifest : manifests) ordered.push_back(&manifest);
  std::stable_sort(ordered.begin(), ordered.end(), [](const RunManifest* a, const RunManifest* b) {
    return a->training_size < b->training_size;
  });

  std::ostringstream out;
  out << "training_size,epoch,macro_f1,is_best,monotone_with_size\n";
  double previous_best = -1.0;
  for (const RunManifest* manifest : ordered) {
    const double best = manifest->best_by_macro_f1.macro_f1;
    const int monotone = previous_best < 0.0 || best >= previous_best ? 1 : 0;
    for (const auto& record : manifest->checkpoint_records) {
      if (!record.zero_shot_macro_f1) continue;
      const int is_best = record.epoch == manifest->best_by_macro_f1.epoch ? 1 : 0;
      out << manifest->training_size << ',' << record.epoch << ','
          << format_fixed(*record.zero_shot_macro_f1, 2) << ',' << is_best << ',' << monotone
          << '\n';
    }
    previous_best = best;
  }
  write_file(path, out.str());
}

void emit_perfinding_matrix(const std::vector<RunManifest>& manifests, const std::string& path) {
  if (manifests.empty()) throw std::invalid_argument("emit_perfinding_matrix: no manifests");

  struct Column {
    std::string name;
    std::vector<std::string> findings;
    std::vector<double> f1;
    std::vector<bool> evaluable;
  };
  std::vector<Column> columns;
  for (const auto& manifest : manifests) {
    const auto it = std::find_if(
        manifest.checkpoint_records.begin(), manifest.checkpoint_records.end(),
        [&](const CheckpointRecord& r) { return r.epoch == manifest.best_by_macro_f1.epoch; });
    if (it == manifest.checkpoint_records.end() || !it->zeroshot_csv)
      throw std::runtime_error("manifest for '" + manifest.name +
                               "' has no zero-shot output for its best checkpoint");
    const ZeroShotReport report =
        read_zeroshot_csv(manifest.run_dir + "/" + *it->zeroshot_csv);
    Column column;
    column.name = manifest.name;
    for (const auto& finding : report.findings) {
      column.findings.push_back(finding.finding_name);
      column.f1.push_back(finding.f1);
      column.evaluable.push_back(finding.evaluable);
    }
    columns.push_back(std::move(column));
  }

  // Finding sets must agree across experiments.
  for (std::size_t k = 1; k < columns.size(); ++k) {
    if (columns[k].findings != columns[0].findings) {
      std::set<std::string> first(columns[0].findings.begin(), columns[0].findings.end());
      std::set<std::string> other(columns[k].findings.begin(), columns[k].findings.end());
      std::ostringstream message;
      message << "finding sets differ between '" << columns[0].name << "' and '"
              << columns[k].name << "':";
      for (const auto& name : first)
        if (!other.count(name)) message << " -" << name;
      for (const auto& name : other)
        if (!first.count(name)) message << " +" << name;
      throw std::runtime_error(message.str());
    }
  }

  // Sort findings by the first experiment's F1, descending.
  std::vector<std::size_t> order(columns[0].findings.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return columns[0].f1[a] > columns[0].f1[b];
  });

  std::ostringstream out;
  out << "finding";
  for (const auto& column : columns) out << ',' << column.name;
  out << '\n';
  for (const std::size_t row : order) {
    out << columns[0].findings[row];
    for (const auto& column : columns) {
      out << ',';
      if (column.evaluable[row])
        out << format_fixed(100.0 * column.f1[row], 2);
      else
        out << "nan";
    }
    out << '\n';
  }
  write_file(path, out.str());
}

const char* build_id() { return CONTRASTLAB_BUILD_ID; }

}  // namespace contrastlab
