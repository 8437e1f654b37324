// contrastlab CLI: corpus generation/stats, sampler plan dumps, single
// training runs, the experiment grid, standalone zero-shot evaluation, and
// the CSV reports.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "contrastlab/checkpoint.hpp"
#include "contrastlab/corpus.hpp"
#include "contrastlab/experiment.hpp"
#include "contrastlab/io.hpp"
#include "contrastlab/sampler.hpp"
#include "contrastlab/trainer.hpp"
#include "contrastlab/zeroshot.hpp"

namespace {

using namespace contrastlab;
namespace fs = std::filesystem;

std::vector<RunManifest> load_grid_manifests(const std::string& grid_dir,
                                             const std::vector<std::string>& only_runs) {
  std::vector<std::string> names =
      only_runs.empty() ? grid_run_names(grid_dir) : only_runs;
  std::vector<RunManifest> manifests;
  for (const auto& name : names)
    manifests.push_back(load_manifest(grid_dir + "/runs/" + name + "/manifest.json"));
  return manifests;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastlab: contrastive image-text alignment laboratory"};
  app.require_subcommand(1);

  // --- corpus ---
  auto* corpus_cmd = app.add_subcommand("corpus", "Generate or inspect synthetic corpora");
  corpus_cmd->require_subcommand(1);

  std::string gen_config;
  std::string gen_out;
  auto* generate = corpus_cmd->add_subcommand("generate", "Generate a corpus from a config");
  generate->add_option("--config", gen_config, "Corpus or grid config JSON")->required();
  generate->add_option("--out", gen_out, "Output corpus file")->required();

  std::string stats_in;
  auto* stats = corpus_cmd->add_subcommand("stats", "Print corpus statistics");
  stats->add_option("--in", stats_in, "Corpus file")->required();

  // --- sampler dump-plan ---
  auto* sampler_cmd = app.add_subcommand("sampler", "Batch plan utilities");
  sampler_cmd->require_subcommand(1);
  std::string plan_corpus, plan_out, plan_sampler = "Shuffled", plan_split = "train";
  int plan_batch = 8, plan_epoch = 0, plan_percent = 50;
  std::uint64_t plan_seed = 1;
  std::int64_t plan_offset = 0;
  auto* dump_plan = sampler_cmd->add_subcommand("dump-plan", "Write one epoch's batch plan");
  dump_plan->add_option("--corpus", plan_corpus, "Corpus file")->required();
  dump_plan->add_option("--out", plan_out, "Output JSON file")->required();
  dump_plan->add_option("--sampler", plan_sampler, "Shuffled|SectionBalanced|NABBatchSampler");
  dump_plan->add_option("--split", plan_split, "Split to sample from");
  dump_plan->add_option("--batch-size", plan_batch, "Batch size");
  dump_plan->add_option("--normal-percent", plan_percent, "Normal percentage for balanced samplers");
  dump_plan->add_option("--seed", plan_seed, "Sampler seed");
  dump_plan->add_option("--epoch", plan_epoch, "Epoch index");
  dump_plan->add_option("--step-offset", plan_offset, "Global step offset");

  // --- train ---
  std::string train_spec, train_corpus, train_out;
  auto* train = app.add_subcommand("train", "Run a single experiment");
  train->add_option("--spec", train_spec, "Config with exactly one experiment")->required();
  train->add_option("--corpus", train_corpus, "Corpus file (generated from the config when omitted)");
  train->add_option("--out", train_out, "Run directory")->required();

  // --- grid ---
  std::string grid_config, grid_corpus, grid_out;
  auto* grid = app.add_subcommand("grid", "Run the full experiment grid");
  grid->add_option("--config", grid_config, "Grid config JSON")->required();
  grid->add_option("--corpus", grid_corpus, "Corpus file (generated from the config when omitted)");
  grid->add_option("--out", grid_out, "Grid output directory")->required();

  // --- zeroshot ---
  std::string zs_checkpoint, zs_corpus, zs_out, zs_split = "test";
  std::uint64_t zs_seed = 1, zs_prompt_seed = 101;
  int zs_prompts = 3, zs_filler = 2;
  auto* zeroshot = app.add_subcommand("zeroshot", "Zero-shot evaluation of a checkpoint");
  zeroshot->add_option("--checkpoint", zs_checkpoint, "Checkpoint file")->required();
  zeroshot->add_option("--corpus", zs_corpus, "Corpus file")->required();
  zeroshot->add_option("--out", zs_out, "Output CSV")->required();
  zeroshot->add_option("--split", zs_split, "Split to evaluate");
  zeroshot->add_option("--seed", zs_seed, "Balanced eval-set seed");
  zeroshot->add_option("--prompts-per-side", zs_prompts, "Prompts per side");
  zeroshot->add_option("--filler-tokens", zs_filler, "Filler tokens per prompt");
  zeroshot->add_option("--prompt-seed", zs_prompt_seed, "Prompt construction seed");

  // --- report ---
  auto* report = app.add_subcommand("report", "Emit CSV reports from a grid directory");
  report->require_subcommand(1);
  std::string rep_grid, rep_out;
  std::vector<std::string> rep_runs;
  auto add_report_options = [&](CLI::App* cmd) {
    cmd->add_option("--grid", rep_grid, "Grid directory")->required();
    cmd->add_option("--out", rep_out, "Output CSV")->required();
    cmd->add_option("--runs", rep_runs, "Explicit run names (config order by default)");
  };
  auto* rep_scaling = report->add_subcommand("scaling", "Zero-shot F1 vs training size data");
  add_report_options(rep_scaling);
  auto* rep_perfinding = report->add_subcommand("perfinding", "Findings x experiments F1 matrix");
  add_report_options(rep_perfinding);
  auto* rep_summary = report->add_subcommand("summary", "Re-emit the grid summary table");
  add_report_options(rep_summary);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) {
      const CorpusGenConfig config = parse_corpus_generation_config(gen_config);
      const Corpus corpus = build_corpus(config);
      save_corpus(corpus, gen_out);
      std::cout << "wrote " << gen_out << "\n" << format_corpus_stats(corpus_stats(corpus));
      return 0;
    }

    if (*stats) {
      const Corpus corpus = load_corpus(stats_in);
      std::cout << format_corpus_stats(corpus_stats(corpus));
      return 0;
    }

    if (*dump_plan) {
      const Corpus corpus = load_corpus(plan_corpus);
      const std::vector<int>& ids = corpus.split_ids(plan_split);
      const SamplerKind kind = sampler_kind_from_string(plan_sampler);
      BatchPlan plan;
      switch (kind) {
        case SamplerKind::kShuffled:
          plan = shuffled_batches(ids, plan_batch, plan_seed, plan_epoch, plan_offset);
          break;
        case SamplerKind::kSectionBalanced:
          plan = section_balanced_batches(make_label_view(corpus, ids),
                                          ratio_from_percent(plan_percent, plan_batch),
                                          plan_batch, plan_seed, plan_epoch, plan_offset);
          break;
        default: {
          std::vector<CaseLabeledId> labeled;
          for (int id : ids) {
            const CaseLabel label =
                derive_case_label(corpus.study_by_id(id), CaseLabelMode::kAnyAbnormal);
            if (label != CaseLabel::kExcluded)
              labeled.push_back({id, label == CaseLabel::kAbnormal});
          }
          plan = case_balanced_batches(labeled, ratio_from_percent(plan_percent, plan_batch),
                                       plan_batch, plan_seed, plan_epoch, plan_offset);
        }
      }
      dump_plan_json(plan, plan_out);
      std::cout << "wrote " << plan.batches.size() << " batches to " << plan_out << "\n";
      return 0;
    }

    if (*train) {
      const GridConfig config = parse_config(train_spec);
      if (config.experiments.size() != 1)
        throw std::runtime_error("train expects a config with exactly one experiment (got " +
                                 std::to_string(config.experiments.size()) + ")");
      Corpus corpus;
      if (!train_corpus.empty()) {
        corpus = load_corpus(train_corpus);
      } else {
        if (!config.corpus)
          throw std::runtime_error("no --corpus given and the config has no corpus block");
        corpus = build_corpus({*config.corpus, config.split_fractions, config.split_seed});
      }
      const RunManifest manifest =
          run_experiment(config.experiments.front(), config, corpus, train_out);
      std::cout << "run complete: best val-loss epoch " << manifest.best_by_val_loss.epoch
                << " (" << format_double(manifest.best_by_val_loss.val_loss, 6)
                << "), best macro-F1 epoch " << manifest.best_by_macro_f1.epoch << " ("
                << format_fixed(manifest.best_by_macro_f1.macro_f1, 2) << "%)\n";
      return 0;
    }

    if (*grid) {
      const GridConfig config = parse_config(grid_config);
      Corpus corpus;
      if (!grid_corpus.empty()) {
        corpus = load_corpus(grid_corpus);
      } else {
        if (!config.corpus)
          throw std::runtime_error("no --corpus given and the config has no corpus block");
        corpus = build_corpus({*config.corpus, config.split_fractions, config.split_seed});
        fs::create_directories(grid_out);
        save_corpus(corpus, grid_out + "/corpus.json");
      }
      const GridResult result = run_grid(config, corpus, grid_out);
      int failed = 0;
      for (const auto& entry : result.entries) {
        if (entry.failed) {
          ++failed;
          std::cerr << "run '" << entry.name << "' failed: " << entry.error << "\n";
        }
      }
      std::cout << "grid complete: " << result.entries.size() - failed << "/"
                << result.entries.size() << " runs succeeded, summary at "
                << result.summary_path << "\n";
      return failed == 0 ? 0 : 1;
    }

    if (*zeroshot) {
      const Corpus corpus = load_corpus(zs_corpus);
      const CheckpointState state = load_checkpoint_state(zs_checkpoint);
      PromptConfig prompts;
      prompts.prompts_per_side = zs_prompts;
      prompts.filler_tokens_per_prompt = zs_filler;
      prompts.seed = zs_prompt_seed;
      const ZeroShotReport report =
          evaluate_all_findings(state.params, corpus, prompts, zs_seed, zs_split);
      write_zeroshot_csv(report, zs_out);
      std::cout << "macro_f1=" << format_fixed(report.macro_f1_percent, 2) << " over "
                << report.evaluable_count << " evaluable findings -> " << zs_out << "\n";
      return 0;
    }

    if (*rep_scaling || *rep_perfinding || *rep_summary) {
      const auto manifests = load_grid_manifests(rep_grid, rep_runs);
      if (*rep_scaling) {
        std::vector<RunManifest> selected;
        if (rep_runs.empty()) {
          // Default: the NAB fraction runs with shuffled sampling.
          for (const auto& manifest : manifests)
            if (manifest.spec.dataset == DatasetFamily::kNab &&
                manifest.spec.sampler == SamplerKind::kShuffled)
              selected.push_back(manifest);
        } else {
          selected = manifests;
        }
        emit_scaling_curve_data(selected, rep_out);
      } else if (*rep_perfinding) {
        emit_perfinding_matrix(manifests, rep_out);
      } else {
        GridResult result;
        result.grid_dir = rep_grid;
        for (const auto& manifest : manifests)
          result.entries.push_back({manifest.name, false, "", manifest});
        write_summary_csv(result, rep_out);
      }
      std::cout << "wrote " << rep_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  return 0;
}
