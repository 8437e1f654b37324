// Python bindings for the main operations: corpus generation and splits,
// batch planning, the InfoNCE objective, the learning-rate schedule, and
// single-experiment runs with zero-shot evaluation.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "contrastlab/checkpoint.hpp"
#include "contrastlab/corpus.hpp"
#include "contrastlab/experiment.hpp"
#include "contrastlab/objective.hpp"
#include "contrastlab/sampler.hpp"
#include "contrastlab/trainer.hpp"
#include "contrastlab/zeroshot.hpp"

namespace py = pybind11;
using namespace contrastlab;

namespace {

py::list plan_to_list(const BatchPlan& plan) {
  py::list batches;
  for (const auto& batch : plan.batches)
    batches.append(py::make_tuple(batch.study_ids, batch.framing.to_string()));
  return batches;
}

std::vector<CaseLabeledId> corpus_case_labels(const Corpus& corpus,
                                              const std::vector<int>& ids,
                                              const std::string& mode) {
  const CaseLabelMode label_mode = case_label_mode_from_string(mode);
  std::vector<CaseLabeledId> labeled;
  for (int id : ids) {
    const CaseLabel label = derive_case_label(corpus.study_by_id(id), label_mode);
    if (label == CaseLabel::kExcluded) continue;
    labeled.push_back({id, label == CaseLabel::kAbnormal});
  }
  return labeled;
}

}  // namespace

PYBIND11_MODULE(_contrastlab, m) {
  m.doc() = "contrastlab core: synthetic contrastive image-text alignment laboratory";

  py::class_<SyntheticConfig>(m, "SyntheticConfig")
      .def(py::init([](int n_studies, int n_findings, int d_img, int vocab_size,
                       int tokens_per_section, double abnormal_section_rate,
                       double noise_sigma, std::uint64_t seed, int max_studies_per_patient) {
             SyntheticConfig config;
             config.n_studies = n_studies;
             config.n_findings = n_findings;
             config.d_img = d_img;
             config.vocab_size = vocab_size;
             config.tokens_per_section = tokens_per_section;
             config.abnormal_section_rate = abnormal_section_rate;
             config.noise_sigma = noise_sigma;
             config.seed = seed;
             config.max_studies_per_patient = max_studies_per_patient;
             return config;
           }),
           py::arg("n_studies") = 500, py::arg("n_findings") = 8, py::arg("d_img") = 32,
           py::arg("vocab_size") = 96, py::arg("tokens_per_section") = 12,
           py::arg("abnormal_section_rate") = 0.15, py::arg("noise_sigma") = 0.1,
           py::arg("seed") = 7, py::arg("max_studies_per_patient") = 3)
      .def_readwrite("n_studies", &SyntheticConfig::n_studies)
      .def_readwrite("n_findings", &SyntheticConfig::n_findings)
      .def_readwrite("seed", &SyntheticConfig::seed);

  py::class_<Corpus>(m, "Corpus")
      .def_property_readonly("study_count",
                             [](const Corpus& c) { return c.studies.size(); })
      .def_property_readonly("finding_names",
                             [](const Corpus& c) {
                               std::vector<std::string> names;
                               for (const auto& finding : c.findings)
                                 names.push_back(finding.name);
                               return names;
                             })
      .def("split_ids", [](const Corpus& c, const std::string& name) { return c.split_ids(name); })
      .def("set_splits",
           [](Corpus& c, const std::map<std::string, std::vector<int>>& splits) {
             validate_splits(c, splits);
             c.splits = splits;
           })
      .def("case_labels",
           [](const Corpus& c, const std::string& split, const std::string& mode) {
             py::list out;
             for (const auto& entry : corpus_case_labels(c, c.split_ids(split), mode))
               out.append(py::make_tuple(entry.study_id, entry.abnormal));
             return out;
           },
           py::arg("split"), py::arg("mode") = "any_abnormal")
      .def("stats",
           [](const Corpus& c) {
             const CorpusStats stats = corpus_stats(c);
             py::dict out;
             out["n_studies"] = stats.n_studies;
             out["n_patients"] = stats.n_patients;
             out["abnormal_sections"] = stats.abnormal_sections;
             out["total_sections"] = stats.total_sections;
             out["any_abnormal"] = stats.any_abnormal;
             out["split_sizes"] = stats.split_sizes;
             return out;
           })
      .def("save", [](const Corpus& c, const std::string& path) { save_corpus(c, path); },
           py::arg("path"))
      .def_static("load", &load_corpus, py::arg("path"));

  m.def("generate_synthetic_corpus", &generate_synthetic_corpus, py::arg("config"));

  m.def(
      "split_patient_level",
      [](const Corpus& corpus, double train, double val, double test, std::uint64_t seed) {
        return split_patient_level(corpus, {train, val, test}, seed);
      },
      py::arg("corpus"), py::arg("train") = 0.6, py::arg("val") = 0.2, py::arg("test") = 0.2,
      py::arg("seed") = 11);

  m.def(
      "stratified_subsample",
      [](const std::vector<std::pair<int, bool>>& pool, double fraction, std::uint64_t seed) {
        std::vector<LabeledId> labeled;
        for (const auto& [id, abnormal] : pool)
          labeled.push_back({id, abnormal ? CaseLabel::kAbnormal : CaseLabel::kNormal});
        return stratified_subsample(labeled, fraction, seed);
      },
      py::arg("pool"), py::arg("fraction"), py::arg("seed"));

  m.def("framing_for_step",
        [](std::int64_t step) { return framing_for_step(step).to_string(); });

  m.def(
      "ratio_from_percent",
      [](int normal_percent, int batch_size) {
        const RatioSpec ratio = ratio_from_percent(normal_percent, batch_size);
        return py::make_tuple(ratio.normal_per_batch, ratio.abnormal_per_batch);
      },
      py::arg("normal_percent"), py::arg("batch_size"));

  m.def(
      "shuffled_batches",
      [](const std::vector<int>& ids, int batch_size, std::uint64_t seed, int epoch,
         std::int64_t step_offset) {
        return plan_to_list(shuffled_batches(ids, batch_size, seed, epoch, step_offset));
      },
      py::arg("ids"), py::arg("batch_size"), py::arg("seed"), py::arg("epoch") = 0,
      py::arg("step_offset") = 0);

  m.def(
      "section_balanced_batches",
      [](const Corpus& corpus, const std::vector<int>& ids, int normal_percent, int batch_size,
         std::uint64_t seed, int epoch, std::int64_t step_offset) {
        return plan_to_list(section_balanced_batches(
            make_label_view(corpus, ids), ratio_from_percent(normal_percent, batch_size),
            batch_size, seed, epoch, step_offset));
      },
      py::arg("corpus"), py::arg("ids"), py::arg("normal_percent"), py::arg("batch_size"),
      py::arg("seed"), py::arg("epoch") = 0, py::arg("step_offset") = 0);

  m.def(
      "case_balanced_batches",
      [](const Corpus& corpus, const std::vector<int>& ids, int normal_percent, int batch_size,
         std::uint64_t seed, int epoch, std::int64_t step_offset, const std::string& mode) {
        return plan_to_list(case_balanced_batches(
            corpus_case_labels(corpus, ids, mode), ratio_from_percent(normal_percent, batch_size),
            batch_size, seed, epoch, step_offset));
      },
      py::arg("corpus"), py::arg("ids"), py::arg("normal_percent"), py::arg("batch_size"),
      py::arg("seed"), py::arg("epoch") = 0, py::arg("step_offset") = 0,
      py::arg("mode") = "any_abnormal");

  m.def(
      "infonce_loss",
      [](const Eigen::MatrixXd& s, double tau) {
        const LossReport report = infonce_loss({s, tau});
        py::dict out;
        out["total"] = report.total;
        out["i2t"] = report.i2t;
        out["t2i"] = report.t2i;
        return out;
      },
      py::arg("similarity"), py::arg("tau") = 0.07);

  m.def(
      "infonce_grads",
      [](const Eigen::MatrixXd& image_emb, const Eigen::MatrixXd& text_emb, double tau) {
        EmbeddingBatch batch;
        batch.image_emb = image_emb;
        batch.text_emb = text_emb;
        batch.framing = Framing::full_report();
        const SimilarityMatrix sim = similarity_matrix(batch, tau);
        const InfonceGrads grads = infonce_backward(sim, batch);
        return py::make_tuple(grads.d_image_emb, grads.d_text_emb, grads.d_log_temperature);
      },
      py::arg("image_emb"), py::arg("text_emb"), py::arg("tau") = 0.07);

  m.def(
      "lr_at_step",
      [](double peak_lr, std::int64_t total_steps, std::int64_t step, double warmup_fraction,
         double warmup_start_divisor) {
        return lr_at_step({peak_lr, total_steps, warmup_fraction, warmup_start_divisor}, step);
      },
      py::arg("peak_lr"), py::arg("total_steps"), py::arg("step"),
      py::arg("warmup_fraction") = 0.10, py::arg("warmup_start_divisor") = 25.0);

  m.def(
      "run_single_experiment",
      [](const Corpus& corpus, const std::string& config_text, const std::string& out_dir) {
        const GridConfig grid = parse_config_text(config_text, "<python>");
        if (grid.experiments.size() != 1)
          throw std::invalid_argument("config must contain exactly one experiment");
        const RunManifest manifest =
            run_experiment(grid.experiments.front(), grid, corpus, out_dir);
        py::dict out;
        out["name"] = manifest.name;
        out["training_size"] = manifest.training_size;
        out["best_val_loss_epoch"] = manifest.best_by_val_loss.epoch;
        out["best_val_loss"] = manifest.best_by_val_loss.val_loss;
        out["best_macro_f1_epoch"] = manifest.best_by_macro_f1.epoch;
        out["best_macro_f1"] = manifest.best_by_macro_f1.macro_f1;
        out["run_dir"] = manifest.run_dir;
        return out;
      },
      py::arg("corpus"), py::arg("config_text"), py::arg("out_dir"));

  m.def(
      "evaluate_checkpoint",
      [](const Corpus& corpus, const std::string& checkpoint_path, std::uint64_t seed,
         const std::string& split, int prompts_per_side, int filler_tokens,
         std::uint64_t prompt_seed) {
        const CheckpointState state = load_checkpoint_state(checkpoint_path);
        PromptConfig prompts;
        prompts.prompts_per_side = prompts_per_side;
        prompts.filler_tokens_per_prompt = filler_tokens;
        prompts.seed = prompt_seed;
        const ZeroShotReport report =
            evaluate_all_findings(state.params, corpus, prompts, seed, split);
        py::list findings;
        for (const auto& finding : report.findings) {
          py::dict row;
          row["finding"] = finding.finding_name;
          row["f1"] = finding.f1;
          row["evaluable"] = finding.evaluable;
          row["tp"] = finding.tp;
          row["fp"] = finding.fp;
          row["tn"] = finding.tn;
          row["fn"] = finding.fn;
          findings.append(row);
        }
        py::dict out;
        out["macro_f1"] = report.macro_f1_percent;
        out["findings"] = findings;
        return out;
      },
      py::arg("corpus"), py::arg("checkpoint_path"), py::arg("seed") = 1,
      py::arg("split") = "test", py::arg("prompts_per_side") = 3,
      py::arg("filler_tokens") = 2, py::arg("prompt_seed") = 101);

  m.attr("__version__") = build_id();
}
