#pragma once

// Zero-shot evaluation: balanced per-finding test sets, prompt-ensemble
// similarity classification, per-finding F1 and macro F1.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "contrastlab/corpus.hpp"
#include "contrastlab/model.hpp"

namespace contrastlab {

struct PromptSet {
  int finding_id = 0;
  std::vector<TokenSeq> positive_prompts;
  std::vector<TokenSeq> negative_prompts;
};

struct PromptConfig {
  int prompts_per_side = 3;
  int filler_tokens_per_prompt = 2;
  std::uint64_t seed = 101;
};

// Synthetic prompts built from the corpus token layout: positives carry the
// finding's template n-gram, negatives the normal template, both padded with
// seeded filler variations.
std::vector<PromptSet> build_prompt_sets(const Corpus& corpus, const PromptConfig& config);

struct FindingTruth {
  int study_id = 0;
  bool positive = false;
};

// Equal-count positive/negative subset via seeded downsampling of the
// majority class; nullopt when either class is empty (finding un-evaluable).
std::optional<std::vector<int>> build_balanced_eval_set(const std::vector<FindingTruth>& truth,
                                                        std::uint64_t seed);

// Positive iff the mean cosine against positive prompts strictly exceeds the
// mean against negative prompts; exact ties are negative.
bool classify_finding(const Eigen::VectorXd& image_emb, const PromptSet& prompts,
                      const EncoderParams& params);

// 2*tp / (2*tp + fp + fn); 0 when the denominator is 0.
double f1_score(std::int64_t tp, std::int64_t fp, std::int64_t fn);

struct FindingEvalResult {
  int finding_id = 0;
  std::string finding_name;
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double f1 = 0.0;
  std::vector<int> eval_ids;
  bool evaluable = false;
};

struct ZeroShotReport {
  std::vector<FindingEvalResult> findings;  // ascending finding id
  double macro_f1_percent = 0.0;            // unweighted mean over evaluable findings
  int evaluable_count = 0;
};

// Evaluates every finding on the given split (image embeddings computed
// once); throws if no finding is evaluable.
ZeroShotReport evaluate_all_findings(const EncoderParams& params, const Corpus& corpus,
                                     const PromptConfig& prompt_config, std::uint64_t seed,
                                     const std::string& split = "test");

// finding,tp,fp,tn,fn,f1 rows plus a trailing "macro_f1=<percent>" line.
void write_zeroshot_csv(const ZeroShotReport& report, const std::string& path);
ZeroShotReport read_zeroshot_csv(const std::string& path);

}  // namespace contrastlab
