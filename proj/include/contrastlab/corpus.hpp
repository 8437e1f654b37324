#pragma once

// Synthetic paired image/report corpus: the study/section/label data model,
// a seeded generator that plants finding signals into both modalities,
// patient-level splits, stratified subsampling, and JSON (de)serialization.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace contrastlab {

inline constexpr int kSectionCount = 12;
inline constexpr int kEmptyToken = 0;      // reserved: stands in for empty text
inline constexpr int kTemplateLength = 3;  // tokens per template n-gram

using TokenSeq = std::vector<std::int32_t>;

struct Finding {
  int id = 0;
  std::string name;
  int section_index = 0;  // anatomical section where this finding manifests
};

struct SectionRecord {
  int section_index = 0;
  TokenSeq text;
  bool is_abnormal = false;
  std::vector<int> findings_present;  // sorted finding ids; empty iff normal
};

struct Study {
  int study_id = 0;
  int patient_id = 0;
  Eigen::VectorXd image_features;
  std::array<SectionRecord, kSectionCount> sections;
  TokenSeq full_report;  // concatenation of section texts in section order

  bool has_finding(int finding_id) const;
};

enum class CaseLabelMode { kAnyAbnormal, kAllAbnormal };
enum class CaseLabel { kNormal, kAbnormal, kExcluded };

const char* to_string(CaseLabelMode mode);
const char* to_string(CaseLabel label);
CaseLabelMode case_label_mode_from_string(const std::string& name);

struct SyntheticConfig {
  int n_studies = 500;
  int n_findings = 8;
  int d_img = 32;
  int vocab_size = 96;
  int tokens_per_section = 12;
  double abnormal_section_rate = 0.15;  // target marginal fraction of abnormal sections
  double noise_sigma = 0.1;
  std::uint64_t seed = 7;
  int max_studies_per_patient = 3;

  // First token usable as filler; everything below is reserved for the
  // empty token plus the normal/finding template n-grams.
  int reserved_tokens() const { return 1 + kTemplateLength * (n_findings + 1); }
  int covered_sections() const { return n_findings < kSectionCount ? n_findings : kSectionCount; }

  void validate() const;  // throws std::invalid_argument
};

// Fixed token layout: the normal template and one template per finding id.
TokenSeq normal_template();
TokenSeq finding_template(int finding_id);

struct Corpus {
  int format_version = 1;
  SyntheticConfig config;
  std::vector<Finding> findings;
  std::vector<Study> studies;  // sorted by study_id
  std::map<std::string, std::vector<int>> splits;

  const Study& study_by_id(int study_id) const;
  const std::vector<int>& split_ids(const std::string& name) const;
};

Corpus generate_synthetic_corpus(const SyntheticConfig& config);

CaseLabel derive_case_label(const Study& study, CaseLabelMode mode);

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

// Patient-disjoint train/val/test assignment; sizes follow round-half-up on
// patient counts with the remainder absorbed by the largest split.
std::map<std::string, std::vector<int>> split_patient_level(const Corpus& corpus,
                                                            SplitFractions fractions,
                                                            std::uint64_t seed);

struct LabeledId {
  int study_id = 0;
  CaseLabel label = CaseLabel::kNormal;
};

// Seeded fraction of a labeled pool with per-class round-half-up counts, so
// the class ratio drifts by at most one study.
std::vector<int> stratified_subsample(const std::vector<LabeledId>& pool, double fraction,
                                      std::uint64_t seed);

// Every referenced id must exist and no patient may span two splits.
void validate_splits(const Corpus& corpus,
                     const std::map<std::string, std::vector<int>>& splits);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

struct CorpusStats {
  int n_studies = 0;
  int n_patients = 0;
  int abnormal_sections = 0;
  int total_sections = 0;
  int any_abnormal = 0;
  int all_abnormal = 0;
  int all_excluded = 0;
  std::map<std::string, int> split_sizes;
};

CorpusStats corpus_stats(const Corpus& corpus);
std::string format_corpus_stats(const CorpusStats& stats);

}  // namespace contrastlab
