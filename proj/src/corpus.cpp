#include "contrastlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "contrastlab/io.hpp"
#include "contrastlab/rng.hpp"

namespace contrastlab {

namespace {

using nlohmann::json;

// RNG stream tags within a corpus seed.
constexpr std::uint64_t kStreamMixing = 1;
constexpr std::uint64_t kStreamPatients = 2;
constexpr std::uint64_t kStreamStudyBase = 1000;

// Probability that an abnormal section carries extra candidate findings
// beyond the one it always plants.
constexpr double kExtraFindingRate = 0.25;

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

}  // namespace

bool Study::has_finding(int finding_id) const {
  for (const auto& section : sections) {
    for (int id : section.findings_present) {
      if (id == finding_id) return true;
    }
  }
  return false;
}

const char* to_string(CaseLabelMode mode) {
  return mode == CaseLabelMode::kAnyAbnormal ? "any_abnormal" : "all_abnormal";
}

const char* to_string(CaseLabel label) {
  switch (label) {
    case CaseLabel::kNormal: return "normal";
    case CaseLabel::kAbnormal: return "abnormal";
    default: return "excluded";
  }
}

CaseLabelMode case_label_mode_from_string(const std::string& name) {
  if (name == "any_abnormal") return CaseLabelMode::kAnyAbnormal;
  if (name == "all_abnormal") return CaseLabelMode::kAllAbnormal;
  throw std::invalid_argument("unknown case label mode: " + name);
}

void SyntheticConfig::validate() const {
  if (n_studies < 1) throw std::invalid_argument("n_studies must be positive");
  if (n_findings < 1) throw std::invalid_argument("n_findings must be positive");
  if (d_img < 1) throw std::invalid_argument("d_img must be positive");
  if (tokens_per_section < 1) throw std::invalid_argument("tokens_per_section must be positive");
  if (max_studies_per_patient < 1)
    throw std::invalid_argument("max_studies_per_patient must be positive");
  if (abnormal_section_rate < 0.0 || abnormal_section_rate > 1.0)
    throw std::invalid_argument("abnormal_section_rate must lie in [0, 1]");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be nonnegative");
  if (vocab_size <= reserved_tokens())
    throw std::invalid_argument(
        "vocab_size too small to encode templates: need more than " +
        std::to_string(reserved_tokens()) + " tokens for " + std::to_string(n_findings) +
        " findings");
  // The marginal rate is realized by upscaling on the covered sections; it
  // becomes unattainable once the per-section rate would exceed 1.
  const double per_section =
      abnormal_section_rate * kSectionCount / static_cast<double>(covered_sections());
  if (per_section > 1.0)
    throw std::invalid_argument(
        "abnormal_section_rate unattainable: only " + std::to_string(covered_sections()) +
        " of 12 sections carry findings");
}

TokenSeq normal_template() {
  TokenSeq t(kTemplateLength);
  std::iota(t.begin(), t.end(), 1);
  return t;
}

TokenSeq finding_template(int finding_id) {
  TokenSeq t(kTemplateLength);
  std::iota(t.begin(), t.end(), 1 + kTemplateLength * (finding_id + 1));
  return t;
}

const Study& Corpus::study_by_id(int study_id) const {
  const auto it = std::lower_bound(
      studies.begin(), studies.end(), study_id,
      [](const Study& s, int id) { return s.study_id < id; });
  if (it == studies.end() || it->study_id != study_id)
    throw std::out_of_range("unknown study id: " + std::to_string(study_id));
  return *it;
}

const std::vector<int>& Corpus::split_ids(const std::string& name) const {
  const auto it = splits.find(name);
  if (it == splits.end()) throw std::out_of_range("corpus has no split named '" + name + "'");
  return it->second;
}

Corpus generate_synthetic_corpus(const SyntheticConfig& config) {
  config.validate();

  Corpus corpus;
  corpus.config = config;

  corpus.findings.reserve(static_cast<std::size_t>(config.n_findings));
  for (int f = 0; f < config.n_findings; ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "finding_%02d", f);
    corpus.findings.push_back({f, name, f % kSectionCount});
  }

  const Rng root(config.seed);

  // Fixed mixing matrix: image features are W * indicator(findings) + noise.
  Rng w_rng = root.stream(kStreamMixing);
  Eigen::MatrixXd mixing(config.d_img, config.n_findings);
  for (int r = 0; r < config.d_img; ++r)
    for (int c = 0; c < config.n_findings; ++c) mixing(r, c) = w_rng.next_gaussian();

  // Patient assignment: 1..max_studies_per_patient studies per patient.
  Rng patient_rng = root.stream(kStreamPatients);
  std::vector<int> patient_of(static_cast<std::size_t>(config.n_studies));
  {
    int assigned = 0;
    int patient = 0;
    while (assigned < config.n_studies) {
      int count = 1 + static_cast<int>(patient_rng.next_below(config.max_studies_per_patient));
      count = std::min(count, config.n_studies - assigned);
      for (int k = 0; k < count; ++k) patient_of[static_cast<std::size_t>(assigned++)] = patient;
      ++patient;
    }
  }

  // Candidate findings per section under the fixed f -> f mod 12 mapping.
  std::array<std::vector<int>, kSectionCount> candidates;
  for (const auto& finding : corpus.findings)
    candidates[static_cast<std::size_t>(finding.section_index)].push_back(finding.id);
  const double per_section_rate =
      config.abnormal_section_rate * kSectionCount / static_cast<double>(config.covered_sections());

  const int filler_lo = config.reserved_tokens();
  const int filler_span = config.vocab_size - filler_lo;

  corpus.studies.reserve(static_cast<std::size_t>(config.n_studies));
  for (int i = 0; i < config.n_studies; ++i) {
    Rng rng = root.stream(kStreamStudyBase + static_cast<std::uint64_t>(i));
    Study study;
    study.study_id = i;
    study.patient_id = patient_of[static_cast<std::size_t>(i)];

    Eigen::VectorXd indicator = Eigen::VectorXd::Zero(config.n_findings);

    for (int s = 0; s < kSectionCount; ++s) {
      auto& section = study.sections[static_cast<std::size_t>(s)];
      section.section_index = s;
      const auto& pool = candidates[static_cast<std::size_t>(s)];
      const bool abnormal = !pool.empty() && rng.next_unit() < per_section_rate;
      if (abnormal) {
        section.is_abnormal = true;
        const int anchor = pool[static_cast<std::size_t>(
            rng.next_below(static_cast<std::int64_t>(pool.size())))];
        section.findings_present.push_back(anchor);
        for (int candidate : pool) {
          if (candidate != anchor && rng.next_unit() < kExtraFindingRate)
            section.findings_present.push_back(candidate);
        }
        std::sort(section.findings_present.begin(), section.findings_present.end());
        for (int f : section.findings_present) {
          indicator(f) = 1.0;
          const TokenSeq t = finding_template(f);
          section.text.insert(section.text.end(), t.begin(), t.end());
        }
      } else {
        const TokenSeq t = normal_template();
        section.text.insert(section.text.end(), t.begin(), t.end());
      }
      while (static_cast<int>(section.text.size()) < config.tokens_per_section)
        section.text.push_back(
            static_cast<std::int32_t>(filler_lo + rng.next_below(filler_span)));
      study.full_report.insert(study.full_report.end(), section.text.begin(),
                               section.text.end());
    }

    study.image_features = mixing * indicator;
    if (config.noise_sigma > 0.0) {
      for (int d = 0; d < config.d_img; ++d)
        study.image_features(d) += config.noise_sigma * rng.next_gaussian();
    }

    corpus.studies.push_back(std::move(study));
  }

  return corpus;
}

CaseLabel derive_case_label(const Study& study, CaseLabelMode mode) {
  int abnormal = 0;
  for (const auto& section : study.sections) abnormal += section.is_abnormal ? 1 : 0;
  if (mode == CaseLabelMode::kAnyAbnormal)
    return abnormal > 0 ? CaseLabel::kAbnormal : CaseLabel::kNormal;
  if (abnormal == kSectionCount) return CaseLabel::kAbnormal;
  if (abnormal == 0) return CaseLabel::kNormal;
  return CaseLabel::kExcluded;
}

std::map<std::string, std::vector<int>> split_patient_level(const Corpus& corpus,
                                                            SplitFractions fractions,
                                                            std::uint64_t seed) {
  const double total = fractions.train + fractions.val + fractions.test;
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1");
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0)
    throw std::invalid_argument("split fractions must be nonnegative");

  std::vector<int> patients;
  {
    std::set<int> unique;
    for (const auto& study : corpus.studies) unique.insert(study.patient_id);
    patients.assign(unique.begin(), unique.end());
  }

  const double fracs[3] = {fractions.train, fractions.val, fractions.test};
  int positive_splits = 0;
  for (double f : fracs) positive_splits += f > 0 ? 1 : 0;
  if (static_cast<int>(patients.size()) < positive_splits)
    throw std::invalid_argument("fewer patients than splits");

  const int n_patients = static_cast<int>(patients.size());
  int counts[3];
  for (int k = 0; k < 3; ++k) counts[k] = round_half_up(fracs[k] * n_patients);
  // Rounding drift lands on the largest split.
  int drift = n_patients - (counts[0] + counts[1] + counts[2]);
  if (drift != 0) {
    int largest = 0;
    for (int k = 1; k < 3; ++k)
      if (counts[k] > counts[largest]) largest = k;
    counts[largest] += drift;
  }

  Rng rng(seed);
  rng.shuffle(patients);

  std::unordered_map<int, int> split_of_patient;
  int cursor = 0;
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < counts[k]; ++j) split_of_patient[patients[static_cast<std::size_t>(cursor++)]] = k;

  const char* names[3] = {"train", "val", "test"};
  std::map<std::string, std::vector<int>> splits;
  for (const char* name : names) splits[name];
  for (const auto& study : corpus.studies)
    splits[names[split_of_patient.at(study.patient_id)]].push_back(study.study_id);
  return splits;
}

std::vector<int> stratified_subsample(const std::vector<LabeledId>& pool, double fraction,
                                      std::uint64_t seed) {
  if (pool.empty()) throw std::invalid_argument("stratified_subsample: empty pool");
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::invalid_argument("stratified_subsample: fraction must lie in (0, 1]");

  std::vector<int> normals;
  std::vector<int> abnormals;
  for (const auto& entry : pool) {
    if (entry.label == CaseLabel::kExcluded)
      throw std::invalid_argument("stratified_subsample: pool contains excluded studies");
    (entry.label == CaseLabel::kNormal ? normals : abnormals).push_back(entry.study_id);
  }

  Rng rng(seed);
  std::vector<int> result;
  auto take = [&](std::vector<int>& ids, std::uint64_t tag) {
    const int want = round_half_up(fraction * static_cast<double>(ids.size()));
    Rng stream = rng.stream(tag);
    stream.shuffle(ids);
    result.insert(result.end(), ids.begin(), ids.begin() + want);
  };
  take(normals, 0);
  take(abnormals, 1);
  std::sort(result.begin(), result.end());
  return result;
}

namespace {

json corpus_to_json(const Corpus& corpus) {
  json root;
  root["version"] = corpus.format_version;
  const auto& c = corpus.config;
  root["config"] = {{"n_studies", c.n_studies},
                    {"n_findings", c.n_findings},
                    {"d_img", c.d_img},
                    {"vocab_size", c.vocab_size},
                    {"tokens_per_section", c.tokens_per_section},
                    {"abnormal_section_rate", c.abnormal_section_rate},
                    {"noise_sigma", c.noise_sigma},
                    {"seed", c.seed},
                    {"max_studies_per_patient", c.max_studies_per_patient}};
  json findings = json::array();
  for (const auto& f : corpus.findings)
    findings.push_back({{"id", f.id}, {"name", f.name}, {"section", f.section_index}});
  root["findings"] = std::move(findings);

  json studies = json::array();
  for (const auto& study : corpus.studies) {
    json sections = json::array();
    for (const auto& section : study.sections) {
      sections.push_back({{"abnormal", section.is_abnormal},
                          {"findings", section.findings_present},
                          {"text", section.text}});
    }
    std::vector<double> features(study.image_features.data(),
                                 study.image_features.data() + study.image_features.size());
    studies.push_back({{"study_id", study.study_id},
                       {"patient_id", study.patient_id},
                       {"image_features", std::move(features)},
                       {"sections", std::move(sections)}});
  }
  root["studies"] = std::move(studies);
  root["splits"] = corpus.splits;
  return root;
}

Corpus corpus_from_json(const json& root, const std::string& origin) {
  auto fail = [&](const std::string& what) -> void {
    throw std::runtime_error("invalid corpus file " + origin + ": " + what);
  };

  if (!root.is_object()) fail("top level is not an object");
  if (!root.contains("version")) fail("missing 'version'");
  const int version = root.at("version").get<int>();
  if (version != 1) fail("unsupported format version " + std::to_string(version));
  for (const char* key : {"config", "findings", "studies", "splits"})
    if (!root.contains(key)) fail(std::string("missing '") + key + "'");

  Corpus corpus;
  corpus.format_version = version;
  const auto& cfg = root.at("config");
  auto& c = corpus.config;
  c.n_studies = cfg.at("n_studies").get<int>();
  c.n_findings = cfg.at("n_findings").get<int>();
  c.d_img = cfg.at("d_img").get<int>();
  c.vocab_size = cfg.at("vocab_size").get<int>();
  c.tokens_per_section = cfg.at("tokens_per_section").get<int>();
  c.abnormal_section_rate = cfg.at("abnormal_section_rate").get<double>();
  c.noise_sigma = cfg.at("noise_sigma").get<double>();
  c.seed = cfg.at("seed").get<std::uint64_t>();
  c.max_studies_per_patient = cfg.at("max_studies_per_patient").get<int>();

  for (const auto& f : root.at("findings")) {
    corpus.findings.push_back(
        {f.at("id").get<int>(), f.at("name").get<std::string>(), f.at("section").get<int>()});
  }

  std::unordered_set<int> seen_ids;
  for (const auto& record : root.at("studies")) {
    Study study;
    study.study_id = record.at("study_id").get<int>();
    study.patient_id = record.at("patient_id").get<int>();
    if (!seen_ids.insert(study.study_id).second)
      fail("duplicate study id " + std::to_string(study.study_id));
    const auto features = record.at("image_features").get<std::vector<double>>();
    study.image_features =
        Eigen::Map<const Eigen::VectorXd>(features.data(), static_cast<Eigen::Index>(features.size()));
    const auto& sections = record.at("sections");
    if (sections.size() != kSectionCount)
      fail("study " + std::to_string(study.study_id) + " does not have 12 sections");
    for (int s = 0; s < kSectionCount; ++s) {
      auto& section = study.sections[static_cast<std::size_t>(s)];
      const auto& node = sections.at(static_cast<std::size_t>(s));
      section.section_index = s;
      section.is_abnormal = node.at("abnormal").get<bool>();
      section.findings_present = node.at("findings").get<std::vector<int>>();
      section.text = node.at("text").get<TokenSeq>();
      if (section.is_abnormal != !section.findings_present.empty())
        fail("study " + std::to_string(study.study_id) +
             " violates abnormal <=> findings-present in section " + std::to_string(s));
      study.full_report.insert(study.full_report.end(), section.text.begin(),
                               section.text.end());
    }
    corpus.studies.push_back(std::move(study));
  }
  std::sort(corpus.studies.begin(), corpus.studies.end(),
            [](const Study& a, const Study& b) { return a.study_id < b.study_id; });

  for (const auto& [name, ids] : root.at("splits").items())
    corpus.splits[name] = ids.get<std::vector<int>>();
  try {
    validate_splits(corpus, corpus.splits);
  } catch (const std::exception& e) {
    fail(e.what());
  }
  return corpus;
}

}  // namespace

void validate_splits(const Corpus& corpus,
                     const std::map<std::string, std::vector<int>>& splits) {
  std::unordered_map<int, int> patient_split;
  int split_index = 0;
  for (const auto& [name, ids] : splits) {
    for (int id : ids) {
      const Study* study = nullptr;
      try {
        study = &corpus.study_by_id(id);
      } catch (const std::out_of_range&) {
        throw std::invalid_argument("split '" + name + "' references unknown study " +
                                    std::to_string(id));
      }
      auto [it, inserted] = patient_split.emplace(study->patient_id, split_index);
      if (!inserted && it->second != split_index)
        throw std::invalid_argument("patient " + std::to_string(study->patient_id) +
                                    " spans two splits");
    }
    ++split_index;
  }
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  write_file(path, corpus_to_json(corpus).dump());
}

Corpus load_corpus(const std::string& path) {
  const std::string text = read_file(path);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw std::runtime_error("empty corpus file: " + path);
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, column] = line_column_at(text, e.byte > 0 ? e.byte - 1 : 0);
    throw std::runtime_error("corpus parse error in " + path + " at byte " +
                             std::to_string(e.byte) + " (line " + std::to_string(line) +
                             ", column " + std::to_string(column) + "): " + e.what());
  }
  return corpus_from_json(root, path);
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats stats;
  stats.n_studies = static_cast<int>(corpus.studies.size());
  std::set<int> patients;
  for (const auto& study : corpus.studies) {
    patients.insert(study.patient_id);
    for (const auto& section : study.sections) {
      ++stats.total_sections;
      stats.abnormal_sections += section.is_abnormal ? 1 : 0;
    }
    if (derive_case_label(study, CaseLabelMode::kAnyAbnormal) == CaseLabel::kAbnormal)
      ++stats.any_abnormal;
    switch (derive_case_label(study, CaseLabelMode::kAllAbnormal)) {
      case CaseLabel::kAbnormal: ++stats.all_abnormal; break;
      case CaseLabel::kExcluded: ++stats.all_excluded; break;
      default: break;
    }
  }
  stats.n_patients = static_cast<int>(patients.size());
  for (const auto& [name, ids] : corpus.splits)
    stats.split_sizes[name] = static_cast<int>(ids.size());
  return stats;
}

std::string format_corpus_stats(const CorpusStats& stats) {
  std::ostringstream out;
  out << "studies: " << stats.n_studies << "\n";
  out << "patients: " << stats.n_patients << "\n";
  const double section_rate =
      stats.total_sections > 0
          ? static_cast<double>(stats.abnormal_sections) / stats.total_sections
          : 0.0;
  out << "abnormal sections: " << stats.abnormal_sections << " / " << stats.total_sections
      << " (" << format_fixed(100.0 * section_rate, 2) << "%)\n";
  out << "case labels (any_abnormal): " << stats.any_abnormal << " abnormal, "
      << (stats.n_studies - stats.any_abnormal) << " normal\n";
  out << "case labels (all_abnormal): " << stats.all_abnormal << " abnormal, "
      << (stats.n_studies - stats.all_abnormal - stats.all_excluded) << " normal, "
      << stats.all_excluded << " excluded\n";
  for (const auto& [name, size] : stats.split_sizes)
    out << "split " << name << ": " << size << "\n";
  return out.str();
}

}  // namespace contrastlab
