#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include <Eigen/Dense>

#include "contrastlab/corpus.hpp"
#include "contrastlab/io.hpp"
#include "contrastlab/rng.hpp"

using namespace contrastlab;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("contrastlab_test_" + name)).string();
}

SyntheticConfig small_config() {
  SyntheticConfig config;
  config.n_studies = 60;
  config.n_findings = 8;
  config.d_img = 8;
  config.vocab_size = 48;
  config.tokens_per_section = 8;
  config.abnormal_section_rate = 0.15;
  config.noise_sigma = 0.05;
  config.seed = 7;
  return config;
}

}  // namespace

TEST_CASE("generator is deterministic per seed, byte for byte") {
  const Corpus a = generate_synthetic_corpus(small_config());
  const Corpus b = generate_synthetic_corpus(small_config());
  const std::string pa = temp_path("det_a.json");
  const std::string pb = temp_path("det_b.json");
  save_corpus(a, pa);
  save_corpus(b, pb);
  CHECK(read_file(pa) == read_file(pb));
  fs::remove(pa);
  fs::remove(pb);
}

TEST_CASE("zero abnormal rate produces an all-normal corpus") {
  SyntheticConfig config = small_config();
  config.abnormal_section_rate = 0.0;
  const Corpus corpus = generate_synthetic_corpus(config);
  for (const auto& study : corpus.studies) {
    for (const auto& section : study.sections) {
      CHECK_FALSE(section.is_abnormal);
      CHECK(section.findings_present.empty());
    }
    CHECK(derive_case_label(study, CaseLabelMode::kAnyAbnormal) == CaseLabel::kNormal);
    CHECK(derive_case_label(study, CaseLabelMode::kAllAbnormal) == CaseLabel::kNormal);
  }
}

TEST_CASE("empirical abnormal-section fraction tracks the configured rate") {
  SyntheticConfig config;
  config.n_studies = 500;
  config.n_findings = 8;
  config.abnormal_section_rate = 0.15;
  config.seed = 7;
  const Corpus corpus = generate_synthetic_corpus(config);
  int abnormal = 0;
  int total = 0;
  for (const auto& study : corpus.studies)
    for (const auto& section : study.sections) {
      ++total;
      abnormal += section.is_abnormal ? 1 : 0;
    }
  const double fraction = static_cast<double>(abnormal) / total;
  CHECK(std::abs(fraction - 0.15) <= 0.02);
}

TEST_CASE("invalid configs are rejected") {
  SyntheticConfig config = small_config();
  config.n_findings = 0;
  CHECK_THROWS_AS(generate_synthetic_corpus(config), std::invalid_argument);

  config = small_config();
  config.vocab_size = config.reserved_tokens();  // no filler room
  CHECK_THROWS_AS(generate_synthetic_corpus(config), std::invalid_argument);

  config = small_config();
  config.abnormal_section_rate = 1.5;
  CHECK_THROWS_AS(generate_synthetic_corpus(config), std::invalid_argument);

  // 2 findings cover 2 sections: a 0.5 marginal rate would need a
  // per-section rate of 3.
  config = small_config();
  config.n_findings = 2;
  config.vocab_size = 16;
  config.abnormal_section_rate = 0.5;
  CHECK_THROWS_AS(generate_synthetic_corpus(config), std::invalid_argument);
}

TEST_CASE("full report is the in-order concatenation of section texts") {
  const Corpus corpus = generate_synthetic_corpus(small_config());
  for (const auto& study : corpus.studies) {
    TokenSeq expected;
    for (const auto& section : study.sections)
      expected.insert(expected.end(), section.text.begin(), section.text.end());
    CHECK(study.full_report == expected);
  }
}

TEST_CASE("case labels follow the mode semantics") {
  Study study;
  for (int s = 0; s < kSectionCount; ++s) study.sections[s].section_index = s;

  CHECK(derive_case_label(study, CaseLabelMode::kAnyAbnormal) == CaseLabel::kNormal);
  CHECK(derive_case_label(study, CaseLabelMode::kAllAbnormal) == CaseLabel::kNormal);

  study.sections[3].is_abnormal = true;
  study.sections[3].findings_present = {3};
  CHECK(derive_case_label(study, CaseLabelMode::kAnyAbnormal) == CaseLabel::kAbnormal);
  CHECK(derive_case_label(study, CaseLabelMode::kAllAbnormal) == CaseLabel::kExcluded);

  for (int s = 0; s < kSectionCount; ++s) {
    study.sections[s].is_abnormal = true;
    study.sections[s].findings_present = {s % 8};
  }
  CHECK(derive_case_label(study, CaseLabelMode::kAllAbnormal) == CaseLabel::kAbnormal);
}

TEST_CASE("patient-level split: exact divisibility and determinism") {
  SyntheticConfig config = small_config();
  config.n_studies = 100;
  config.max_studies_per_patient = 1;  // 100 patients
  const Corpus corpus = generate_synthetic_corpus(config);

  const auto splits = split_patient_level(corpus, {0.6, 0.2, 0.2}, 5);
  CHECK(splits.at("train").size() == 60);
  CHECK(splits.at("val").size() == 20);
  CHECK(splits.at("test").size() == 20);

  const auto again = split_patient_level(corpus, {0.6, 0.2, 0.2}, 5);
  CHECK(splits == again);
  const auto different = split_patient_level(corpus, {0.6, 0.2, 0.2}, 6);
  CHECK(splits != different);
}

TEST_CASE("patient-level split keeps every patient in one split") {
  SyntheticConfig config = small_config();
  config.n_studies = 90;
  config.max_studies_per_patient = 3;
  const Corpus corpus = generate_synthetic_corpus(config);

  // Property over seeds: a patient never spans two splits.
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto splits = split_patient_level(corpus, {0.5, 0.25, 0.25}, seed);
    std::map<int, std::string> split_of_patient;
    std::set<int> seen_ids;
    for (const auto& [name, ids] : splits) {
      for (int id : ids) {
        CHECK(seen_ids.insert(id).second);
        const int patient = corpus.study_by_id(id).patient_id;
        const auto [it, inserted] = split_of_patient.emplace(patient, name);
        if (!inserted) CHECK(it->second == name);
      }
    }
    CHECK(seen_ids.size() == corpus.studies.size());
  }

  // At least one multi-study patient exists and stays together.
  std::map<int, int> patient_counts;
  for (const auto& study : corpus.studies) ++patient_counts[study.patient_id];
  int multi = 0;
  for (const auto& [patient, count] : patient_counts) multi += count >= 3 ? 1 : 0;
  CHECK(multi > 0);
}

TEST_CASE("patient-level split rejects degenerate inputs") {
  SyntheticConfig config = small_config();
  config.n_studies = 2;
  config.max_studies_per_patient = 1;
  const Corpus corpus = generate_synthetic_corpus(config);
  CHECK_THROWS_AS(split_patient_level(corpus, {0.5, 0.3, 0.2}, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_patient_level(corpus, {0.5, 0.2, 0.2}, 1), std::invalid_argument);
}

TEST_CASE("stratified subsample: reference pool sizes land exactly") {
  // 3,489-study pool at the NAB class balance (45.5% normal).
  std::vector<LabeledId> pool;
  for (int i = 0; i < 1587; ++i) pool.push_back({i, CaseLabel::kNormal});
  for (int i = 1587; i < 3489; ++i) pool.push_back({i, CaseLabel::kAbnormal});

  const auto at_40 = stratified_subsample(pool, 0.4, 3);
  const auto at_20 = stratified_subsample(pool, 0.2, 3);
  CHECK(at_40.size() == 1396);
  CHECK(at_20.size() == 697);

  // Class-ratio drift at most one study.
  auto normal_count = [&](const std::vector<int>& ids) {
    int count = 0;
    for (int id : ids) count += id < 1587 ? 1 : 0;
    return count;
  };
  CHECK(std::abs(normal_count(at_40) - 0.4 * 1587) <= 1.0);
  CHECK(std::abs(normal_count(at_20) - 0.2 * 1587) <= 1.0);
}

TEST_CASE("stratified subsample: fraction one returns the whole pool") {
  std::vector<LabeledId> pool;
  for (int i = 0; i < 25; ++i)
    pool.push_back({i, i % 3 == 0 ? CaseLabel::kNormal : CaseLabel::kAbnormal});
  const auto ids = stratified_subsample(pool, 1.0, 9);
  CHECK(ids.size() == 25);
  std::set<int> unique(ids.begin(), ids.end());
  CHECK(unique.size() == 25);
}

TEST_CASE("stratified subsample: ratio preservation property") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<LabeledId> pool;
    const int n = 50 + static_cast<int>(rng.next_below(400));
    int normals = 0;
    for (int i = 0; i < n; ++i) {
      const bool normal = rng.next_unit() < 0.35;
      normals += normal ? 1 : 0;
      pool.push_back({i, normal ? CaseLabel::kNormal : CaseLabel::kAbnormal});
    }
    if (normals == 0 || normals == n) continue;
    const double fraction = 0.1 + 0.8 * rng.next_unit();
    const auto ids = stratified_subsample(pool, fraction, rng.next_u64());
    if (ids.empty()) continue;
    int sub_normals = 0;
    for (int id : ids) sub_normals += pool[static_cast<std::size_t>(id)].label == CaseLabel::kNormal ? 1 : 0;
    const double drift = std::abs(static_cast<double>(sub_normals) / ids.size() -
                                  static_cast<double>(normals) / n);
    CHECK(drift <= 1.0 / static_cast<double>(ids.size()) + 1e-12);
  }
}

TEST_CASE("stratified subsample rejects an empty pool") {
  CHECK_THROWS_AS(stratified_subsample({}, 0.5, 1), std::invalid_argument);
}

TEST_CASE("with zero noise the features are an exact linear map of the indicator") {
  SyntheticConfig config;
  config.n_studies = 80;
  config.n_findings = 4;
  config.d_img = 6;
  config.vocab_size = 32;
  config.noise_sigma = 0.0;
  config.abnormal_section_rate = 0.3;
  config.seed = 19;
  const Corpus corpus = generate_synthetic_corpus(config);

  // Solve for the mixing matrix by least squares and check the residual.
  Eigen::MatrixXd indicators(config.n_studies, config.n_findings);
  Eigen::MatrixXd features(config.n_studies, config.d_img);
  for (int i = 0; i < config.n_studies; ++i) {
    const Study& study = corpus.studies[static_cast<std::size_t>(i)];
    for (int f = 0; f < config.n_findings; ++f)
      indicators(i, f) = study.has_finding(f) ? 1.0 : 0.0;
    features.row(i) = study.image_features.transpose();
  }
  REQUIRE(Eigen::FullPivLU<Eigen::MatrixXd>(indicators).rank() == config.n_findings);
  const Eigen::MatrixXd mixing =
      indicators.colPivHouseholderQr().solve(features);  // n_findings x d_img
  const double residual = (indicators * mixing - features).cwiseAbs().maxCoeff();
  CHECK(residual < 1e-9);
}

TEST_CASE("corpus JSON round trip is bit-exact") {
  SyntheticConfig config = small_config();
  Corpus corpus = generate_synthetic_corpus(config);
  corpus.splits = split_patient_level(corpus, {0.6, 0.2, 0.2}, 2);

  const std::string p1 = temp_path("rt1.json");
  const std::string p2 = temp_path("rt2.json");
  save_corpus(corpus, p1);
  const Corpus loaded = load_corpus(p1);
  save_corpus(loaded, p2);
  CHECK(read_file(p1) == read_file(p2));

  CHECK(loaded.studies.size() == corpus.studies.size());
  CHECK(loaded.splits == corpus.splits);
  CHECK(loaded.config.seed == corpus.config.seed);
  for (std::size_t i = 0; i < corpus.studies.size(); ++i) {
    CHECK(loaded.studies[i].full_report == corpus.studies[i].full_report);
    CHECK((loaded.studies[i].image_features - corpus.studies[i].image_features)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("corpus loader: structured errors for bad files") {
  const std::string path = temp_path("bad.json");

  SUBCASE("empty file") {
    write_file(path, "  \n");
    CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("empty corpus file"),
                         std::runtime_error);
  }

  SUBCASE("truncated file reports the byte offset") {
    Corpus corpus = generate_synthetic_corpus(small_config());
    const std::string full = temp_path("full.json");
    save_corpus(corpus, full);
    const std::string text = read_file(full);
    write_file(path, text.substr(0, text.size() / 2));
    try {
      load_corpus(path);
      FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("byte") != std::string::npos);
      CHECK(std::string(e.what()).find("line") != std::string::npos);
    }
    fs::remove(full);
  }

  SUBCASE("wrong version") {
    write_file(path, R"({"version": 99, "config": {}, "findings": [], "studies": [], "splits": {}})");
    CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("version"), std::runtime_error);
  }

  fs::remove(path);
}

TEST_CASE("corpus stats summarize labels and sections") {
  const Corpus corpus = generate_synthetic_corpus(small_config());
  const CorpusStats stats = corpus_stats(corpus);
  CHECK(stats.n_studies == 60);
  CHECK(stats.total_sections == 60 * kSectionCount);
  int any = 0;
  for (const auto& study : corpus.studies)
    any += derive_case_label(study, CaseLabelMode::kAnyAbnormal) == CaseLabel::kAbnormal ? 1 : 0;
  CHECK(stats.any_abnormal == any);
  const std::string text = format_corpus_stats(stats);
  CHECK(text.find("studies: 60") != std::string::npos);
}
