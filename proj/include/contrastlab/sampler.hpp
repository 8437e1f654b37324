#pragma once

// Batch planning: the alternating full-report/section framing schedule,
// shuffled baseline batching, and the two ratio-enforcing samplers
// (section-level and case-level).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "contrastlab/corpus.hpp"

namespace contrastlab {

struct Framing {
  enum class Kind { kFullReport, kSection };

  Kind kind = Kind::kFullReport;
  int section_index = -1;  // valid iff kind == kSection

  static Framing full_report() { return {Kind::kFullReport, -1}; }
  static Framing section(int index);

  bool operator==(const Framing&) const = default;
  std::string to_string() const;
};

// Even steps pair images with the full report; odd steps cycle the 12
// sections in order, continuously across epochs.
Framing framing_for_step(std::int64_t global_step);

struct RatioSpec {
  int normal_per_batch = 0;
  int abnormal_per_batch = 0;

  int batch_size() const { return normal_per_batch + abnormal_per_batch; }
};

RatioSpec ratio_from_percent(int normal_percent, int batch_size);

struct Batch {
  std::vector<int> study_ids;
  Framing framing;
};

struct BatchPlan {
  std::vector<Batch> batches;
  int batch_size = 0;
  int epoch_index = 0;
  std::int64_t step_offset = 0;
};

enum class SamplerKind { kShuffled, kSectionBalanced, kCaseBalanced };

const char* to_string(SamplerKind kind);
SamplerKind sampler_kind_from_string(const std::string& name);

// Per-study labels the balanced samplers work against.
struct StudyLabelView {
  int study_id = 0;
  std::array<bool, kSectionCount> section_abnormal{};
  bool case_abnormal = false;  // AnyAbnormal aggregate, used on full-report steps
};

std::vector<StudyLabelView> make_label_view(const Corpus& corpus, const std::vector<int>& ids);

struct CaseLabeledId {
  int study_id = 0;
  bool abnormal = false;
};

// One epoch = a seeded permutation chunked into floor(n / batch_size) full
// batches; the trailing remainder is dropped.
BatchPlan shuffled_batches(const std::vector<int>& ids, int batch_size, std::uint64_t seed,
                           int epoch, std::int64_t step_offset = 0);

// Every batch carries exactly the requested normal/abnormal counts with
// respect to its framing label: the current section's label on section steps,
// the case-level (AnyAbnormal) label on full-report steps.
BatchPlan section_balanced_batches(const std::vector<StudyLabelView>& view, RatioSpec ratio,
                                   int batch_size, std::uint64_t seed, int epoch,
                                   std::int64_t step_offset);

// Case-level ratio enforcement regardless of framing; epoch length is the
// number of batches both pools can fill without replacement.
BatchPlan case_balanced_batches(const std::vector<CaseLabeledId>& ids, RatioSpec ratio,
                                int batch_size, std::uint64_t seed, int epoch,
                                std::int64_t step_offset);

void dump_plan_json(const BatchPlan& plan, const std::string& path);

}  // namespace contrastlab
