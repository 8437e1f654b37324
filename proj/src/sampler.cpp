#include "contrastlab/sampler.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

#include "contrastlab/io.hpp"
#include "contrastlab/rng.hpp"

namespace contrastlab {

Framing Framing::section(int index) {
  if (index < 0 || index >= kSectionCount)
    throw std::invalid_argument("section index out of range: " + std::to_string(index));
  return {Kind::kSection, index};
}

std::string Framing::to_string() const {
  if (kind == Kind::kFullReport) return "full_report";
  return "section:" + std::to_string(section_index);
}

Framing framing_for_step(std::int64_t global_step) {
  if (global_step < 0) throw std::invalid_argument("global_step must be nonnegative");
  if (global_step % 2 == 0) return Framing::full_report();
  return Framing::section(static_cast<int>(((global_step - 1) / 2) % kSectionCount));
}

RatioSpec ratio_from_percent(int normal_percent, int batch_size) {
  if (normal_percent < 0 || normal_percent > 100)
    throw std::invalid_argument("normal_percent must lie in [0, 100]");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  const int normal = (normal_percent * batch_size + 50) / 100;  // round half up
  return {normal, batch_size - normal};
}

const char* to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::kShuffled: return "Shuffled";
    case SamplerKind::kSectionBalanced: return "SectionBalanced";
    default: return "NABBatchSampler";
  }
}

SamplerKind sampler_kind_from_string(const std::string& name) {
  if (name == "Shuffled") return SamplerKind::kShuffled;
  if (name == "SectionBalanced") return SamplerKind::kSectionBalanced;
  if (name == "NABBatchSampler" || name == "CaseBalanced") return SamplerKind::kCaseBalanced;
  throw std::invalid_argument("unknown sampler kind: " + name);
}

std::vector<StudyLabelView> make_label_view(const Corpus& corpus, const std::vector<int>& ids) {
  std::vector<StudyLabelView> view;
  view.reserve(ids.size());
  for (int id : ids) {
    const Study& study = corpus.study_by_id(id);
    StudyLabelView row;
    row.study_id = id;
    bool any = false;
    for (int s = 0; s < kSectionCount; ++s) {
      row.section_abnormal[static_cast<std::size_t>(s)] =
          study.sections[static_cast<std::size_t>(s)].is_abnormal;
      any = any || row.section_abnormal[static_cast<std::size_t>(s)];
    }
    row.case_abnormal = any;
    view.push_back(row);
  }
  return view;
}

BatchPlan shuffled_batches(const std::vector<int>& ids, int batch_size, std::uint64_t seed,
                           int epoch, std::int64_t step_offset) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (static_cast<int>(ids.size()) < batch_size)
    throw std::invalid_argument("shuffled_batches: pool smaller than batch size (" +
                                std::to_string(ids.size()) + " < " +
                                std::to_string(batch_size) + ")");

  std::vector<int> order = ids;
  Rng rng = Rng(seed).stream(static_cast<std::uint64_t>(epoch));
  rng.shuffle(order);

  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.epoch_index = epoch;
  plan.step_offset = step_offset;
  const int n_batches = static_cast<int>(ids.size()) / batch_size;  // remainder dropped
  plan.batches.reserve(static_cast<std::size_t>(n_batches));
  for (int b = 0; b < n_batches; ++b) {
    Batch batch;
    batch.framing = framing_for_step(step_offset + b);
    batch.study_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(b) * batch_size,
                           order.begin() + static_cast<std::ptrdiff_t>(b + 1) * batch_size);
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

namespace {

// A label pool drawn without replacement while its seeded permutation lasts;
// minority pools switch to with-replacement draws once exhausted, majority
// pools reshuffle for another pass.
class LabelPool {
 public:
  LabelPool() = default;

  void init(std::vector<int> ids, bool is_minority, Rng rng) {
    ids_ = std::move(ids);
    minority_ = is_minority;
    rng_ = rng;
    permutation_ = ids_;
    rng_.shuffle(permutation_);
    cursor_ = 0;
  }

  bool empty() const { return ids_.empty(); }

  int draw() {
    if (exhausted_ && minority_) {
      return ids_[static_cast<std::size_t>(
          rng_.next_below(static_cast<std::int64_t>(ids_.size())))];
    }
    const int id = permutation_[cursor_++];
    if (cursor_ == permutation_.size()) {
      exhausted_ = true;
      if (!minority_) {
        rng_.shuffle(permutation_);
        cursor_ = 0;
      }
    }
    return id;
  }

 private:
  std::vector<int> ids_;
  std::vector<int> permutation_;
  std::size_t cursor_ = 0;
  bool minority_ = false;
  bool exhausted_ = false;
  Rng rng_{0};
};

// 13 framings: index 0 = full report, 1 + k = section k.
int framing_pool_index(const Framing& framing) {
  return framing.kind == Framing::Kind::kFullReport ? 0 : 1 + framing.section_index;
}

bool study_positive_for(const StudyLabelView& row, int pool_index) {
  return pool_index == 0 ? row.case_abnormal
                         : row.section_abnormal[static_cast<std::size_t>(pool_index - 1)];
}

std::string framing_pool_name(int pool_index) {
  return pool_index == 0 ? std::string("full-report")
                         : "section " + std::to_string(pool_index - 1);
}

}  // namespace

BatchPlan section_balanced_batches(const std::vector<StudyLabelView>& view, RatioSpec ratio,
                                   int batch_size, std::uint64_t seed, int epoch,
                                   std::int64_t step_offset) {
  if (ratio.batch_size() != batch_size)
    throw std::invalid_argument("ratio does not add up to the batch size");
  if (static_cast<int>(view.size()) < batch_size)
    throw std::invalid_argument("section_balanced_batches: pool smaller than batch size");

  const int n_batches = static_cast<int>(view.size()) / batch_size;

  // Partition ids by label for each of the 13 framings.
  std::array<std::vector<int>, kSectionCount + 1> normal_ids;
  std::array<std::vector<int>, kSectionCount + 1> abnormal_ids;
  for (const auto& row : view) {
    for (int p = 0; p <= kSectionCount; ++p)
      (study_positive_for(row, p) ? abnormal_ids : normal_ids)[static_cast<std::size_t>(p)]
          .push_back(row.study_id);
  }

  // Fail up front for any framing this plan will actually emit.
  for (int b = 0; b < n_batches; ++b) {
    const int p = framing_pool_index(framing_for_step(step_offset + b));
    if (ratio.normal_per_batch > 0 && normal_ids[static_cast<std::size_t>(p)].empty())
      throw std::runtime_error("unsatisfiable ratio: no normal studies for " +
                               framing_pool_name(p));
    if (ratio.abnormal_per_batch > 0 && abnormal_ids[static_cast<std::size_t>(p)].empty())
      throw std::runtime_error("unsatisfiable ratio: no abnormal studies for " +
                               framing_pool_name(p));
  }

  const Rng root = Rng(seed).stream(static_cast<std::uint64_t>(epoch));
  std::array<LabelPool, kSectionCount + 1> normal_pools;
  std::array<LabelPool, kSectionCount + 1> abnormal_pools;
  for (int p = 0; p <= kSectionCount; ++p) {
    const auto idx = static_cast<std::size_t>(p);
    const bool normal_minority = normal_ids[idx].size() < abnormal_ids[idx].size();
    const bool abnormal_minority = abnormal_ids[idx].size() < normal_ids[idx].size();
    normal_pools[idx].init(normal_ids[idx], normal_minority,
                           root.stream(2 * static_cast<std::uint64_t>(p)));
    abnormal_pools[idx].init(abnormal_ids[idx], abnormal_minority,
                             root.stream(2 * static_cast<std::uint64_t>(p) + 1));
  }

  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.epoch_index = epoch;
  plan.step_offset = step_offset;
  plan.batches.reserve(static_cast<std::size_t>(n_batches));
  for (int b = 0; b < n_batches; ++b) {
    Batch batch;
    batch.framing = framing_for_step(step_offset + b);
    const auto p = static_cast<std::size_t>(framing_pool_index(batch.framing));
    for (int k = 0; k < ratio.normal_per_batch; ++k)
      batch.study_ids.push_back(normal_pools[p].draw());
    for (int k = 0; k < ratio.abnormal_per_batch; ++k)
      batch.study_ids.push_back(abnormal_pools[p].draw());
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

BatchPlan case_balanced_batches(const std::vector<CaseLabeledId>& ids, RatioSpec ratio,
                                int batch_size, std::uint64_t seed, int epoch,
                                std::int64_t step_offset) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (ratio.batch_size() != batch_size)
    throw std::invalid_argument("ratio does not add up to the batch size");

  std::vector<int> normals;
  std::vector<int> abnormals;
  for (const auto& entry : ids) (entry.abnormal ? abnormals : normals).push_back(entry.study_id);

  if (ratio.normal_per_batch > 0 && normals.empty())
    throw std::runtime_error("unsatisfiable ratio: no normal studies at the case level");
  if (ratio.abnormal_per_batch > 0 && abnormals.empty())
    throw std::runtime_error("unsatisfiable ratio: no abnormal studies at the case level");

  // Both pools run without replacement; the epoch ends when either side
  // can no longer fill its quota.
  std::int64_t n_batches = -1;
  if (ratio.normal_per_batch > 0)
    n_batches = static_cast<std::int64_t>(normals.size()) / ratio.normal_per_batch;
  if (ratio.abnormal_per_batch > 0) {
    const auto limit = static_cast<std::int64_t>(abnormals.size()) / ratio.abnormal_per_batch;
    n_batches = n_batches < 0 ? limit : std::min(n_batches, limit);
  }
  if (n_batches < 0) n_batches = 0;

  const Rng root = Rng(seed).stream(static_cast<std::uint64_t>(epoch));
  Rng normal_rng = root.stream(0);
  Rng abnormal_rng = root.stream(1);
  normal_rng.shuffle(normals);
  abnormal_rng.shuffle(abnormals);

  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.epoch_index = epoch;
  plan.step_offset = step_offset;
  plan.batches.reserve(static_cast<std::size_t>(n_batches));
  std::size_t normal_cursor = 0;
  std::size_t abnormal_cursor = 0;
  for (std::int64_t b = 0; b < n_batches; ++b) {
    Batch batch;
    batch.framing = framing_for_step(step_offset + b);
    for (int k = 0; k < ratio.normal_per_batch; ++k)
      batch.study_ids.push_back(normals[normal_cursor++]);
    for (int k = 0; k < ratio.abnormal_per_batch; ++k)
      batch.study_ids.push_back(abnormals[abnormal_cursor++]);
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

void dump_plan_json(const BatchPlan& plan, const std::string& path) {
  nlohmann::json root;
  root["batch_size"] = plan.batch_size;
  root["epoch_index"] = plan.epoch_index;
  root["step_offset"] = plan.step_offset;
  nlohmann::json batches = nlohmann::json::array();
  for (const auto& batch : plan.batches)
    batches.push_back({{"framing", batch.framing.to_string()}, {"study_ids", batch.study_ids}});
  root["batches"] = std::move(batches);
  write_file(path, root.dump(2) + "\n");
}

}  // namespace contrastlab
