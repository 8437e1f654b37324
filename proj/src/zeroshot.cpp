#include "contrastlab/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "contrastlab/io.hpp"
#include "contrastlab/rng.hpp"

namespace contrastlab {

std::vector<PromptSet> build_prompt_sets(const Corpus& corpus, const PromptConfig& config) {
  if (config.prompts_per_side < 1)
    throw std::invalid_argument("prompts_per_side must be positive");
  if (config.filler_tokens_per_prompt < 0)
    throw std::invalid_argument("filler_tokens_per_prompt must be nonnegative");

  const int filler_lo = corpus.config.reserved_tokens();
  const int filler_span = corpus.config.vocab_size - filler_lo;
  const Rng root(config.seed);

  std::vector<PromptSet> sets;
  sets.reserve(corpus.findings.size());
  for (const auto& finding : corpus.findings) {
    Rng rng = root.stream(static_cast<std::uint64_t>(finding.id));
    PromptSet set;
    set.finding_id = finding.id;
    auto make_prompts = [&](const TokenSeq& core) {
      std::vector<TokenSeq> prompts;
      for (int k = 0; k < config.prompts_per_side; ++k) {
        TokenSeq prompt = core;
        for (int j = 0; j < config.filler_tokens_per_prompt; ++j)
          prompt.push_back(static_cast<std::int32_t>(filler_lo + rng.next_below(filler_span)));
        prompts.push_back(std::move(prompt));
      }
      return prompts;
    };
    set.positive_prompts = make_prompts(finding_template(finding.id));
    set.negative_prompts = make_prompts(normal_template());
    sets.push_back(std::move(set));
  }
  return sets;
}

std::optional<std::vector<int>> build_balanced_eval_set(const std::vector<FindingTruth>& truth,
                                                        std::uint64_t seed) {
  std::vector<int> positives;
  std::vector<int> negatives;
  for (const auto& entry : truth)
    (entry.positive ? positives : negatives).push_back(entry.study_id);
  if (positives.empty() || negatives.empty()) return std::nullopt;

  const std::size_t keep = std::min(positives.size(), negatives.size());
  Rng rng(seed);
  Rng pos_rng = rng.stream(0);
  Rng neg_rng = rng.stream(1);
  pos_rng.shuffle(positives);
  neg_rng.shuffle(negatives);
  std::vector<int> ids;
  ids.insert(ids.end(), positives.begin(), positives.begin() + static_cast<std::ptrdiff_t>(keep));
  ids.insert(ids.end(), negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

std::vector<Eigen::VectorXd> embed_prompts(const EncoderParams& params,
                                           const std::vector<TokenSeq>& prompts) {
  std::vector<Eigen::VectorXd> embeddings;
  embeddings.reserve(prompts.size());
  for (const auto& prompt : prompts) embeddings.push_back(encode_text(params, prompt));
  return embeddings;
}

double mean_cosine(const Eigen::VectorXd& image_emb,
                   const std::vector<Eigen::VectorXd>& prompt_embs) {
  double sum = 0.0;
  for (const auto& emb : prompt_embs) sum += image_emb.dot(emb);
  return sum / static_cast<double>(prompt_embs.size());
}

}  // namespace

bool classify_finding(const Eigen::VectorXd& image_emb, const PromptSet& prompts,
                      const EncoderParams& params) {
  if (prompts.positive_prompts.empty() || prompts.negative_prompts.empty())
    throw std::invalid_argument("classify_finding: prompt lists must be non-empty");
  const double positive = mean_cosine(image_emb, embed_prompts(params, prompts.positive_prompts));
  const double negative = mean_cosine(image_emb, embed_prompts(params, prompts.negative_prompts));
  return positive > negative;  // ties are negative
}

double f1_score(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw std::invalid_argument("f1_score: negative count");
  const std::int64_t denominator = 2 * tp + fp + fn;
  if (denominator == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denominator);
}

ZeroShotReport evaluate_all_findings(const EncoderParams& params, const Corpus& corpus,
                                     const PromptConfig& prompt_config, std::uint64_t seed,
                                     const std::string& split) {
  const std::vector<int>& test_ids = corpus.split_ids(split);
  if (test_ids.empty()) throw std::invalid_argument("evaluate_all_findings: empty split");

  const std::vector<PromptSet> prompt_sets = build_prompt_sets(corpus, prompt_config);

  // Image embeddings once, reused across findings. The vision tower does not
  // depend on framing; full-report framing keeps the cache layout uniform.
  std::vector<const Study*> studies;
  studies.reserve(test_ids.size());
  for (int id : test_ids) studies.push_back(&corpus.study_by_id(id));
  const EmbeddingBatch embedded = encode_batch(params, studies, Framing::full_report());

  // Index into the shared embedding order.
  std::unordered_map<int, std::size_t> position;
  for (std::size_t i = 0; i < test_ids.size(); ++i) position[test_ids[i]] = i;

  // Prompt predictions per finding, then confusion counts on the balanced set.
  const Rng root(seed);
  ZeroShotReport report;
  double f1_sum = 0.0;
  for (std::size_t set_index = 0; set_index < prompt_sets.size(); ++set_index) {
    const auto& prompts = prompt_sets[set_index];
    const auto& finding = corpus.findings[set_index];
    FindingEvalResult result;
    result.finding_id = finding.id;
    result.finding_name = finding.name;

    std::vector<FindingTruth> truth;
    truth.reserve(test_ids.size());
    for (std::size_t i = 0; i < test_ids.size(); ++i)
      truth.push_back({test_ids[i], studies[i]->has_finding(finding.id)});

    const auto eval_ids = build_balanced_eval_set(
        truth, root.stream(static_cast<std::uint64_t>(finding.id)).seed());
    if (!eval_ids) {
      result.evaluable = false;
      report.findings.push_back(std::move(result));
      continue;
    }
    result.evaluable = true;
    result.eval_ids = *eval_ids;

    // Prompt embeddings once per finding; the per-study decision then matches
    // classify_finding's arithmetic exactly.
    const auto pos_embs = embed_prompts(params, prompts.positive_prompts);
    const auto neg_embs = embed_prompts(params, prompts.negative_prompts);

    for (int id : result.eval_ids) {
      const std::size_t i = position.at(id);
      const Eigen::VectorXd image =
          embedded.image_emb.row(static_cast<Eigen::Index>(i)).transpose();
      const bool actual = truth[i].positive;
      const bool predicted = mean_cosine(image, pos_embs) > mean_cosine(image, neg_embs);
      if (actual && predicted) ++result.tp;
      else if (!actual && predicted) ++result.fp;
      else if (actual && !predicted) ++result.fn;
      else ++result.tn;
    }
    result.f1 = f1_score(result.tp, result.fp, result.fn);
    f1_sum += result.f1;
    ++report.evaluable_count;
    report.findings.push_back(std::move(result));
  }

  if (report.evaluable_count == 0)
    throw std::runtime_error("evaluate_all_findings: no evaluable findings in split '" + split +
                             "'");
  report.macro_f1_percent = 100.0 * f1_sum / static_cast<double>(report.evaluable_count);
  return report;
}

void write_zeroshot_csv(const ZeroShotReport& report, const std::string& path) {
  std::ostringstream out;
  out << "finding,tp,fp,tn,fn,f1\n";
  for (const auto& result : report.findings) {
    out << result.finding_name << ',' << result.tp << ',' << result.fp << ',' << result.tn << ','
        << result.fn << ',';
    if (result.evaluable)
      out << format_double(result.f1);
    else
      out << "nan";
    out << '\n';
  }
  out << "macro_f1=" << format_fixed(report.macro_f1_percent, 2) << '\n';
  write_file(path, out.str());
}

ZeroShotReport read_zeroshot_csv(const std::string& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "finding,tp,fp,tn,fn,f1")
    throw std::runtime_error("unexpected zeroshot csv header in " + path);
  ZeroShotReport report;
  int next_id = 0;
  while (std::getline(in, line)) {
    if (line.rfind("macro_f1=", 0) == 0) {
      report.macro_f1_percent = std::stod(line.substr(9));
      continue;
    }
    if (line.empty()) continue;
    std::istringstream fields(line);
    FindingEvalResult result;
    std::string cell;
    std::getline(fields, result.finding_name, ',');
    std::getline(fields, cell, ',');
    result.tp = std::stoll(cell);
    std::getline(fields, cell, ',');
    result.fp = std::stoll(cell);
    std::getline(fields, cell, ',');
    result.tn = std::stoll(cell);
    std::getline(fields, cell, ',');
    result.fn = std::stoll(cell);
    std::getline(fields, cell, ',');
    result.evaluable = cell != "nan";
    result.f1 = result.evaluable ? std::stod(cell) : 0.0;
    result.finding_id = next_id++;
    if (result.evaluable) ++report.evaluable_count;
    report.findings.push_back(std::move(result));
  }
  return report;
}

}  // namespace contrastlab
