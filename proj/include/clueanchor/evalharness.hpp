#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clueanchor/backends.hpp"
#include "clueanchor/corpus.hpp"
#include "clueanchor/kre.hpp"
#include "clueanchor/prompting.hpp"
#include "clueanchor/reward.hpp"
#include "clueanchor/rng.hpp"

namespace clueanchor {

enum class EvalMode { InternalOnly, WithContext };

inline const char* to_string(EvalMode mode) {
  return mode == EvalMode::InternalOnly ? "internal_only" : "with_context";
}

enum class KnowledgeBucket { InternalKnowledge, HasAnswer, MissAnswer };

inline const char* to_string(KnowledgeBucket bucket) {
  switch (bucket) {
    case KnowledgeBucket::InternalKnowledge: return "internal_knowledge";
    case KnowledgeBucket::HasAnswer: return "has_answer";
    case KnowledgeBucket::MissAnswer: return "miss_answer";
  }
  return "?";
}

enum class NoiseMode { Substitute, Inject };

inline const char* to_string(NoiseMode mode) {
  return mode == NoiseMode::Substitute ? "substitute" : "inject";
}

inline NoiseMode noise_mode_from_string(const std::string& s) {
  if (s == "substitute") return NoiseMode::Substitute;
  if (s == "inject") return NoiseMode::Inject;
  throw std::invalid_argument("unknown noise mode: " + s);
}

struct NoiseSpec {
  NoiseMode mode = NoiseMode::Substitute;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  // The substitution grid in the source analyses stops at 0.8; beyond that
  // is legal here but flagged so the caller can warn.
  bool exceeds_reference_range() const {
    return mode == NoiseMode::Substitute && ratio > 0.8;
  }
};

// Swaps or appends noise passages deterministically. Substitute replaces
// round(ratio*k) positions chosen by seeded sampling, smallest position
// taking pool.passages[0] and so on; Inject appends round(ratio*k) pool
// passages after the untouched originals. The position sample grows by
// extension with the count, so raising the ratio never un-replaces a
// position a lower ratio replaced (the position-to-pool assignment may
// permute, the replaced set only grows).
inline QAInstance apply_noise(const QAInstance& instance, const NoiseSpec& spec,
                              const NoisePool& pool) {
  if (spec.ratio < 0.0 || spec.ratio > 1.0)
    throw std::invalid_argument("apply_noise: ratio must be in [0, 1]");
  const std::size_t k = instance.passages.size();
  const auto count = static_cast<std::size_t>(std::lround(spec.ratio * static_cast<double>(k)));
  if (count == 0) return instance;
  if (pool.passages.size() < count)
    throw std::runtime_error("apply_noise: noise pool has " +
                             std::to_string(pool.passages.size()) + " passages, need " +
                             std::to_string(count));

  QAInstance out = instance;
  if (spec.mode == NoiseMode::Substitute) {
    SplitMix64 rng(mix_seed(spec.seed, fnv1a64(instance.id)));
    std::vector<std::size_t> positions = sample_without_replacement(k, count, rng);
    std::sort(positions.begin(), positions.end());
    for (std::size_t i = 0; i < count; ++i) out.passages[positions[i]] = pool.passages[i];
  } else {
    for (std::size_t i = 0; i < count; ++i) out.passages.push_back(pool.passages[i]);
  }
  return out;
}

struct InstanceEval {
  std::string instance_id;
  std::string answer;
  ParseStatus parse_status = ParseStatus::Failed;
  double reward = 0.0;
  bool failed = false;
  std::string error;
};

struct AccuracyReport {
  EvalMode mode = EvalMode::WithContext;
  double accuracy = 0.0;
  std::size_t count = 0;
  std::size_t failures = 0;
  std::vector<InstanceEval> records;  // sorted by instance id
};

namespace detail {

inline InstanceEval eval_one(const QAInstance& instance, GenerationProvider& gen, EvalMode mode,
                             GenParams params, std::uint64_t item_seed,
                             const PromptTemplates& templates) {
  InstanceEval record;
  record.instance_id = instance.id;
  try {
    PromptSlots slots;
    slots.question = instance.question;
    if (mode == EvalMode::WithContext) slots.background = format_background(instance);
    const std::string prompt = render_prompt(
        templates, mode == EvalMode::WithContext ? PromptMode::External : PromptMode::Internal,
        slots);
    if (params.seed) params.seed = item_seed;
    const ParsedOutput parsed = parse_tagged_output(gen.generate(prompt, params));
    record.answer = parsed.answer;
    record.parse_status = parsed.parse_status;
    record.reward = accuracy_reward(parsed.answer, instance.gold_answers);
  } catch (const std::exception& e) {
    record.failed = true;
    record.error = e.what();
    record.reward = 0.0;
  }
  return record;
}

inline double mean_reward(const std::vector<InstanceEval>& records) {
  if (records.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : records) total += r.reward;
  return total / static_cast<double>(records.size());
}

}  // namespace detail

// Mean accuracy of one prompting mode over the dataset. A backend failure
// scores the instance 0 and marks the record rather than aborting the pass.
inline AccuracyReport evaluate_accuracy(const std::vector<QAInstance>& dataset,
                                        GenerationProvider& gen, EvalMode mode,
                                        const GenParams& params, std::size_t max_in_flight = 1,
                                        std::uint64_t seed = 0,
                                        const PromptTemplates& templates =
                                            PromptTemplates::builtin()) {
  AccuracyReport report;
  report.mode = mode;
  report.count = dataset.size();
  if (dataset.empty()) return report;

  const auto results = map_bounded(
      dataset,
      [&](const QAInstance& instance, std::uint64_t item_seed) {
        return detail::eval_one(instance, gen, mode, params, item_seed, templates);
      },
      max_in_flight, seed);
  for (const auto& slot : results) report.records.push_back(slot.value());

  std::sort(report.records.begin(), report.records.end(),
            [](const InstanceEval& a, const InstanceEval& b) {
              return a.instance_id < b.instance_id;
            });
  for (const auto& r : report.records)
    if (r.failed) ++report.failures;
  report.accuracy = detail::mean_reward(report.records);
  return report;
}

// Splits instances into knowledge conditions. Internal knowledge wins over
// passage content; otherwise the passages decide by normalized containment
// of any gold alias.
inline std::map<std::string, KnowledgeBucket> stratify_conditions(
    const std::vector<QAInstance>& dataset,
    const std::map<std::string, double>& internal_rewards) {
  std::map<std::string, KnowledgeBucket> buckets;
  for (const auto& instance : dataset) {
    const auto it = internal_rewards.find(instance.id);
    if (it == internal_rewards.end())
      throw std::runtime_error("stratify_conditions: no internal result for instance " +
                               instance.id);
    if (it->second == 1.0) {
      buckets[instance.id] = KnowledgeBucket::InternalKnowledge;
      continue;
    }
    bool has_answer = false;
    for (const auto& passage : instance.passages) {
      const std::string normalized = normalize_answer(passage.text);
      for (const auto& alias : instance.gold_answers) {
        const std::string g = normalize_answer(alias);
        if (!g.empty() && normalized.find(g) != std::string::npos) {
          has_answer = true;
          break;
        }
      }
      if (has_answer) break;
    }
    buckets[instance.id] = has_answer ? KnowledgeBucket::HasAnswer : KnowledgeBucket::MissAnswer;
  }
  return buckets;
}

// Ordinary least-squares slope of accuracy against level index.
inline double robustness_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2)
    throw std::invalid_argument("robustness_slope: need at least 2 points");
  double mean_x = 0.0, mean_y = 0.0;
  for (const auto& [x, y] : points) {
    mean_x += x;
    mean_y += y;
  }
  mean_x /= static_cast<double>(points.size());
  mean_y /= static_cast<double>(points.size());
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mean_x) * (x - mean_x);
    sxy += (x - mean_x) * (y - mean_y);
  }
  if (sxx == 0.0)
    throw std::invalid_argument("robustness_slope: all level indices are equal");
  return sxy / sxx;
}

struct NoiseEvalOptions {
  NoiseMode mode = NoiseMode::Substitute;
  std::vector<double> ratios;
  std::uint64_t seed = 0;
  GenParams params = make_gen_params(0.0, 1024);
  std::size_t max_in_flight = 1;
};

struct NoisePoint {
  double ratio = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
  std::size_t failures = 0;
};

struct NoiseReport {
  NoiseMode mode = NoiseMode::Substitute;
  std::vector<NoisePoint> points;
  // OLS slope over level index 0, 1, 2, ..., absent with fewer than two
  // ratios.
  std::optional<double> slope;
};

// Accuracy under increasing noise. Every instance gets one noise pool drawn
// from the other instances' passages, sized for the largest ratio and seeded
// purely by (options.seed, instance id); each ratio then consumes a prefix
// of that pool, so the curve is reproducible point by point.
inline NoiseReport run_noise_eval(const std::vector<QAInstance>& dataset,
                                  GenerationProvider& gen, const NoiseEvalOptions& options,
                                  const PromptTemplates& templates = PromptTemplates::builtin()) {
  if (options.ratios.empty())
    throw std::invalid_argument("run_noise_eval: ratios must be non-empty");
  double max_ratio = 0.0;
  for (double r : options.ratios) {
    if (r < 0.0 || r > 1.0)
      throw std::invalid_argument("run_noise_eval: every ratio must be in [0, 1]");
    max_ratio = std::max(max_ratio, r);
  }

  const std::uint64_t pool_seed = derive_seed(options.seed, "noise_pool");
  const std::uint64_t apply_seed = derive_seed(options.seed, "noise_apply");

  NoiseReport report;
  report.mode = options.mode;
  for (std::size_t level = 0; level < options.ratios.size(); ++level) {
    const double ratio = options.ratios[level];
    const auto results = map_bounded(
        dataset,
        [&](const QAInstance& instance, std::uint64_t item_seed) {
          InstanceEval record;
          record.instance_id = instance.id;
          try {
            QAInstance noisy = instance;
            const auto max_count = static_cast<std::size_t>(
                std::lround(max_ratio * static_cast<double>(instance.passages.size())));
            if (max_count > 0) {
              const NoisePool pool =
                  build_noise_pool(dataset, instance.id,
                                   mix_seed(pool_seed, fnv1a64(instance.id)), max_count);
              noisy = apply_noise(instance, {options.mode, ratio, apply_seed}, pool);
            }
            PromptSlots slots;
            slots.question = noisy.question;
            slots.background = format_background(noisy);
            const std::string prompt = render_prompt(templates, PromptMode::External, slots);
            GenParams params = options.params;
            if (params.seed) params.seed = item_seed;
            const ParsedOutput parsed = parse_tagged_output(gen.generate(prompt, params));
            record.answer = parsed.answer;
            record.parse_status = parsed.parse_status;
            record.reward = accuracy_reward(parsed.answer, instance.gold_answers);
          } catch (const std::exception& e) {
            record.failed = true;
            record.error = e.what();
            record.reward = 0.0;
          }
          return record;
        },
        options.max_in_flight, mix_seed(derive_seed(options.seed, "noise_eval"), level));

    NoisePoint point;
    point.ratio = ratio;
    point.count = dataset.size();
    std::vector<InstanceEval> records;
    for (const auto& slot : results) records.push_back(slot.value());
    for (const auto& r : records)
      if (r.failed) ++point.failures;
    point.accuracy = detail::mean_reward(records);
    report.points.push_back(point);
  }

  std::size_t distinct = report.points.empty() ? 0 : 1;
  for (std::size_t i = 1; i < report.points.size(); ++i)
    if (report.points[i].ratio != report.points[0].ratio) {
      distinct = 2;
      break;
    }
  if (report.points.size() >= 2 && distinct >= 2) {
    std::vector<std::pair<double, double>> xy;
    for (std::size_t i = 0; i < report.points.size(); ++i)
      xy.emplace_back(static_cast<double>(i), report.points[i].accuracy);
    report.slope = robustness_slope(xy);
  }
  return report;
}

struct ClueHitRecord {
  std::string instance_id;
  double score = 0.0;
  std::string best_sentence;
  std::string gt_clue;
};

struct ClueHitReport {
  std::vector<ClueHitRecord> records;  // sorted by instance id
  std::size_t excluded = 0;            // clue extraction failed or screened out
  std::size_t exhausted = 0;           // excluded slots that hit retry exhaustion
  double mean_times_100 = 0.0;
};

// Per-instance clue-hit: extract the ground-truth clue (gold answer in the
// slot), run a with-context generation, and score the reasoning's best
// sentence against the clue. Instances whose clue never materializes are
// excluded from the mean but counted.
inline ClueHitReport run_clue_hit_eval(const std::vector<QAInstance>& dataset,
                                       GenerationProvider& gen, EmbeddingProvider& embedder,
                                       const GenParams& gen_params,
                                       const GenParams& clue_params = make_gen_params(0.0, 512),
                                       std::size_t max_in_flight = 1, std::uint64_t seed = 0,
                                       const PromptTemplates& templates =
                                           PromptTemplates::builtin()) {
  struct Outcome {
    bool included = false;
    ClueHitRecord record;
  };

  const auto results = map_bounded(
      dataset,
      [&](const QAInstance& instance, std::uint64_t item_seed) {
        Outcome outcome;
        outcome.record.instance_id = instance.id;
        const Clue clue = extract_clue(instance, gen, clue_params, templates);
        if (clue.rejected()) return outcome;

        PromptSlots slots;
        slots.question = instance.question;
        slots.background = format_background(instance);
        const std::string prompt = render_prompt(templates, PromptMode::External, slots);
        GenParams params = gen_params;
        if (params.seed) params.seed = item_seed;
        const ParsedOutput parsed = parse_tagged_output(gen.generate(prompt, params));

        const ClueHitScore score =
            clue_hit_score(parsed.think.value_or(""), clue.text, embedder);
        outcome.included = true;
        outcome.record.score = score.value;
        outcome.record.best_sentence = score.best_sentence;
        outcome.record.gt_clue = clue.text;
        return outcome;
      },
      max_in_flight, seed);

  ClueHitReport report;
  for (const auto& slot : results) {
    if (!slot.ok()) {
      ++report.excluded;
      if (slot.error().kind() == BackendErrorKind::exhausted_retries) ++report.exhausted;
      continue;
    }
    if (!slot.value().included) {
      ++report.excluded;
      continue;
    }
    report.records.push_back(slot.value().record);
  }
  std::sort(report.records.begin(), report.records.end(),
            [](const ClueHitRecord& a, const ClueHitRecord& b) {
              return a.instance_id < b.instance_id;
            });
  if (!report.records.empty()) {
    double total = 0.0;
    for (const auto& r : report.records) total += r.score;
    report.mean_times_100 = 100.0 * total / static_cast<double>(report.records.size());
  }
  return report;
}

// Aggregate report with everything a run produced; serialized to JSON plus
// one flat CSV per table.
struct EvalReport {
  std::map<std::string, double> accuracy_by_mode;
  std::map<std::string, std::size_t> count_by_mode;
  std::map<std::string, std::size_t> failures_by_mode;
  std::map<std::string, double> accuracy_by_bucket;
  std::map<std::string, std::size_t> count_by_bucket;
  std::string bucket_reference_backend;  // which backend's internal pass defined the buckets
  std::vector<NoisePoint> noise_curve;
  std::optional<std::string> noise_mode;
  std::optional<double> slope;
  std::optional<double> clue_hit_mean_times_100;
  std::optional<std::size_t> clue_hit_excluded;
};

inline nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["accuracy_by_mode"] = report.accuracy_by_mode;
  j["count_by_mode"] = report.count_by_mode;
  j["failures_by_mode"] = report.failures_by_mode;
  if (!report.accuracy_by_bucket.empty()) {
    j["accuracy_by_bucket"] = report.accuracy_by_bucket;
    j["count_by_bucket"] = report.count_by_bucket;
    j["bucket_reference_backend"] = report.bucket_reference_backend;
  }
  if (!report.noise_curve.empty()) {
    j["noise_mode"] = report.noise_mode.value_or("");
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& point : report.noise_curve)
      curve.push_back({{"ratio", point.ratio},
                       {"accuracy", point.accuracy},
                       {"count", point.count},
                       {"failures", point.failures}});
    j["noise_curve"] = curve;
  }
  if (report.slope) j["slope"] = *report.slope;
  if (report.clue_hit_mean_times_100) {
    j["clue_hit_mean_times_100"] = *report.clue_hit_mean_times_100;
    j["clue_hit_excluded"] = report.clue_hit_excluded.value_or(0);
  }
  return j;
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

}  // namespace clueanchor
