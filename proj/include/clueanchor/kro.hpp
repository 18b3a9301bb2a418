#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clueanchor/kre.hpp"
#include "clueanchor/prompting.hpp"

namespace clueanchor {

struct PreferencePair {
  std::string instance_id;
  // Conditioning prompt for downstream DPO training: always the plain
  // external rendering of (question, passages). The clue never leaks into
  // the training prompt; inference runs without clue supervision.
  std::string prompt;
  ReasoningPath chosen;
  ReasoningPath rejected;
  double chosen_reward = 0.0;
  double rejected_reward = 0.0;
};

// Kind preference used to break reward ties. Positives favor External (the
// same conditioning the trained model sees), negatives favor Internal.
struct TieOrder {
  std::array<PathKind, 3> positive;
  std::array<PathKind, 3> negative;

  static TieOrder standard() {
    return {{PathKind::External, PathKind::ClueAnchored, PathKind::Internal},
            {PathKind::Internal, PathKind::External, PathKind::ClueAnchored}};
  }
};

namespace detail {

inline std::size_t kind_rank(PathKind kind, const std::array<PathKind, 3>& order) {
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] == kind) return i;
  return order.size();
}

}  // namespace detail

// Argmax/argmin pair choice over the candidate paths, as indices into
// candidates.paths. A set whose rewards are all equal carries no preference
// signal and is filtered out (returns nullopt), as is an empty set.
inline std::optional<std::pair<std::size_t, std::size_t>> select_pair_indices(
    const CandidateSet& candidates, const TieOrder& ties = TieOrder::standard()) {
  if (candidates.paths.empty()) return std::nullopt;
  for (const auto& path : candidates.paths)
    if (!path.reward)
      throw std::invalid_argument("select_pair: path without reward in instance " +
                                  candidates.instance_id);

  std::size_t best = 0, worst = 0;
  for (std::size_t i = 1; i < candidates.paths.size(); ++i) {
    const double r = *candidates.paths[i].reward;
    const double best_r = *candidates.paths[best].reward;
    const double worst_r = *candidates.paths[worst].reward;
    if (r > best_r || (r == best_r && detail::kind_rank(candidates.paths[i].kind, ties.positive) <
                                          detail::kind_rank(candidates.paths[best].kind,
                                                            ties.positive)))
      best = i;
    if (r < worst_r || (r == worst_r && detail::kind_rank(candidates.paths[i].kind, ties.negative) <
                                            detail::kind_rank(candidates.paths[worst].kind,
                                                              ties.negative)))
      worst = i;
  }
  if (*candidates.paths[best].reward == *candidates.paths[worst].reward) return std::nullopt;
  return std::make_pair(best, worst);
}

inline std::optional<PreferencePair> select_pair(
    const CandidateSet& candidates, const QAInstance& instance,
    const TieOrder& ties = TieOrder::standard(),
    const PromptTemplates& templates = PromptTemplates::builtin()) {
  const auto indices = select_pair_indices(candidates, ties);
  if (!indices) return std::nullopt;

  PromptSlots slots;
  slots.question = instance.question;
  slots.background = format_background(instance);

  PreferencePair pair;
  pair.instance_id = candidates.instance_id;
  pair.prompt = render_prompt(templates, PromptMode::External, slots);
  pair.chosen = candidates.paths[indices->first];
  pair.rejected = candidates.paths[indices->second];
  pair.chosen_reward = *pair.chosen.reward;
  pair.rejected_reward = *pair.rejected.reward;
  return pair;
}

// One preference comparison in log-likelihood space. The four values are
// sequence log-likelihoods in nats; beta scales the implicit-reward margin.
struct DpoExample {
  double lp_pos_policy = 0.0;
  double lp_pos_ref = 0.0;
  double lp_neg_policy = 0.0;
  double lp_neg_ref = 0.0;
  double beta = 0.1;
};

namespace detail {

inline void validate(const DpoExample& example) {
  if (!(example.beta > 0.0)) throw std::invalid_argument("DpoExample: beta must be > 0");
  for (double v : {example.lp_pos_policy, example.lp_pos_ref, example.lp_neg_policy,
                   example.lp_neg_ref})
    if (!std::isfinite(v))
      throw std::invalid_argument("DpoExample: log-likelihoods must be finite");
}

inline double dpo_margin(const DpoExample& example) {
  return example.beta * ((example.lp_pos_policy - example.lp_pos_ref) -
                         (example.lp_neg_policy - example.lp_neg_ref));
}

// softplus(x) = log(1 + e^x) without overflow for large |x|.
inline double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// -log sigmoid(z) with z the beta-scaled margin between chosen and rejected
// implicit rewards. Equals softplus(-z), evaluated in the overflow-safe form.
inline double dpo_loss(const DpoExample& example) {
  detail::validate(example);
  return detail::stable_softplus(-detail::dpo_margin(example));
}

// Partial derivatives of dpo_loss with respect to (lp_pos_policy,
// lp_neg_policy). They are antisymmetric: the pair always sums to zero.
inline std::pair<double, double> dpo_grad(const DpoExample& example) {
  detail::validate(example);
  const double s = detail::stable_sigmoid(detail::dpo_margin(example));
  return {example.beta * (s - 1.0), example.beta * (1.0 - s)};
}

// Table policy: one log-likelihood scalar per (pair, side), plus the frozen
// reference copies. Small enough that the optimization objective is exactly
// the one the loss defines, with no model in the way.
struct ToyPolicy {
  std::vector<double> lp_pos;
  std::vector<double> lp_neg;
  std::vector<double> ref_pos;
  std::vector<double> ref_neg;
  double beta = 0.1;

  DpoExample example(std::size_t i) const {
    return {lp_pos[i], ref_pos[i], lp_neg[i], ref_neg[i], beta};
  }

  double mean_loss() const {
    double total = 0.0;
    for (std::size_t i = 0; i < lp_pos.size(); ++i) total += dpo_loss(example(i));
    return total / static_cast<double>(lp_pos.size());
  }
};

struct ToyTrainResult {
  ToyPolicy policy;
  // trace[0] is the loss at initialization; one entry per step after that.
  std::vector<double> trace;
};

// Plain gradient descent on the mean loss over all pairs. The seeds provide
// the starting policy and the frozen reference values; `beta` overrides the
// per-seed scaling so one run trains one objective. Ten consecutive loss
// increases count as divergence and abort with a hint to lower lr.
inline ToyTrainResult toy_train(const std::vector<DpoExample>& seeds, std::size_t steps,
                                double lr, double beta) {
  if (seeds.empty()) throw std::invalid_argument("toy_train: seeds must be non-empty");
  if (!(lr > 0.0)) throw std::invalid_argument("toy_train: lr must be > 0");
  if (!(beta > 0.0)) throw std::invalid_argument("toy_train: beta must be > 0");

  ToyTrainResult result;
  ToyPolicy& policy = result.policy;
  policy.beta = beta;
  for (const auto& seed : seeds) {
    detail::validate(seed);
    policy.lp_pos.push_back(seed.lp_pos_policy);
    policy.lp_neg.push_back(seed.lp_neg_policy);
    policy.ref_pos.push_back(seed.lp_pos_ref);
    policy.ref_neg.push_back(seed.lp_neg_ref);
  }

  const double n = static_cast<double>(seeds.size());
  result.trace.push_back(policy.mean_loss());
  int consecutive_increases = 0;
  for (std::size_t step = 0; step < steps; ++step) {
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const auto [g_pos, g_neg] = dpo_grad(policy.example(i));
      policy.lp_pos[i] -= lr * g_pos / n;
      policy.lp_neg[i] -= lr * g_neg / n;
    }
    const double loss = policy.mean_loss();
    consecutive_increases = loss > result.trace.back() ? consecutive_increases + 1 : 0;
    result.trace.push_back(loss);
    if (consecutive_increases >= 10)
      throw std::runtime_error(
          "toy_train diverged: loss increased for 10 consecutive steps; use a smaller lr");
  }
  return result;
}

// Flat row form of a preference pair, as written to and read from JSONL.
struct PreferenceRecord {
  std::string instance_id;
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::string chosen_kind;
  std::string rejected_kind;
  double chosen_reward = 0.0;
  double rejected_reward = 0.0;

  bool operator==(const PreferenceRecord&) const = default;
};

inline PreferenceRecord to_record(const PreferencePair& pair) {
  return {pair.instance_id,          pair.prompt,
          pair.chosen.raw,           pair.rejected.raw,
          to_string(pair.chosen.kind), to_string(pair.rejected.kind),
          pair.chosen_reward,        pair.rejected_reward};
}

inline std::size_t emit_preference_dataset(const std::vector<PreferencePair>& pairs,
                                           const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& pair : pairs) {
    if (!(pair.chosen_reward > pair.rejected_reward))
      throw std::invalid_argument("preference pair for instance " + pair.instance_id +
                                  " violates chosen_reward > rejected_reward");
    const PreferenceRecord record = to_record(pair);
    nlohmann::json row;
    row["instance_id"] = record.instance_id;
    row["prompt"] = record.prompt;
    row["chosen"] = record.chosen;
    row["rejected"] = record.rejected;
    row["chosen_kind"] = record.chosen_kind;
    row["rejected_kind"] = record.rejected_kind;
    row["chosen_reward"] = record.chosen_reward;
    row["rejected_reward"] = record.rejected_reward;
    out << row.dump() << '\n';
  }
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
  return pairs.size();
}

inline std::vector<PreferenceRecord> load_preference_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<PreferenceRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object())
      throw std::runtime_error(path + " line " + std::to_string(line_no) + ": malformed JSON");
    PreferenceRecord record;
    try {
      record.instance_id = row.at("instance_id").get<std::string>();
      record.prompt = row.at("prompt").get<std::string>();
      record.chosen = row.at("chosen").get<std::string>();
      record.rejected = row.at("rejected").get<std::string>();
      record.chosen_kind = row.at("chosen_kind").get<std::string>();
      record.rejected_kind = row.at("rejected_kind").get<std::string>();
      record.chosen_reward = row.at("chosen_reward").get<double>();
      record.rejected_reward = row.at("rejected_reward").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace clueanchor
