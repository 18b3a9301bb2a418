#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clueanchor/backends.hpp"
#include "clueanchor/corpus.hpp"
#include "clueanchor/prompting.hpp"
#include "clueanchor/reward.hpp"
#include "clueanchor/rng.hpp"

namespace clueanchor {

enum class PathKind { Internal, External, ClueAnchored };

inline const char* to_string(PathKind kind) {
  switch (kind) {
    case PathKind::Internal: return "internal";
    case PathKind::External: return "external";
    case PathKind::ClueAnchored: return "clue_anchored";
  }
  return "?";
}

inline PathKind path_kind_from_string(const std::string& s) {
  if (s == "internal") return PathKind::Internal;
  if (s == "external") return PathKind::External;
  if (s == "clue_anchored") return PathKind::ClueAnchored;
  throw std::invalid_argument("unknown path kind: " + s);
}

enum class ClueRejection { copies_answer, failed_validation, extraction_error };

inline const char* to_string(ClueRejection r) {
  switch (r) {
    case ClueRejection::copies_answer: return "copies_answer";
    case ClueRejection::failed_validation: return "failed_validation";
    case ClueRejection::extraction_error: return "extraction_error";
  }
  return "?";
}

struct Clue {
  std::string text;
  bool validated = false;
  std::optional<ClueRejection> rejected_reason;
  std::optional<std::string> rejection_detail;
  // True when the clue slot was filled with the gold answer itself (the
  // answer-as-clue ablation) instead of an extracted span.
  bool answer_as_clue = false;

  bool rejected() const { return rejected_reason.has_value(); }
};

struct ReasoningPath {
  PathKind kind = PathKind::Internal;
  std::optional<Clue> clue;  // present iff kind == ClueAnchored
  std::string raw;
  ParsedOutput parsed;
  std::optional<double> reward;
};

struct PathFailure {
  PathKind kind = PathKind::Internal;
  std::string detail;
};

struct CandidateSet {
  std::string instance_id;
  std::vector<ReasoningPath> paths;
  // Bookkeeping: backend failures per kind, and the fate of the extracted
  // clue when the ClueAnchored path was attempted but not emitted.
  std::vector<PathFailure> failures;
  std::optional<Clue> clue_attempt;
};

struct ExplorationConfig {
  bool enable_internal = true;
  bool enable_external = true;
  bool enable_clue_anchored = true;
  bool answer_as_clue = false;
  // Sampling for the three reasoning paths and clue validation.
  GenParams path_params = make_gen_params(0.7, 1024);
  // Clue extraction copies spans, so it decodes greedily.
  GenParams clue_params = make_gen_params(0.0, 512);
};

namespace detail {

inline std::size_t token_count(const std::string& normalized) {
  if (normalized.empty()) return 0;
  std::size_t n = 1;
  for (char c : normalized)
    if (c == ' ') ++n;
  return n;
}

inline GenParams with_derived_seed(const GenParams& params, std::string_view tag) {
  GenParams out = params;
  if (out.seed) out.seed = derive_seed(*out.seed, tag);
  return out;
}

}  // namespace detail

// Asks the model for the passage span that supports the gold answer, then
// screens the result: a clue that just restates the answer (normalized
// equality, or fewer than three tokens beyond the longest alias it contains)
// is rejected as copies_answer. Survivors come back unvalidated.
inline Clue extract_clue(const QAInstance& instance, GenerationProvider& gen,
                         const GenParams& params,
                         const PromptTemplates& templates = PromptTemplates::builtin()) {
  if (instance.passages.empty())
    throw std::invalid_argument("extract_clue: instance has no passages");

  PromptSlots slots;
  slots.question = instance.question;
  slots.background = format_background(instance);
  slots.answer = instance.gold_answers.front();
  const std::string prompt = render_prompt(templates, PromptMode::ClueExtraction, slots);

  Clue clue;
  clue.text = detail::trim(gen.generate(prompt, params));
  if (clue.text.empty()) {
    clue.rejected_reason = ClueRejection::extraction_error;
    return clue;
  }

  const std::string normalized_clue = normalize_answer(clue.text);
  std::size_t longest_contained_alias = 0;
  for (const auto& alias : instance.gold_answers) {
    const std::string g = normalize_answer(alias);
    if (g.empty()) continue;
    if (normalized_clue == g) {
      clue.rejected_reason = ClueRejection::copies_answer;
      return clue;
    }
    if (normalized_clue.find(g) != std::string::npos)
      longest_contained_alias = std::max(longest_contained_alias, detail::token_count(g));
  }
  if (longest_contained_alias > 0 &&
      detail::token_count(normalized_clue) < longest_contained_alias + 3) {
    clue.rejected_reason = ClueRejection::copies_answer;
    return clue;
  }
  return clue;
}

// One validation shot: run a clue-anchored generation and demand a correct
// answer. No second chances; a clue that cannot steer the model to the gold
// answer is not worth anchoring on.
inline Clue validate_clue(const QAInstance& instance, const Clue& clue, GenerationProvider& gen,
                          const GenParams& params,
                          const PromptTemplates& templates = PromptTemplates::builtin()) {
  if (clue.rejected())
    throw std::invalid_argument("validate_clue: clue was already rejected");

  PromptSlots slots;
  slots.question = instance.question;
  slots.background = format_background(instance);
  slots.clue = clue.text;

  Clue out = clue;
  try {
    const std::string prompt = render_prompt(templates, PromptMode::ClueAnchored, slots);
    const ParsedOutput parsed = parse_tagged_output(gen.generate(prompt, params));
    if (accuracy_reward(parsed.answer, instance.gold_answers) == 1.0) {
      out.validated = true;
    } else {
      out.rejected_reason = ClueRejection::failed_validation;
    }
  } catch (const BackendError& e) {
    out.rejected_reason = ClueRejection::failed_validation;
    out.rejection_detail = e.what();
  }
  return out;
}

// Generates the enabled reasoning paths for one instance. Internal sees only
// the question; External adds the retrieved passages; ClueAnchored runs only
// after its clue survives extraction screening and validation. A disabled
// kind issues no backend call at all. Each emitted path carries its parsed
// output and accuracy reward.
inline CandidateSet explore_paths(const QAInstance& instance, const ExplorationConfig& config,
                                  GenerationProvider& gen,
                                  const PromptTemplates& templates = PromptTemplates::builtin()) {
  if (!config.enable_internal && !config.enable_external && !config.enable_clue_anchored)
    throw std::invalid_argument("explore_paths: at least one path kind must be enabled");

  CandidateSet set;
  set.instance_id = instance.id;

  const auto run_path = [&](PathKind kind, const std::string& prompt, const GenParams& params,
                            std::optional<Clue> clue) {
    try {
      ReasoningPath path;
      path.kind = kind;
      path.clue = std::move(clue);
      path.raw = gen.generate(prompt, params);
      path.parsed = parse_tagged_output(path.raw);
      path.reward = accuracy_reward(path.parsed.answer, instance.gold_answers);
      set.paths.push_back(std::move(path));
    } catch (const BackendError& e) {
      set.failures.push_back({kind, e.what()});
    }
  };

  if (config.enable_internal) {
    PromptSlots slots;
    slots.question = instance.question;
    run_path(PathKind::Internal, render_prompt(templates, PromptMode::Internal, slots),
             detail::with_derived_seed(config.path_params, "ikr"), std::nullopt);
  }

  std::optional<std::string> background;
  if ((config.enable_external || config.enable_clue_anchored) && !instance.passages.empty())
    background = format_background(instance);

  if (config.enable_external) {
    if (!background) {
      set.failures.push_back({PathKind::External, "instance has no passages"});
    } else {
      PromptSlots slots;
      slots.question = instance.question;
      slots.background = background;
      run_path(PathKind::External, render_prompt(templates, PromptMode::External, slots),
               detail::with_derived_seed(config.path_params, "ekr"), std::nullopt);
    }
  }

  if (config.enable_clue_anchored) {
    if (!background) {
      set.failures.push_back({PathKind::ClueAnchored, "instance has no passages"});
    } else {
      std::optional<Clue> ready;
      if (config.answer_as_clue) {
        Clue clue;
        clue.text = instance.gold_answers.front();
        clue.validated = true;
        clue.answer_as_clue = true;
        ready = clue;
      } else {
        try {
          Clue clue = extract_clue(instance, gen,
                                   detail::with_derived_seed(config.clue_params, "clue_extract"),
                                   templates);
          if (!clue.rejected())
            clue = validate_clue(instance, clue, gen,
                                 detail::with_derived_seed(config.path_params, "clue_validate"),
                                 templates);
          set.clue_attempt = clue;
          if (clue.validated) ready = clue;
        } catch (const BackendError& e) {
          set.failures.push_back({PathKind::ClueAnchored, e.what()});
        }
      }
      if (ready) {
        PromptSlots slots;
        slots.question = instance.question;
        slots.background = background;
        slots.clue = ready->text;
        run_path(PathKind::ClueAnchored,
                 render_prompt(templates, PromptMode::ClueAnchored, slots),
                 detail::with_derived_seed(config.path_params, "ckr"), std::move(ready));
      }
    }
  }

  if (set.paths.empty()) {
    BackendErrorKind kind = BackendErrorKind::bad_response;
    std::string detail = "explore_paths: all enabled paths failed for instance " + instance.id;
    for (const auto& failure : set.failures) {
      detail += "; " + std::string(to_string(failure.kind)) + ": " + failure.detail;
      if (failure.detail.find("exhausted_retries") != std::string::npos)
        kind = BackendErrorKind::exhausted_retries;
    }
    throw BackendError(kind, detail);
  }
  return set;
}

// Candidate dump rows, one JSON object per emitted path.
inline nlohmann::json path_to_json(const std::string& instance_id, const ReasoningPath& path) {
  nlohmann::json row;
  row["instance_id"] = instance_id;
  row["kind"] = to_string(path.kind);
  if (path.clue) {
    row["clue"] = path.clue->text;
    row["clue_status"] = path.clue->answer_as_clue ? "answer_as_clue" : "validated";
  } else {
    row["clue"] = nullptr;
    row["clue_status"] = "none";
  }
  row["raw"] = path.raw;
  if (path.parsed.think)
    row["think"] = *path.parsed.think;
  else
    row["think"] = nullptr;
  row["answer"] = path.parsed.answer;
  row["parse_status"] = to_string(path.parsed.parse_status);
  return row;
}

template <typename Writer>
void write_candidates(Writer&& writer, const std::vector<CandidateSet>& sets) {
  for (const auto& set : sets)
    for (const auto& path : set.paths) writer(path_to_json(set.instance_id, path).dump());
}

inline std::vector<CandidateSet> load_candidates(std::istream& in) {
  std::vector<CandidateSet> sets;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object())
      throw std::runtime_error("candidate dump line " + std::to_string(line_no) +
                               ": malformed JSON");
    for (const char* field : {"instance_id", "kind", "raw", "answer", "parse_status"})
      if (!row.contains(field))
        throw std::runtime_error("candidate dump line " + std::to_string(line_no) +
                                 ": missing field: " + field);

    ReasoningPath path;
    path.kind = path_kind_from_string(row["kind"].get<std::string>());
    path.raw = row["raw"].get<std::string>();
    if (row.contains("think") && !row["think"].is_null())
      path.parsed.think = row["think"].get<std::string>();
    path.parsed.answer = row["answer"].get<std::string>();
    const std::string status = row["parse_status"].get<std::string>();
    if (status == "clean")
      path.parsed.parse_status = ParseStatus::Clean;
    else if (status == "recovered")
      path.parsed.parse_status = ParseStatus::Recovered;
    else if (status == "failed")
      path.parsed.parse_status = ParseStatus::Failed;
    else
      throw std::runtime_error("candidate dump line " + std::to_string(line_no) +
                               ": unknown parse_status: " + status);
    if (row.contains("clue") && !row["clue"].is_null()) {
      Clue clue;
      clue.text = row["clue"].get<std::string>();
      clue.validated = true;
      clue.answer_as_clue = row.value("clue_status", "validated") == std::string("answer_as_clue");
      path.clue = clue;
    }

    const std::string id = row["instance_id"].get<std::string>();
    if (sets.empty() || sets.back().instance_id != id) {
      CandidateSet set;
      set.instance_id = id;
      sets.push_back(std::move(set));
    }
    sets.back().paths.push_back(std::move(path));
  }
  return sets;
}

}  // namespace clueanchor
