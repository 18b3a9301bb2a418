#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "clueanchor/corpus.hpp"

namespace clueanchor {

enum class PromptMode { Internal, External, ClueExtraction, ClueAnchored };

inline const char* to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::Internal: return "internal";
    case PromptMode::External: return "external";
    case PromptMode::ClueExtraction: return "clue_extraction";
    case PromptMode::ClueAnchored: return "clue_anchored";
  }
  return "?";
}

enum class ParseStatus { Clean, Recovered, Failed };

inline const char* to_string(ParseStatus status) {
  switch (status) {
    case ParseStatus::Clean: return "clean";
    case ParseStatus::Recovered: return "recovered";
    case ParseStatus::Failed: return "failed";
  }
  return "?";
}

// Think/answer split of one model completion. `Clean` means exactly one
// well-formed pair of each tag was found (a trailing unclosed <answer> still
// counts: models drop the closer at end of text often enough that several of
// the outputs this format was designed around do it).
struct ParsedOutput {
  std::optional<std::string> think;
  std::string answer;
  ParseStatus parse_status = ParseStatus::Failed;
};

class PromptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace templates {

// The four instruction templates, stored exactly as rendered to the model.
// Copies of these ship as files under templates/ for config overrides; the
// test suite pins both against a frozen reference byte for byte.

inline constexpr std::string_view kInternal =
    "Please think about the reasoning process in the mind and then provides the user with the "
    "answer.\n"
    "\n"
    "The reasoning process and answer are enclosed within <think> </think> and <answer> "
    "</answer> tags, respectively, i.e., <think> reasoning process here </think> <answer> "
    "answer here </answer>.\n"
    "\n"
    "You could perform thinking with decomposing, understanding, recalling, reflecting, "
    "brainstorming, verifying, refining, and revising.\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Answer:";

inline constexpr std::string_view kExternal =
    "Please think about the reasoning process in the mind and then provides the user with the "
    "answer based on the given background.\n"
    "\n"
    "The reasoning process and answer are enclosed within <think> </think> and <answer> "
    "</answer> tags, respectively, i.e., <think> reasoning process here </think> <answer> "
    "answer here </answer>.\n"
    "\n"
    "You could perform thinking with decomposing, understanding, recalling, reflecting, "
    "brainstorming, verifying, refining, and revising.\n"
    "\n"
    "You first need to determine whether the background contains information related to the "
    "problem. If not, please answer the question based on general knowledge.\n"
    "\n"
    "Background: {background}\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Answer:";

inline constexpr std::string_view kClueExtraction =
    "You are given a background passage, a question, and its correct answer. Your task is to "
    "extract the key clue sentence(s) from the passage that directly support the answer.\n"
    "\n"
    "Instructions:\n"
    "\n"
    "1.Only extract content that appears explicitly in the passage.\n"
    "\n"
    "2.Do not include any reasoning, explanation, or inferred information.\n"
    "\n"
    "3.Output must be faithful to the original wording in the passage, with no paraphrasing or "
    "modification.\n"
    "\n"
    "Background: {background}\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Answer: {answer}\n"
    "\n"
    "Extracted supporting content:";

inline constexpr std::string_view kClueAnchored =
    "Please think about the reasoning process in the mind and then provides the user with the "
    "answer based on the given background.\n"
    "\n"
    "The reasoning process and answer are enclosed within <think> </think> and <answer> "
    "</answer> tags, respectively, i.e., <think> reasoning process here </think> <answer> "
    "answer here </answer>.\n"
    "\n"
    "You could perform thinking with decomposing, understanding, recalling, reflecting, "
    "brainstorming, verifying, refining, and revising.\n"
    "\n"
    "You first need to determine whether the background contains information related to the "
    "problem. If not, please answer the question based on general knowledge.\n"
    "\n"
    "To assist your reasoning, some potentially key clue information from the Background may "
    "have been highlighted or emphasized in the input, Please use these as guidance when they "
    "are available, but still ensure you consider the entire Background as needed. Or it may "
    "indicate that the Background does not contain the answer, in which case you should rely "
    "on general knowledge and reasoning.\n"
    "\n"
    "Background: {background}\n"
    "\n"
    "Key clue information: {clue}\n"
    "\n"
    "Question: {question}\n"
    "\n"
    "Answer:";

}  // namespace templates

// Template set for the four prompt modes. Defaults to the built-in texts;
// load() swaps in files named by config.
class PromptTemplates {
 public:
  static PromptTemplates builtin() {
    PromptTemplates t;
    t.texts_[0] = std::string(templates::kInternal);
    t.texts_[1] = std::string(templates::kExternal);
    t.texts_[2] = std::string(templates::kClueExtraction);
    t.texts_[3] = std::string(templates::kClueAnchored);
    return t;
  }

  // One file per mode; missing path keeps the built-in text for that mode.
  static PromptTemplates load(const std::string& internal_path, const std::string& external_path,
                              const std::string& clue_extraction_path,
                              const std::string& clue_anchored_path) {
    PromptTemplates t = builtin();
    const std::array<const std::string*, 4> paths = {&internal_path, &external_path,
                                                     &clue_extraction_path, &clue_anchored_path};
    for (std::size_t i = 0; i < paths.size(); ++i) {
      if (paths[i]->empty()) continue;
      std::ifstream in(*paths[i], std::ios::binary);
      if (!in) throw PromptError("cannot open template file: " + *paths[i]);
      std::ostringstream buf;
      buf << in.rdbuf();
      t.texts_[i] = buf.str();
    }
    return t;
  }

  const std::string& text(PromptMode mode) const {
    return texts_[static_cast<std::size_t>(mode)];
  }

  void set_text(PromptMode mode, std::string text) {
    texts_[static_cast<std::size_t>(mode)] = std::move(text);
  }

 private:
  std::array<std::string, 4> texts_;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const char* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

inline std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size()))
    ++n;
  return n;
}

inline void substitute_all(std::string& text, std::string_view placeholder,
                           std::string_view value) {
  for (auto pos = text.find(placeholder); pos != std::string::npos;
       pos = text.find(placeholder, pos + value.size()))
    text.replace(pos, placeholder.size(), value);
}

}  // namespace detail

struct PromptSlots {
  std::string question;
  std::optional<std::string> background;
  std::optional<std::string> clue;
  std::optional<std::string> answer;
};

// Fills the template for `mode`. Each mode has a fixed set of required
// slots; a missing one is an error naming the slot, and any placeholder left
// in the output (a typo in an override file, say) is an error too.
inline std::string render_prompt(const PromptTemplates& templates, PromptMode mode,
                                 const PromptSlots& slots) {
  if (slots.question.empty()) throw PromptError("missing required slot: question");
  const bool needs_background = mode != PromptMode::Internal;
  if (needs_background && (!slots.background || slots.background->empty()))
    throw PromptError("missing required slot: background");
  if (mode == PromptMode::ClueExtraction && (!slots.answer || slots.answer->empty()))
    throw PromptError("missing required slot: answer");
  if (mode == PromptMode::ClueAnchored && (!slots.clue || slots.clue->empty()))
    throw PromptError("missing required slot: clue");

  std::string out = templates.text(mode);
  detail::substitute_all(out, "{question}", slots.question);
  if (slots.background) detail::substitute_all(out, "{background}", *slots.background);
  if (slots.clue) detail::substitute_all(out, "{clue}", *slots.clue);
  if (slots.answer) detail::substitute_all(out, "{answer}", *slots.answer);

  for (std::string_view placeholder : {"{question}", "{background}", "{clue}", "{answer}"}) {
    if (out.find(placeholder) != std::string::npos)
      throw PromptError("unresolved placeholder " + std::string(placeholder) +
                        " in template for mode " + to_string(mode));
  }
  return out;
}

// "Passage 1: ...\n\nPassage 2: ..." in input order.
inline std::string format_background(const std::vector<Passage>& passages) {
  if (passages.empty()) throw PromptError("format_background: empty passage list");
  std::string out;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (i) out += "\n\n";
    out += "Passage " + std::to_string(i + 1) + ": " + passages[i].text;
  }
  return out;
}

inline std::string format_background(const QAInstance& instance) {
  return format_background(instance.passages);
}

// Total function from raw completion text to (think, answer, status).
//   clean:     one <think>...</think> pair followed by one <answer>, whose
//              closer may be missing when the text just runs out;
//   recovered: anything else with usable text: tagged fragments are used
//              when present, otherwise the last nonempty line is the answer
//              and the lines before it the reasoning;
//   failed:    empty or whitespace-only input.
inline ParsedOutput parse_tagged_output(std::string_view raw) {
  constexpr std::string_view kThinkOpen = "<think>";
  constexpr std::string_view kThinkClose = "</think>";
  constexpr std::string_view kAnswerOpen = "<answer>";
  constexpr std::string_view kAnswerClose = "</answer>";

  ParsedOutput out;
  if (detail::trim(raw).empty()) {
    out.parse_status = ParseStatus::Failed;
    return out;
  }

  const auto think_open = raw.find(kThinkOpen);
  const auto think_close = raw.find(kThinkClose);
  const auto answer_open = raw.find(kAnswerOpen);
  const auto answer_close = raw.find(kAnswerClose);

  const bool think_formed = think_open != std::string_view::npos &&
                            think_close != std::string_view::npos && think_close > think_open;
  if (think_formed) {
    out.think = detail::trim(
        raw.substr(think_open + kThinkOpen.size(), think_close - think_open - kThinkOpen.size()));
  }

  if (answer_open != std::string_view::npos) {
    const auto body_begin = answer_open + kAnswerOpen.size();
    const auto body_end = (answer_close != std::string_view::npos && answer_close > answer_open)
                              ? answer_close
                              : raw.size();
    out.answer = detail::trim(raw.substr(body_begin, body_end - body_begin));
  }

  const bool tags_clean =
      think_formed && answer_open != std::string_view::npos && answer_open > think_close &&
      detail::count_occurrences(raw, kThinkOpen) == 1 &&
      detail::count_occurrences(raw, kThinkClose) == 1 &&
      detail::count_occurrences(raw, kAnswerOpen) == 1 &&
      detail::count_occurrences(raw, kAnswerClose) <= 1 &&
      (answer_close == std::string_view::npos ||
       (answer_close > answer_open &&
        detail::trim(raw.substr(answer_close + kAnswerClose.size())).empty()));
  if (tags_clean && !out.answer.empty()) {
    out.parse_status = ParseStatus::Clean;
    return out;
  }

  out.parse_status = ParseStatus::Recovered;
  if (answer_open != std::string_view::npos) return out;

  // No answer tag anywhere: fall back to the last nonempty line.
  std::string_view rest = raw;
  if (think_formed) rest = raw.substr(think_close + kThinkClose.size());
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start <= rest.size();) {
    auto nl = rest.find('\n', start);
    if (nl == std::string_view::npos) nl = rest.size();
    lines.push_back(rest.substr(start, nl - start));
    start = nl + 1;
  }
  std::size_t last = lines.size();
  while (last > 0 && detail::trim(lines[last - 1]).empty()) --last;
  if (last == 0) {
    out.answer.clear();
    return out;
  }
  out.answer = detail::trim(lines[last - 1]);
  std::string remainder;
  for (std::size_t i = 0; i + 1 < last; ++i) {
    if (i) remainder += '\n';
    remainder += lines[i];
  }
  const std::string trimmed_remainder = detail::trim(remainder);
  if (!out.think && !trimmed_remainder.empty()) out.think = trimmed_remainder;
  return out;
}

}  // namespace clueanchor
