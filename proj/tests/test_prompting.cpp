#include "clueanchor/prompting.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clueanchor/rng.hpp"

using namespace clueanchor;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string repo_path(const std::string& rel) {
  return std::string(CLUEANCHOR_REPO_DIR) + "/" + rel;
}

}  // namespace

TEST_CASE("shipped template files match the built-in texts byte for byte") {
  REQUIRE(read_file(repo_path("templates/internal.txt")) == std::string(templates::kInternal));
  REQUIRE(read_file(repo_path("templates/external.txt")) == std::string(templates::kExternal));
  REQUIRE(read_file(repo_path("templates/clue_extraction.txt")) ==
          std::string(templates::kClueExtraction));
  REQUIRE(read_file(repo_path("templates/clue_anchored.txt")) ==
          std::string(templates::kClueAnchored));
}

TEST_CASE("PromptTemplates::load overrides only named files") {
  const auto t = PromptTemplates::load("", repo_path("templates/external.txt"), "", "");
  REQUIRE(t.text(PromptMode::Internal) == std::string(templates::kInternal));
  REQUIRE(t.text(PromptMode::External) == std::string(templates::kExternal));
  REQUIRE_THROWS_WITH(PromptTemplates::load("/nonexistent/internal.txt", "", "", ""),
                      ContainsSubstring("cannot open template file"));
}

TEST_CASE("render_prompt fills each mode's slots") {
  const auto t = PromptTemplates::builtin();
  PromptSlots slots;
  slots.question = "Who is it?";
  slots.background = "Passage 1: He is Bob.";
  slots.clue = "He is Bob.";
  slots.answer = "Bob";

  SECTION("internal") {
    const std::string p = render_prompt(t, PromptMode::Internal, slots);
    REQUIRE_THAT(p, ContainsSubstring("Question: Who is it?\n\nAnswer:"));
    REQUIRE(p.find("{question}") == std::string::npos);
    REQUIRE(p.find("Background") == std::string::npos);
  }
  SECTION("external") {
    const std::string p = render_prompt(t, PromptMode::External, slots);
    REQUIRE_THAT(p, ContainsSubstring("Background: Passage 1: He is Bob.\n\nQuestion: Who is it?"));
  }
  SECTION("clue extraction") {
    const std::string p = render_prompt(t, PromptMode::ClueExtraction, slots);
    REQUIRE_THAT(p, ContainsSubstring("Answer: Bob\n\nExtracted supporting content:"));
  }
  SECTION("clue anchored") {
    const std::string p = render_prompt(t, PromptMode::ClueAnchored, slots);
    REQUIRE_THAT(p, ContainsSubstring("Key clue information: He is Bob.\n\nQuestion: Who is it?"));
  }
}

TEST_CASE("render_prompt names the missing slot") {
  const auto t = PromptTemplates::builtin();
  PromptSlots slots;
  REQUIRE_THROWS_WITH(render_prompt(t, PromptMode::Internal, slots),
                      ContainsSubstring("missing required slot: question"));
  slots.question = "Q";
  REQUIRE_NOTHROW(render_prompt(t, PromptMode::Internal, slots));
  REQUIRE_THROWS_WITH(render_prompt(t, PromptMode::External, slots),
                      ContainsSubstring("missing required slot: background"));
  slots.background = "B";
  REQUIRE_THROWS_WITH(render_prompt(t, PromptMode::ClueExtraction, slots),
                      ContainsSubstring("missing required slot: answer"));
  REQUIRE_THROWS_WITH(render_prompt(t, PromptMode::ClueAnchored, slots),
                      ContainsSubstring("missing required slot: clue"));
  slots.background = "";
  REQUIRE_THROWS_WITH(render_prompt(t, PromptMode::External, slots),
                      ContainsSubstring("missing required slot: background"));
}

TEST_CASE("render_prompt flags placeholders an override left unfilled") {
  auto t = PromptTemplates::builtin();
  t.set_text(PromptMode::Internal, "Q: {question} from {background}");
  PromptSlots slots;
  slots.question = "Q";
  REQUIRE_THROWS_WITH(render_prompt(t, PromptMode::Internal, slots),
                      ContainsSubstring("unresolved placeholder {background} in template for mode internal"));
}

TEST_CASE("format_background numbers passages from one") {
  std::vector<Passage> passages = {{"p0", std::nullopt, "a"}, {"p1", std::nullopt, "b"}};
  REQUIRE(format_background(passages) == "Passage 1: a\n\nPassage 2: b");
  REQUIRE_THROWS_WITH(format_background(std::vector<Passage>{}),
                      ContainsSubstring("empty passage list"));

  QAInstance inst;
  inst.passages = passages;
  REQUIRE(format_background(inst) == "Passage 1: a\n\nPassage 2: b");
}

TEST_CASE("parse_tagged_output classifies well-formed text as clean") {
  const auto out = parse_tagged_output("<think>step one</think> <answer>Bob</answer>");
  REQUIRE(out.parse_status == ParseStatus::Clean);
  REQUIRE(out.think == "step one");
  REQUIRE(out.answer == "Bob");
}

TEST_CASE("parse_tagged_output accepts a missing answer closer at end of text") {
  const auto out = parse_tagged_output(
      "<think>The first passage names the first Viscount.</think> "
      "<answer> Walter Devereux, 1st Viscount Hereford.");
  REQUIRE(out.parse_status == ParseStatus::Clean);
  REQUIRE(out.answer == "Walter Devereux, 1st Viscount Hereford.");
}

TEST_CASE("parse_tagged_output trims whitespace inside a closed answer") {
  const auto out = parse_tagged_output(
      "<think>The session date is stated directly.</think> "
      "<answer> November 17, 1800 (for the first session of Congress)  </answer>");
  REQUIRE(out.parse_status == ParseStatus::Clean);
  REQUIRE(out.answer == "November 17, 1800 (for the first session of Congress)");
}

TEST_CASE("parse_tagged_output recovers an untagged single line") {
  const auto out = parse_tagged_output("John Devereux, 9th Baron Ferrers of Chartley.");
  REQUIRE(out.parse_status == ParseStatus::Recovered);
  REQUIRE(out.answer == "John Devereux, 9th Baron Ferrers of Chartley.");
  REQUIRE_FALSE(out.think.has_value());
}

TEST_CASE("parse_tagged_output recovers multi-line untagged text") {
  const auto out = parse_tagged_output("First I recall the treaty.\nThen I check the year.\n1848\n\n");
  REQUIRE(out.parse_status == ParseStatus::Recovered);
  REQUIRE(out.answer == "1848");
  REQUIRE(out.think == "First I recall the treaty.\nThen I check the year.");
}

TEST_CASE("parse_tagged_output keeps tagged think when the answer tag is absent") {
  const auto out = parse_tagged_output("<think>recall</think>\nThe answer is X.\n");
  REQUIRE(out.parse_status == ParseStatus::Recovered);
  REQUIRE(out.think == "recall");
  REQUIRE(out.answer == "The answer is X.");
}

TEST_CASE("parse_tagged_output downgrades malformed tag layouts to recovered") {
  SECTION("duplicate think tags") {
    const auto out =
        parse_tagged_output("<think>a</think><think>b</think> <answer>c</answer>");
    REQUIRE(out.parse_status == ParseStatus::Recovered);
    REQUIRE(out.answer == "c");
  }
  SECTION("trailing prose after the answer closer") {
    const auto out = parse_tagged_output("<think>a</think> <answer>c</answer> extra");
    REQUIRE(out.parse_status == ParseStatus::Recovered);
    REQUIRE(out.answer == "c");
  }
  SECTION("answer before think") {
    const auto out = parse_tagged_output("<answer>c</answer> <think>a</think>");
    REQUIRE(out.parse_status == ParseStatus::Recovered);
    REQUIRE(out.answer == "c");
    REQUIRE(out.think == "a");
  }
  SECTION("empty answer tag") {
    const auto out = parse_tagged_output("<think>a</think> <answer>  </answer>");
    REQUIRE(out.parse_status == ParseStatus::Recovered);
    REQUIRE(out.answer.empty());
  }
  SECTION("answer tag without think") {
    const auto out = parse_tagged_output("<answer>solo</answer>");
    REQUIRE(out.parse_status == ParseStatus::Recovered);
    REQUIRE(out.answer == "solo");
    REQUIRE_FALSE(out.think.has_value());
  }
}

TEST_CASE("parse_tagged_output fails only on empty input") {
  REQUIRE(parse_tagged_output("").parse_status == ParseStatus::Failed);
  REQUIRE(parse_tagged_output("   \n\t ").parse_status == ParseStatus::Failed);
  REQUIRE(parse_tagged_output(".").parse_status == ParseStatus::Recovered);
}

TEST_CASE("parse_tagged_output round-trips generated clean outputs") {
  // Any think/answer body free of tag markers must come back verbatim with
  // clean status, with or without the answer closer.
  SplitMix64 rng(2024);
  const std::vector<std::string> words = {"alpha", "bravo", "charlie", "delta",
                                          "echo",  "fox",   "golf",    "hotel"};
  auto make_text = [&](std::size_t min_words) {
    std::string text;
    const std::size_t n = min_words + rng.next_below(6);
    for (std::size_t i = 0; i < n; ++i) {
      if (i) text += (rng.next_below(8) == 0) ? '\n' : ' ';
      text += words[rng.next_below(words.size())];
    }
    return text;
  };
  for (int i = 0; i < 1000; ++i) {
    const std::string think = make_text(1);
    std::string answer = make_text(1);
    for (auto& c : answer)
      if (c == '\n') c = ' ';
    const bool close_answer = rng.next_below(2) == 0;
    std::string raw = "<think>" + think + "</think> <answer>" + answer;
    if (close_answer) raw += "</answer>";
    const auto out = parse_tagged_output(raw);
    REQUIRE(out.parse_status == ParseStatus::Clean);
    REQUIRE(out.think == think);
    REQUIRE(out.answer == answer);
  }
}
