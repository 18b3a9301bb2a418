#include "clueanchor/kro.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "clueanchor/rng.hpp"

using namespace clueanchor;
using Catch::Matchers::ContainsSubstring;

namespace {

constexpr double kLn2 = 0.693147180559945309417232121458;

ReasoningPath make_path(PathKind kind, std::optional<double> reward) {
  ReasoningPath path;
  path.kind = kind;
  path.raw = std::string("<think>t</think> <answer>a-") + to_string(kind) + "</answer>";
  path.parsed = parse_tagged_output(path.raw);
  path.reward = reward;
  return path;
}

CandidateSet make_set(std::vector<std::pair<PathKind, double>> entries) {
  CandidateSet set;
  set.instance_id = "t:1";
  for (const auto& [kind, reward] : entries) set.paths.push_back(make_path(kind, reward));
  return set;
}

// Independent comparator: maximize (reward, earliest positive rank) for the
// chosen side, minimize reward with earliest negative rank for the rejected
// side. Written against the selection contract, not the implementation.
std::optional<std::pair<std::size_t, std::size_t>> brute_select(const CandidateSet& set,
                                                                const TieOrder& ties) {
  if (set.paths.empty()) return std::nullopt;
  auto rank = [](PathKind kind, const std::array<PathKind, 3>& order) {
    return std::find(order.begin(), order.end(), kind) - order.begin();
  };
  std::size_t best = 0, worst = 0;
  for (std::size_t i = 1; i < set.paths.size(); ++i) {
    const double r = *set.paths[i].reward;
    if (r > *set.paths[best].reward ||
        (r == *set.paths[best].reward &&
         rank(set.paths[i].kind, ties.positive) < rank(set.paths[best].kind, ties.positive)))
      best = i;
    if (r < *set.paths[worst].reward ||
        (r == *set.paths[worst].reward &&
         rank(set.paths[i].kind, ties.negative) < rank(set.paths[worst].kind, ties.negative)))
      worst = i;
  }
  if (*set.paths[best].reward == *set.paths[worst].reward) return std::nullopt;
  return std::make_pair(best, worst);
}

DpoExample example_with_margin(double z) {
  DpoExample example;
  example.beta = 1.0;
  example.lp_pos_policy = z;
  return example;
}

}  // namespace

TEST_CASE("select_pair_indices prefers external on reward ties") {
  const auto set = make_set({{PathKind::Internal, 0.0},
                             {PathKind::External, 1.0},
                             {PathKind::ClueAnchored, 1.0}});
  const auto indices = select_pair_indices(set);
  REQUIRE(indices.has_value());
  REQUIRE(set.paths[indices->first].kind == PathKind::External);
  REQUIRE(set.paths[indices->second].kind == PathKind::Internal);
}

TEST_CASE("select_pair_indices filters sets without a reward gap") {
  REQUIRE_FALSE(select_pair_indices(make_set({{PathKind::Internal, 0.0},
                                              {PathKind::External, 0.0},
                                              {PathKind::ClueAnchored, 0.0}}))
                    .has_value());
  REQUIRE_FALSE(select_pair_indices(make_set({{PathKind::Internal, 1.0},
                                              {PathKind::External, 1.0},
                                              {PathKind::ClueAnchored, 1.0}}))
                    .has_value());
  REQUIRE_FALSE(select_pair_indices(make_set({{PathKind::External, 1.0}})).has_value());
  REQUIRE_FALSE(select_pair_indices(CandidateSet{}).has_value());
}

TEST_CASE("select_pair_indices keeps a correct internal path as chosen") {
  const auto set = make_set({{PathKind::Internal, 1.0},
                             {PathKind::External, 0.0},
                             {PathKind::ClueAnchored, 0.0}});
  const auto indices = select_pair_indices(set);
  REQUIRE(indices.has_value());
  REQUIRE(set.paths[indices->first].kind == PathKind::Internal);
  // Rejected tie between External and ClueAnchored goes to External.
  REQUIRE(set.paths[indices->second].kind == PathKind::External);
}

TEST_CASE("select_pair_indices requires a reward on every path") {
  auto set = make_set({{PathKind::Internal, 1.0}, {PathKind::External, 0.0}});
  set.paths[1].reward.reset();
  REQUIRE_THROWS_WITH(select_pair_indices(set), ContainsSubstring("t:1"));
}

TEST_CASE("select_pair_indices agrees with brute force on every subset") {
  const TieOrder ties = TieOrder::standard();
  const std::array<PathKind, 3> kinds = {PathKind::Internal, PathKind::External,
                                         PathKind::ClueAnchored};
  for (int mask = 1; mask < 8; ++mask) {
    std::vector<PathKind> present;
    for (int k = 0; k < 3; ++k)
      if (mask & (1 << k)) present.push_back(kinds[k]);

    std::vector<std::size_t> order(present.size());
    std::iota(order.begin(), order.end(), 0);
    do {
      for (int rewards = 0; rewards < (1 << present.size()); ++rewards) {
        CandidateSet set;
        set.instance_id = "t:1";
        for (std::size_t slot = 0; slot < order.size(); ++slot) {
          const std::size_t k = order[slot];
          set.paths.push_back(make_path(present[k], (rewards >> k) & 1 ? 1.0 : 0.0));
        }
        const auto got = select_pair_indices(set, ties);
        const auto want = brute_select(set, ties);
        REQUIRE(got == want);
      }
    } while (std::next_permutation(order.begin(), order.end()));
  }
}

TEST_CASE("select_pair_indices is invariant under increasing reward transforms") {
  const TieOrder ties = TieOrder::standard();
  SplitMix64 rng(17);
  const std::array<PathKind, 3> kinds = {PathKind::Internal, PathKind::External,
                                         PathKind::ClueAnchored};
  const std::array<double, 4> levels = {0.0, 0.25, 0.5, 1.0};
  for (int trial = 0; trial < 500; ++trial) {
    CandidateSet base;
    base.instance_id = "t:1";
    const std::size_t n = 1 + rng.next_below(3);
    for (std::size_t i = 0; i < n; ++i)
      base.paths.push_back(make_path(kinds[i], levels[rng.next_below(levels.size())]));

    CandidateSet shifted = base;
    for (auto& path : shifted.paths) path.reward = 3.0 * *path.reward - 1.0;

    REQUIRE(select_pair_indices(base, ties) == select_pair_indices(shifted, ties));
  }
}

TEST_CASE("select_pair renders the external prompt and copies both sides") {
  QAInstance inst;
  inst.id = "t:1";
  inst.question = "Q?";
  inst.gold_answers = {"gold"};
  inst.passages = {{"t:1:p0", std::nullopt, "The gold text."}};
  const auto set = make_set({{PathKind::Internal, 0.0},
                             {PathKind::External, 1.0},
                             {PathKind::ClueAnchored, 1.0}});

  const auto pair = select_pair(set, inst);
  REQUIRE(pair.has_value());
  PromptSlots slots;
  slots.question = inst.question;
  slots.background = format_background(inst);
  REQUIRE(pair->prompt == render_prompt(PromptTemplates::builtin(), PromptMode::External, slots));
  REQUIRE(pair->chosen.kind == PathKind::External);
  REQUIRE(pair->rejected.kind == PathKind::Internal);
  REQUIRE(pair->chosen_reward == 1.0);
  REQUIRE(pair->rejected_reward == 0.0);

  const auto all_zero = make_set({{PathKind::Internal, 0.0}, {PathKind::External, 0.0}});
  REQUIRE_FALSE(select_pair(all_zero, inst).has_value());
}

TEST_CASE("dpo_loss at zero margin is ln 2") {
  DpoExample example;
  REQUIRE(std::abs(dpo_loss(example) - kLn2) < 1e-12);
}

TEST_CASE("dpo_loss approaches ln 2 as beta vanishes") {
  DpoExample example;
  example.beta = 1e-12;
  example.lp_pos_policy = 3.0;
  example.lp_pos_ref = -1.0;
  example.lp_neg_policy = -2.0;
  example.lp_neg_ref = 0.5;
  REQUIRE(std::abs(dpo_loss(example) - kLn2) < 1e-9);
}

TEST_CASE("dpo_loss matches the frozen softplus value") {
  // beta 0.1 with policy gains of +2.0 on chosen and -1.0 on rejected gives
  // margin 0.3; the loss is softplus(-0.3).
  DpoExample example;
  example.beta = 0.1;
  example.lp_pos_policy = 2.0;
  example.lp_neg_policy = -1.0;
  REQUIRE(std::abs(dpo_loss(example) - 0.554355244468527118814588435576) < 1e-12);
}

TEST_CASE("dpo_loss is symmetric around ln 2 and monotone in the margin") {
  SplitMix64 rng(23);
  double prev_loss = std::numeric_limits<double>::infinity();
  for (double z = -30.0; z <= 30.0; z += 0.25) {
    const double loss = dpo_loss(example_with_margin(z));
    REQUIRE(loss < prev_loss);
    prev_loss = loss;
  }
  for (int i = 0; i < 10000; ++i) {
    const double z = (rng.next_unit() - 0.5) * 40.0;
    const double sum = dpo_loss(example_with_margin(z)) + dpo_loss(example_with_margin(-z));
    REQUIRE(sum >= 2.0 * kLn2 - 1e-12);
  }
}

TEST_CASE("dpo_loss survives extreme margins") {
  REQUIRE(dpo_loss(example_with_margin(1000.0)) >= 0.0);
  REQUIRE(dpo_loss(example_with_margin(1000.0)) < 1e-300);
  REQUIRE(dpo_loss(example_with_margin(-1000.0)) == Catch::Approx(1000.0));
  REQUIRE(std::isfinite(dpo_loss(example_with_margin(-1000.0))));
}

TEST_CASE("dpo_loss and dpo_grad validate their inputs") {
  DpoExample bad_beta;
  bad_beta.beta = 0.0;
  REQUIRE_THROWS_AS(dpo_loss(bad_beta), std::invalid_argument);
  REQUIRE_THROWS_AS(dpo_grad(bad_beta), std::invalid_argument);

  DpoExample bad_lp;
  bad_lp.lp_neg_ref = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(dpo_loss(bad_lp), std::invalid_argument);
  bad_lp.lp_neg_ref = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(dpo_grad(bad_lp), std::invalid_argument);
}

TEST_CASE("dpo_grad at zero margin splits evenly") {
  DpoExample example;
  const auto [g_pos, g_neg] = dpo_grad(example);
  REQUIRE(std::abs(g_pos - (-0.05)) < 1e-12);
  REQUIRE(std::abs(g_neg - 0.05) < 1e-12);
}

TEST_CASE("dpo_grad components are exact negatives") {
  SplitMix64 rng(29);
  for (int i = 0; i < 1000; ++i) {
    DpoExample example;
    example.beta = 0.05 + rng.next_unit();
    example.lp_pos_policy = (rng.next_unit() - 0.5) * 10.0;
    example.lp_pos_ref = (rng.next_unit() - 0.5) * 10.0;
    example.lp_neg_policy = (rng.next_unit() - 0.5) * 10.0;
    example.lp_neg_ref = (rng.next_unit() - 0.5) * 10.0;
    const auto [g_pos, g_neg] = dpo_grad(example);
    REQUIRE(g_pos + g_neg == 0.0);
    REQUIRE(g_pos <= 0.0);
    REQUIRE(g_neg >= 0.0);
  }
}

TEST_CASE("dpo_grad matches finite differences") {
  SplitMix64 rng(37);
  const double h = 1e-5;
  for (int i = 0; i < 200; ++i) {
    DpoExample example;
    example.beta = 0.05 + 0.45 * rng.next_unit();
    example.lp_pos_policy = (rng.next_unit() - 0.5) * 6.0;
    example.lp_pos_ref = (rng.next_unit() - 0.5) * 6.0;
    example.lp_neg_policy = (rng.next_unit() - 0.5) * 6.0;
    example.lp_neg_ref = (rng.next_unit() - 0.5) * 6.0;

    const auto [g_pos, g_neg] = dpo_grad(example);

    DpoExample up = example, down = example;
    up.lp_pos_policy += h;
    down.lp_pos_policy -= h;
    const double fd_pos = (dpo_loss(up) - dpo_loss(down)) / (2.0 * h);
    REQUIRE(std::abs(fd_pos - g_pos) <= 1e-6 * std::max(1.0, std::abs(g_pos)));

    up = example;
    down = example;
    up.lp_neg_policy += h;
    down.lp_neg_policy -= h;
    const double fd_neg = (dpo_loss(up) - dpo_loss(down)) / (2.0 * h);
    REQUIRE(std::abs(fd_neg - g_neg) <= 1e-6 * std::max(1.0, std::abs(g_neg)));
  }
}

TEST_CASE("toy_train descends from ln 2 on a single fresh pair") {
  const std::vector<DpoExample> seeds = {DpoExample{}};
  const auto result = toy_train(seeds, 100, 0.5, 1.0);
  REQUIRE(result.trace.size() == 101);
  REQUIRE(result.trace.front() == Catch::Approx(kLn2).margin(1e-12));
  REQUIRE(result.trace.back() < result.trace.front());
}

TEST_CASE("toy_train with zero steps reports only the initial loss") {
  const std::vector<DpoExample> seeds = {DpoExample{}};
  const auto result = toy_train(seeds, 0, 0.1, 0.1);
  REQUIRE(result.trace.size() == 1);
  REQUIRE(result.trace.front() == Catch::Approx(kLn2).margin(1e-12));
  REQUIRE(result.policy.lp_pos == std::vector<double>{0.0});
}

TEST_CASE("toy_train monotonically improves every pair's margin") {
  SplitMix64 rng(41);
  std::vector<DpoExample> seeds;
  for (int i = 0; i < 8; ++i) {
    DpoExample seed;
    seed.lp_pos_policy = (rng.next_unit() - 0.5) * 4.0;
    seed.lp_pos_ref = seed.lp_pos_policy;
    seed.lp_neg_policy = (rng.next_unit() - 0.5) * 4.0;
    seed.lp_neg_ref = seed.lp_neg_policy;
    seeds.push_back(seed);
  }
  std::vector<double> initial_margins;
  for (const auto& seed : seeds) initial_margins.push_back(detail::dpo_margin(seed));

  const auto result = toy_train(seeds, 500, 0.1, 0.1);
  REQUIRE(result.trace.size() == 501);
  for (std::size_t i = 1; i < result.trace.size(); ++i)
    REQUIRE(result.trace[i] <= result.trace[i - 1]);
  REQUIRE(result.trace.back() < result.trace.front());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const double margin = detail::dpo_margin(result.policy.example(i));
    REQUIRE(margin > initial_margins[i]);
  }
}

TEST_CASE("toy_train cannot be made to oscillate by a huge learning rate") {
  // The update moves both sides of every pair in the loss-reducing direction
  // whatever the step size, so the trace never increases and the divergence
  // guard stays dormant.
  const std::vector<DpoExample> seeds = {DpoExample{}, DpoExample{}};
  const auto result = toy_train(seeds, 200, 1e6, 0.1);
  for (std::size_t i = 1; i < result.trace.size(); ++i)
    REQUIRE(result.trace[i] <= result.trace[i - 1]);
}

TEST_CASE("toy_train validates its arguments") {
  const std::vector<DpoExample> seeds = {DpoExample{}};
  REQUIRE_THROWS_AS(toy_train({}, 10, 0.1, 0.1), std::invalid_argument);
  REQUIRE_THROWS_AS(toy_train(seeds, 10, 0.0, 0.1), std::invalid_argument);
  REQUIRE_THROWS_AS(toy_train(seeds, 10, 0.1, 0.0), std::invalid_argument);
}

TEST_CASE("toy_train overrides per-seed beta with the run beta") {
  std::vector<DpoExample> seeds = {DpoExample{}};
  seeds[0].beta = 0.9;
  const auto result = toy_train(seeds, 1, 0.1, 0.25);
  REQUIRE(result.policy.beta == 0.25);
}

TEST_CASE("preference datasets round-trip through JSONL") {
  QAInstance inst;
  inst.id = "t:1";
  inst.question = "Q?";
  inst.gold_answers = {"gold"};
  inst.passages = {{"t:1:p0", std::nullopt, "The gold text."}};
  const auto set = make_set({{PathKind::Internal, 0.0},
                             {PathKind::External, 1.0},
                             {PathKind::ClueAnchored, 1.0}});
  const auto pair = select_pair(set, inst);
  REQUIRE(pair.has_value());

  const auto path =
      (std::filesystem::temp_directory_path() / "clueanchor_prefs_test.jsonl").string();
  REQUIRE(emit_preference_dataset({*pair, *pair}, path) == 2);
  const auto records = load_preference_dataset(path);
  REQUIRE(records.size() == 2);
  REQUIRE(records[0] == to_record(*pair));
  REQUIRE(records[0] == records[1]);
  REQUIRE(records[0].chosen_kind == "external");
  REQUIRE(records[0].rejected_kind == "internal");
  std::filesystem::remove(path);
}

TEST_CASE("emit_preference_dataset rejects non-positive reward gaps") {
  PreferencePair pair;
  pair.instance_id = "t:9";
  pair.chosen = make_path(PathKind::External, 1.0);
  pair.rejected = make_path(PathKind::Internal, 1.0);
  pair.chosen_reward = 1.0;
  pair.rejected_reward = 1.0;
  const auto path =
      (std::filesystem::temp_directory_path() / "clueanchor_prefs_bad.jsonl").string();
  REQUIRE_THROWS_WITH(emit_preference_dataset({pair}, path),
                      ContainsSubstring("violates chosen_reward > rejected_reward"));
  std::filesystem::remove(path);
}

TEST_CASE("load_preference_dataset reports malformed rows") {
  const auto path =
      (std::filesystem::temp_directory_path() / "clueanchor_prefs_malformed.jsonl").string();
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "{}\n";
  }
  REQUIRE_THROWS_WITH(load_preference_dataset(path), ContainsSubstring("line 1"));
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "nope\n";
  }
  REQUIRE_THROWS_WITH(load_preference_dataset(path), ContainsSubstring("malformed JSON"));
  std::filesystem::remove(path);
  REQUIRE_THROWS_WITH(load_preference_dataset(path), ContainsSubstring("cannot open"));
}
