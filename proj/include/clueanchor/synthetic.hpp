#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "clueanchor/corpus.hpp"
#include "clueanchor/rng.hpp"

namespace clueanchor {

// Knobs for the generated QA fixture. Every instance asks for a code word
// that exactly one passage states (two when the double-gold rule fires,
// none when the miss rule fires), so accuracy under any noise scheme can be
// predicted by checking which gold-bearing positions survive.
struct SyntheticOptions {
  std::size_t count = 200;
  std::size_t passages_per_instance = 10;
  // Instance i has no gold-bearing passage iff miss_every > 0 and
  // i % miss_every == miss_every - 1; analogous rule adds a second
  // gold-bearing passage. Zero disables a rule.
  std::size_t miss_every = 10;
  std::size_t double_gold_every = 7;
  std::uint64_t seed = 0;
};

inline std::vector<QAInstance> make_synthetic_dataset(const SyntheticOptions& options) {
  if (options.passages_per_instance < 1)
    throw std::invalid_argument("make_synthetic_dataset: need at least one passage per instance");

  std::vector<QAInstance> dataset;
  dataset.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    SplitMix64 rng(derive_seed(options.seed, i));
    const std::size_t k = options.passages_per_instance;

    char id_buf[32];
    std::snprintf(id_buf, sizeof(id_buf), "synth:%04zu", i);
    const std::string record = "R" + std::to_string(i);
    // The code word embeds the instance index, so no other instance's
    // passages can ever contain it.
    const std::string code =
        "cw" + std::to_string(i) + "x" + std::to_string(1000 + rng.next_below(9000));

    const bool miss =
        options.miss_every > 0 && i % options.miss_every == options.miss_every - 1;
    const bool double_gold = !miss && options.double_gold_every > 0 &&
                             i % options.double_gold_every == options.double_gold_every - 1;
    const std::size_t gold_a = rng.next_below(k);
    const std::size_t gold_b =
        k > 1 ? (gold_a + 1 + rng.next_below(k - 1)) % k : gold_a;

    QAInstance instance;
    instance.id = id_buf;
    instance.question = "What is the code word for record " + record + "?";
    instance.gold_answers = {code};
    for (std::size_t j = 0; j < k; ++j) {
      Passage passage;
      passage.id = std::string(id_buf) + ":p" + std::to_string(j);
      passage.title = "Record " + record + " part " + std::to_string(j);
      const bool bears_gold = !miss && (j == gold_a || (double_gold && j == gold_b));
      if (bears_gold) {
        passage.text = "The code word for record " + record + " is " + code +
                       ". It appears in the official ledger.";
      } else {
        passage.text = "Record " + record + " part " + std::to_string(j) +
                       " covers routine matters filed under reference f" +
                       std::to_string(10000 + rng.next_below(90000)) + ".";
      }
      instance.passages.push_back(std::move(passage));
    }
    dataset.push_back(std::move(instance));
  }
  return dataset;
}

}  // namespace clueanchor
