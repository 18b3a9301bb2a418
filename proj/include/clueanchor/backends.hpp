#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include <json.hpp>

#include "clueanchor/corpus.hpp"
#include "clueanchor/reward.hpp"
#include "clueanchor/rng.hpp"

namespace clueanchor {

struct GenParams {
  double temperature = 0.0;
  int max_tokens = 512;
  std::optional<std::vector<std::string>> stop;
  std::optional<std::uint64_t> seed;
};

inline GenParams make_gen_params(double temperature, int max_tokens) {
  GenParams params;
  params.temperature = temperature;
  params.max_tokens = max_tokens;
  return params;
}

inline void validate(const GenParams& params) {
  if (params.max_tokens < 1)
    throw std::invalid_argument("GenParams: max_tokens must be >= 1");
  if (params.temperature < 0.0)
    throw std::invalid_argument("GenParams: temperature must be non-negative");
}

enum class BackendErrorKind { transport, rate_limited, bad_response, exhausted_retries };

inline const char* to_string(BackendErrorKind kind) {
  switch (kind) {
    case BackendErrorKind::transport: return "transport";
    case BackendErrorKind::rate_limited: return "rate_limited";
    case BackendErrorKind::bad_response: return "bad_response";
    case BackendErrorKind::exhausted_retries: return "exhausted_retries";
  }
  return "?";
}

class BackendError : public std::runtime_error {
 public:
  BackendError(BackendErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail),
        kind_(kind),
        detail_(detail) {}

  BackendErrorKind kind() const { return kind_; }
  const std::string& detail() const { return detail_; }

 private:
  BackendErrorKind kind_;
  std::string detail_;
};

// Value-or-error slot used by map_bounded: a failed item must not poison the
// rest of the batch, so the error travels in the item's own slot.
template <typename T>
class Fallible {
 public:
  Fallible(T value) : state_(std::move(value)) {}
  Fallible(BackendError error) : state_(std::move(error)) {}

  bool ok() const { return std::holds_alternative<T>(state_); }

  const T& value() const {
    if (!ok()) throw std::get<BackendError>(state_);
    return std::get<T>(state_);
  }

  T& value() {
    if (!ok()) throw std::get<BackendError>(state_);
    return std::get<T>(state_);
  }

  const BackendError& error() const {
    if (ok()) throw std::logic_error("Fallible: no error present");
    return std::get<BackendError>(state_);
  }

 private:
  std::variant<T, BackendError> state_;
};

class GenerationProvider {
 public:
  virtual ~GenerationProvider() = default;
  virtual std::string generate(const std::string& prompt, const GenParams& params) = 0;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  // Raw provider vectors; callers go through embed() below, which owns
  // normalization.
  virtual std::vector<std::vector<double>> embed_raw(const std::vector<std::string>& texts) = 0;
};

// Embeds a batch and L2-normalizes every vector, whatever the provider
// returned. A zero vector (possible only for degenerate inputs under the
// mock) passes through unchanged; cosine against it is 0 by convention.
inline std::vector<std::vector<double>> embed(EmbeddingProvider& provider,
                                              const std::vector<std::string>& texts) {
  if (texts.empty()) throw std::invalid_argument("embed: texts must be non-empty");
  for (const auto& t : texts)
    if (t.empty()) throw std::invalid_argument("embed: every text must be non-empty");
  std::vector<std::vector<double>> vectors = provider.embed_raw(texts);
  if (vectors.size() != texts.size())
    throw BackendError(BackendErrorKind::bad_response,
                       "embedding count mismatch: got " + std::to_string(vectors.size()) +
                           " vectors for " + std::to_string(texts.size()) + " texts");
  for (auto& v : vectors) {
    double norm_sq = 0.0;
    for (double x : v) norm_sq += x * x;
    if (norm_sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : v) x *= inv;
  }
  return vectors;
}

namespace detail {

// Pulls a slot value back out of a rendered prompt. The mocks below answer
// from the prompt text alone, so they re-read the labeled sections the
// templates wrote.
inline std::optional<std::string> prompt_section(std::string_view prompt, std::string_view label,
                                                 std::initializer_list<std::string_view> enders,
                                                 bool last_occurrence = false) {
  std::size_t pos = last_occurrence ? prompt.rfind(label) : prompt.find(label);
  if (pos == std::string_view::npos) return std::nullopt;
  const std::size_t begin = pos + label.size();
  std::size_t end = prompt.size();
  for (std::string_view ender : enders) {
    const auto e = prompt.find(ender, begin);
    if (e != std::string_view::npos && e < end) end = e;
  }
  return std::string(prompt.substr(begin, end - begin));
}

}  // namespace detail

// Deterministic test double with one rule: it answers correctly exactly when
// a gold alias for the question appears in the prompt's background section.
// That single rule makes noise-harness accuracies predictable by hand.
// Questions listed in `known_without_context` are also answered correctly
// from an internal-style prompt, which lets tests exercise the
// internal-knowledge stratum.
class OracleMockGenerator : public GenerationProvider {
 public:
  explicit OracleMockGenerator(const std::vector<QAInstance>& dataset,
                               std::unordered_set<std::string> known_without_context = {})
      : known_without_context_(std::move(known_without_context)) {
    for (const auto& instance : dataset) gold_by_question_[instance.question] = instance.gold_answers;
  }

  std::string generate(const std::string& prompt, const GenParams& params) override {
    validate(params);
    if (prompt.empty()) throw std::invalid_argument("generate: prompt must be non-empty");

    const auto background =
        detail::prompt_section(prompt, "\n\nBackground: ",
                               {"\n\nKey clue information: ", "\n\nQuestion: "});
    const auto question =
        detail::prompt_section(prompt, "\n\nQuestion: ", {"\n\nAnswer:"}, /*last_occurrence=*/true);
    if (!question)
      throw BackendError(BackendErrorKind::bad_response, "oracle mock: prompt has no question");

    if (prompt.ends_with("Extracted supporting content:")) {
      const auto answer = detail::prompt_section(prompt, "\n\nAnswer: ",
                                                 {"\n\nExtracted supporting content:"},
                                                 /*last_occurrence=*/true);
      if (!background || !answer)
        throw BackendError(BackendErrorKind::bad_response,
                           "oracle mock: malformed extraction prompt");
      const std::string target = normalize_answer(*answer);
      for (const auto& sentence : segment_sentences(*background)) {
        if (!target.empty() && normalize_answer(sentence).find(target) != std::string::npos)
          return sentence;
      }
      return "";
    }

    const auto it = gold_by_question_.find(*question);
    if (it == gold_by_question_.end())
      throw BackendError(BackendErrorKind::bad_response,
                         "oracle mock: unknown question: " + *question);
    const std::vector<std::string>& gold = it->second;

    bool supported = false;
    if (background) {
      const std::string normalized_background = normalize_answer(*background);
      for (const auto& alias : gold) {
        const std::string g = normalize_answer(alias);
        if (!g.empty() && normalized_background.find(g) != std::string::npos) {
          supported = true;
          break;
        }
      }
    } else if (known_without_context_.contains(*question)) {
      return "<think>Recalling this directly.</think> <answer>" + gold.front() + "</answer>";
    }

    if (supported)
      return "<think>The background states the answer.</think> <answer>" + gold.front() +
             "</answer>";
    return "<think>No supporting information was found.</think> <answer>unknown</answer>";
  }

 private:
  std::unordered_map<std::string, std::vector<std::string>> gold_by_question_;
  std::unordered_set<std::string> known_without_context_;
};

// Replays a fixed reply table keyed by the FNV-1a hash of the full prompt.
// A prompt without an entry is an error rather than a silent default, so a
// fixture that drifts out of sync with the code fails loudly.
class ScriptedMockGenerator : public GenerationProvider {
 public:
  ScriptedMockGenerator() = default;

  void add(const std::string& prompt, std::string reply) {
    replies_[fnv1a64(prompt)] = std::move(reply);
  }

  void add_by_hash(std::uint64_t prompt_hash, std::string reply) {
    replies_[prompt_hash] = std::move(reply);
  }

  // JSONL rows: {"prompt": str, "reply": str} or {"prompt_hash": str-of-u64,
  // "reply": str}.
  static ScriptedMockGenerator load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open scripted reply file: " + path);
    ScriptedMockGenerator gen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
      if (row.is_discarded() || !row.is_object() || !row.contains("reply"))
        throw std::runtime_error("scripted reply file " + path + " line " +
                                 std::to_string(line_no) + ": malformed row");
      if (row.contains("prompt"))
        gen.add(row["prompt"].get<std::string>(), row["reply"].get<std::string>());
      else if (row.contains("prompt_hash"))
        gen.add_by_hash(std::stoull(row["prompt_hash"].get<std::string>()),
                        row["reply"].get<std::string>());
      else
        throw std::runtime_error("scripted reply file " + path + " line " +
                                 std::to_string(line_no) + ": needs prompt or prompt_hash");
    }
    return gen;
  }

  std::string generate(const std::string& prompt, const GenParams& params) override {
    validate(params);
    if (prompt.empty()) throw std::invalid_argument("generate: prompt must be non-empty");
    const auto it = replies_.find(fnv1a64(prompt));
    if (it == replies_.end())
      throw BackendError(BackendErrorKind::bad_response,
                         "scripted mock: no reply for prompt hash " +
                             std::to_string(fnv1a64(prompt)));
    return it->second;
  }

 private:
  std::unordered_map<std::uint64_t, std::string> replies_;
};

// Deterministic embedder: lowercase alphanumeric tokens hashed into a fixed
// number of count buckets. All coordinates are non-negative, so cosines land
// in [0, 1]; texts with equal token multisets embed identically.
class BagOfTokensEmbedder : public EmbeddingProvider {
 public:
  explicit BagOfTokensEmbedder(std::size_t dimensions = 4096) : dimensions_(dimensions) {
    if (dimensions_ == 0)
      throw std::invalid_argument("BagOfTokensEmbedder: dimensions must be >= 1");
  }

  std::vector<std::vector<double>> embed_raw(const std::vector<std::string>& texts) override {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
      std::vector<double> v(dimensions_, 0.0);
      std::string token;
      for (unsigned char c : text) {
        if (c < 0x80 && std::isalnum(c)) {
          token += static_cast<char>(std::tolower(c));
        } else if (!token.empty()) {
          v[fnv1a64(token) % dimensions_] += 1.0;
          token.clear();
        }
      }
      if (!token.empty()) v[fnv1a64(token) % dimensions_] += 1.0;
      out.push_back(std::move(v));
    }
    return out;
  }

  std::size_t dimensions() const { return dimensions_; }

 private:
  std::size_t dimensions_;
};

struct RetryPolicy {
  int retries = 3;
  double initial_backoff_ms = 100.0;
  double backoff_multiplier = 2.0;
  double max_backoff_ms = 5000.0;
};

// Runs `fn` with up to 1 + policy.retries attempts. Only transport and
// rate_limited failures are retried; backoff grows exponentially with a
// jitter factor in [0.5, 1.5) drawn from the call seed, so a test can pin
// the exact schedule. When the budget runs out the last error is wrapped as
// exhausted_retries.
template <typename Fn>
auto call_with_retry(Fn&& fn, const RetryPolicy& policy, std::uint64_t seed,
                     int* attempts_out = nullptr) -> decltype(fn()) {
  if (policy.retries < 0) throw std::invalid_argument("RetryPolicy: retries must be >= 0");
  const int max_attempts = 1 + policy.retries;
  for (int attempt = 1;; ++attempt) {
    if (attempts_out) *attempts_out = attempt;
    try {
      return fn();
    } catch (const BackendError& e) {
      const bool retryable = e.kind() == BackendErrorKind::transport ||
                             e.kind() == BackendErrorKind::rate_limited;
      if (!retryable) throw;
      if (attempt >= max_attempts)
        throw BackendError(BackendErrorKind::exhausted_retries,
                           "gave up after " + std::to_string(attempt) +
                               " attempts; last error: " + e.what());
      double backoff = policy.initial_backoff_ms;
      for (int i = 1; i < attempt; ++i) backoff *= policy.backoff_multiplier;
      if (backoff > policy.max_backoff_ms) backoff = policy.max_backoff_ms;
      SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
      const double jitter = 0.5 + rng.next_unit();
      const double sleep_ms = backoff * jitter;
      if (sleep_ms > 0.0)
        std::this_thread::sleep_for(
            std::chrono::microseconds(static_cast<std::int64_t>(sleep_ms * 1000.0)));
    }
  }
}

// GenerationProvider decorator adding the retry schedule above. The call
// seed mixes the prompt hash with params.seed so two different calls in one
// run never share a jitter stream.
class RetryingGenerationProvider : public GenerationProvider {
 public:
  RetryingGenerationProvider(GenerationProvider& inner, RetryPolicy policy, std::uint64_t seed)
      : inner_(inner), policy_(policy), seed_(seed) {}

  std::string generate(const std::string& prompt, const GenParams& params) override {
    const std::uint64_t call_seed =
        mix_seed(mix_seed(seed_, fnv1a64(prompt)), params.seed.value_or(0));
    return call_with_retry([&] { return inner_.generate(prompt, params); }, policy_, call_seed);
  }

 private:
  GenerationProvider& inner_;
  RetryPolicy policy_;
  std::uint64_t seed_;
};

class RetryingEmbeddingProvider : public EmbeddingProvider {
 public:
  RetryingEmbeddingProvider(EmbeddingProvider& inner, RetryPolicy policy, std::uint64_t seed)
      : inner_(inner), policy_(policy), seed_(seed) {}

  std::vector<std::vector<double>> embed_raw(const std::vector<std::string>& texts) override {
    std::uint64_t call_seed = seed_;
    for (const auto& t : texts) call_seed = mix_seed(call_seed, fnv1a64(t));
    return call_with_retry([&] { return inner_.embed_raw(texts); }, policy_, call_seed);
  }

 private:
  EmbeddingProvider& inner_;
  RetryPolicy policy_;
  std::uint64_t seed_;
};

// Applies `worker` to every item with at most max_in_flight items running at
// once. Results keep input order and failures stay in their own slots. The
// worker receives a seed derived purely from (seed, index), which is what
// keeps output independent of the parallelism degree.
//
// Worker signature: R worker(const Item& item, std::uint64_t item_seed).
template <typename Item, typename Worker>
auto map_bounded(const std::vector<Item>& items, Worker worker, std::size_t max_in_flight,
                 std::uint64_t seed)
    -> std::vector<Fallible<decltype(worker(items.front(), std::uint64_t{}))>> {
  using Result = decltype(worker(items.front(), std::uint64_t{}));
  if (max_in_flight < 1) throw std::invalid_argument("map_bounded: max_in_flight must be >= 1");

  std::vector<Fallible<Result>> results;
  results.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    results.emplace_back(BackendError(BackendErrorKind::bad_response, "map_bounded: not run"));
  if (items.empty()) return results;

  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      try {
        results[i] = Fallible<Result>(worker(items[i], derive_seed(seed, i)));
      } catch (const BackendError& e) {
        results[i] = Fallible<Result>(e);
      } catch (const std::exception& e) {
        results[i] = Fallible<Result>(BackendError(BackendErrorKind::bad_response,
                                                   std::string("unexpected exception: ") +
                                                       e.what()));
      }
    }
  };

  const std::size_t workers = std::min(max_in_flight, items.size());
  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  return results;
}

}  // namespace clueanchor
