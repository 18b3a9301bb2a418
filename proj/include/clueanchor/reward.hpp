#pragma once

#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace clueanchor {

namespace detail {

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// ASCII punctuation only; bytes >= 0x80 belong to multi-byte UTF-8 sequences
// and must pass through untouched.
inline bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

}  // namespace detail

// Lowercase, strip punctuation, drop the articles a/an/the as whole words,
// collapse runs of whitespace. Gives a canonical form so that "The Fall of
// 1800." and "fall of 1800" compare equal.
inline std::string normalize_answer(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (unsigned char c : text) {
    if (detail::is_ascii_punct(c)) continue;
    if (c < 0x80)
      lowered += static_cast<char>(std::tolower(c));
    else
      lowered += static_cast<char>(c);
  }

  std::string out;
  out.reserve(lowered.size());
  std::size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && detail::is_ascii_space(lowered[i])) ++i;
    const std::size_t start = i;
    while (i < lowered.size() && !detail::is_ascii_space(lowered[i])) ++i;
    if (i == start) break;
    const std::string_view token(lowered.data() + start, i - start);
    if (token == "a" || token == "an" || token == "the") continue;
    if (!out.empty()) out += ' ';
    out.append(token);
  }
  return out;
}

// Binary task reward: 1 when any gold alias survives normalization and
// appears contiguously inside the normalized prediction. Containment rather
// than equality, so qualified answers ("X (for the first session)") still
// earn the reward.
inline double accuracy_reward(std::string_view prediction,
                              const std::vector<std::string>& gold_answers) {
  if (gold_answers.empty())
    throw std::invalid_argument("accuracy_reward: gold_answers must be non-empty");
  const std::string pred = normalize_answer(prediction);
  for (const auto& gold : gold_answers) {
    const std::string g = normalize_answer(gold);
    if (g.empty()) continue;
    if (pred.find(g) != std::string::npos) return 1.0;
  }
  return 0.0;
}

// Naive sentence splitter: a segment ends at `.`, `?`, or `!` when the next
// byte is whitespace or end of text. No abbreviation handling on purpose;
// the clue-hit metric only needs stable, reproducible segments.
inline std::vector<std::string> segment_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool terminator = c == '.' || c == '?' || c == '!';
    const bool boundary =
        terminator && (i + 1 == text.size() || detail::is_ascii_space(text[i + 1]));
    if (!boundary) continue;
    std::string_view segment = text.substr(start, i + 1 - start);
    while (!segment.empty() && detail::is_ascii_space(segment.front())) segment.remove_prefix(1);
    if (!segment.empty()) out.emplace_back(segment);
    start = i + 1;
  }
  if (start < text.size()) {
    std::string_view tail = text.substr(start);
    while (!tail.empty() && detail::is_ascii_space(tail.front())) tail.remove_prefix(1);
    while (!tail.empty() && detail::is_ascii_space(tail.back())) tail.remove_suffix(1);
    if (!tail.empty()) out.emplace_back(tail);
  }
  return out;
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct ClueHitScore {
  double value = 0.0;
  std::string best_sentence;
};

// How close the reasoning gets to the ground-truth clue: the max cosine
// between any reasoning sentence and the clue, plus the sentence achieving
// it. The embedder is called once for the whole batch (sentences + clue).
template <typename Embedder>
ClueHitScore clue_hit_score(std::string_view reasoning, const std::string& gt_clue,
                            Embedder& embedder) {
  if (gt_clue.empty()) throw std::invalid_argument("clue_hit_score: gt_clue must be non-empty");
  const std::vector<std::string> sentences = segment_sentences(reasoning);
  if (sentences.empty()) return {};

  std::vector<std::string> batch = sentences;
  batch.push_back(gt_clue);
  const std::vector<std::vector<double>> vectors = embed(embedder, batch);
  const std::vector<double>& clue_vec = vectors.back();

  ClueHitScore best;
  best.value = -2.0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const double sim = cosine_similarity(vectors[i], clue_vec);
    if (sim > best.value) {
      best.value = sim;
      best.best_sentence = sentences[i];
    }
  }
  return best;
}

}  // namespace clueanchor
