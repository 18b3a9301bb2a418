#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "clueanchor/rng.hpp"

namespace clueanchor {

// One retrieved document. `id` must be unique within an instance's list.
struct Passage {
  std::string id;
  std::optional<std::string> title;
  std::string text;

  bool operator==(const Passage&) const = default;
};

// A question, its acceptable gold answers, and the retrieved passages in
// retrieval-rank order. The list is nominally 10 long but that is a
// convention, not an invariant: noise injection produces longer lists.
struct QAInstance {
  std::string id;
  std::string question;
  std::vector<std::string> gold_answers;
  std::vector<Passage> passages;

  bool operator==(const QAInstance&) const = default;
};

// Distractor passages drawn from other instances of the same dataset.
struct NoisePool {
  std::vector<Passage> passages;
  std::uint64_t seed = 0;
  bool sampled_with_replacement = false;
};

struct DatasetStats {
  std::size_t count = 0;
  std::map<std::size_t, std::size_t> passage_count_histogram;
  double mean_gold_answers = 0.0;
  // Task key = instance-id prefix before the first ':' ("nq:123" -> "nq");
  // ids without a prefix land under "default".
  std::map<std::string, std::size_t> per_task_counts;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void validate_instance(const QAInstance& inst, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  if (inst.id.empty()) throw DatasetError(where + ": empty id");
  if (inst.gold_answers.empty()) throw DatasetError(where + ": empty gold_answers");
  std::unordered_set<std::string> seen;
  for (const Passage& p : inst.passages) {
    if (p.text.empty())
      throw DatasetError(where + ": passage '" + p.id + "' has empty text");
    if (!seen.insert(p.id).second)
      throw DatasetError(where + ": duplicate passage id '" + p.id + "'");
  }
}

inline QAInstance instance_from_json(const nlohmann::json& obj, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  for (const char* field : {"id", "question", "answers", "passages"}) {
    if (!obj.contains(field))
      throw DatasetError(where + ": missing field: " + field);
  }
  QAInstance inst;
  inst.id = obj.at("id").get<std::string>();
  inst.question = obj.at("question").get<std::string>();
  inst.gold_answers = obj.at("answers").get<std::vector<std::string>>();
  for (const auto& pj : obj.at("passages")) {
    if (!pj.contains("id") || !pj.contains("text"))
      throw DatasetError(where + ": passage missing field: " +
                         std::string(pj.contains("id") ? "text" : "id"));
    Passage p;
    p.id = pj.at("id").get<std::string>();
    p.text = pj.at("text").get<std::string>();
    if (pj.contains("title") && !pj.at("title").is_null())
      p.title = pj.at("title").get<std::string>();
    inst.passages.push_back(std::move(p));
  }
  validate_instance(inst, line_no);
  return inst;
}

inline nlohmann::json instance_to_json(const QAInstance& inst) {
  nlohmann::json obj;
  obj["id"] = inst.id;
  obj["question"] = inst.question;
  obj["answers"] = inst.gold_answers;
  nlohmann::json passages = nlohmann::json::array();
  for (const Passage& p : inst.passages) {
    nlohmann::json pj;
    pj["id"] = p.id;
    if (p.title) pj["title"] = *p.title;
    pj["text"] = p.text;
    passages.push_back(std::move(pj));
  }
  obj["passages"] = std::move(passages);
  return obj;
}

}  // namespace detail

// Reads a JSONL dataset, one instance per line, in file order.
// Dataset-level invariant: instance ids are unique.
inline std::vector<QAInstance> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset file: " + path);
  std::vector<QAInstance> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    QAInstance inst = detail::instance_from_json(obj, line_no);
    if (!ids.insert(inst.id).second)
      throw DatasetError("line " + std::to_string(line_no) + ": duplicate instance id '" +
                         inst.id + "'");
    out.push_back(std::move(inst));
  }
  return out;
}

// Writer paired with load_dataset; write-then-load round-trips field for field.
inline std::size_t save_dataset(const std::vector<QAInstance>& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot open for writing: " + path);
  for (const QAInstance& inst : dataset) out << detail::instance_to_json(inst).dump() << '\n';
  out.flush();
  if (!out) throw DatasetError("write failed: " + path);
  return dataset.size();
}

// Samples `size` distractor passages from every instance except `exclude`.
// Sampling is without replacement while the donor passages last; if `size`
// exceeds the number of distinct donor passages the remainder is drawn with
// replacement and the pool is flagged.
inline NoisePool build_noise_pool(const std::vector<QAInstance>& dataset,
                                  const std::string& exclude, std::uint64_t seed,
                                  std::size_t size) {
  if (size < 1) throw DatasetError("noise pool size must be >= 1");
  std::vector<const Passage*> donors;
  for (const QAInstance& inst : dataset) {
    if (inst.id == exclude) continue;
    for (const Passage& p : inst.passages) donors.push_back(&p);
  }
  if (donors.empty())
    throw DatasetError("noise pool: no donor instances besides '" + exclude + "'");

  NoisePool pool;
  pool.seed = seed;
  SplitMix64 rng(seed);
  const std::size_t distinct = std::min(size, donors.size());
  for (std::size_t idx : sample_without_replacement(donors.size(), distinct, rng))
    pool.passages.push_back(*donors[idx]);
  while (pool.passages.size() < size) {
    pool.sampled_with_replacement = true;
    pool.passages.push_back(*donors[rng.next_below(donors.size())]);
  }
  return pool;
}

inline std::string task_of_instance_id(const std::string& id) {
  const auto pos = id.find(':');
  if (pos == std::string::npos || pos == 0) return "default";
  return id.substr(0, pos);
}

inline DatasetStats dataset_stats(const std::vector<QAInstance>& dataset) {
  DatasetStats stats;
  stats.count = dataset.size();
  std::size_t alias_total = 0;
  for (const QAInstance& inst : dataset) {
    stats.passage_count_histogram[inst.passages.size()]++;
    alias_total += inst.gold_answers.size();
    stats.per_task_counts[task_of_instance_id(inst.id)]++;
  }
  stats.mean_gold_answers =
      dataset.empty() ? 0.0 : static_cast<double>(alias_total) / static_cast<double>(dataset.size());
  return stats;
}

}  // namespace clueanchor
