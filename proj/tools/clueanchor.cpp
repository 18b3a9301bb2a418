// Command-line front end: wires config, corpus, backends, and the pipeline
// stages into reproducible runs that talk to each other only through files.

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clueanchor/clueanchor.hpp"
#include "clueanchor/http_backend.hpp"

namespace fs = std::filesystem;
using namespace clueanchor;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBackendExhausted = 3;

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool resume = false;
  std::optional<std::size_t> max_in_flight;
  bool no_ikr = false;
  bool no_ekr = false;
  bool no_ckr = false;
  bool answer_as_clue = false;
  std::optional<std::string> noise_mode;
  std::optional<std::string> ratios_csv;
  std::optional<std::string> candidates_path;
  std::optional<std::string> preferences_path;
};

std::vector<double> parse_ratios(const std::string& csv) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    auto comma = csv.find(',', pos);
    if (comma == std::string::npos) comma = csv.size();
    const std::string token = csv.substr(pos, comma - pos);
    if (token.empty()) throw ConfigError("--ratios contains an empty entry");
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(token, &used);
    } catch (const std::exception&) {
      throw ConfigError("--ratios entry is not a number: " + token);
    }
    if (used != token.size()) throw ConfigError("--ratios entry is not a number: " + token);
    out.push_back(value);
    pos = comma + 1;
  }
  return out;
}

void apply_overrides(RunConfig& config, const CliOptions& options) {
  if (options.seed) config.seed = *options.seed;
  if (options.out) config.out_dir = *options.out;
  if (options.max_in_flight) config.max_in_flight = *options.max_in_flight;
  if (options.no_ikr) config.enable_ikr = false;
  if (options.no_ekr) config.enable_ekr = false;
  if (options.no_ckr) config.enable_ckr = false;
  if (options.answer_as_clue) config.answer_as_clue = true;
  if (options.noise_mode) config.noise_mode = *options.noise_mode;
  if (options.ratios_csv) config.ratios = parse_ratios(*options.ratios_csv);
}

std::string now_iso8601() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Generation and embedding providers plus the decorators that own retry.
// The raw providers must outlive the wrappers, hence one bundle.
struct Backends {
  std::unique_ptr<GenerationProvider> raw_gen;
  std::unique_ptr<GenerationProvider> gen;
  std::unique_ptr<EmbeddingProvider> raw_embed;
  std::unique_ptr<EmbeddingProvider> embed;
};

Backends make_backends(const RunConfig& config, const std::vector<QAInstance>& dataset) {
  Backends b;
  if (config.backend == "oracle") {
    std::unordered_set<std::string> known(config.oracle_known_questions.begin(),
                                          config.oracle_known_questions.end());
    b.raw_gen = std::make_unique<OracleMockGenerator>(dataset, std::move(known));
  } else if (config.backend == "scripted") {
    b.raw_gen = std::make_unique<ScriptedMockGenerator>(
        ScriptedMockGenerator::load_jsonl(config.scripted_replies_path));
  } else {
    HttpBackendConfig http;
    http.base_url = config.http_base_url;
    http.model = config.http_model;
    http.embedding_model = config.http_embedding_model;
    http.timeout_ms = config.http_timeout_ms;
    http.api_key = config.http_api_key;
    b.raw_gen = std::make_unique<OpenAiHttpBackend>(http);
  }
  RetryPolicy policy;
  policy.retries = config.retries;
  b.gen = std::make_unique<RetryingGenerationProvider>(*b.raw_gen, policy,
                                                       derive_seed(config.seed, "retry_gen"));

  if (config.embedder == "bag_of_tokens") {
    b.raw_embed = std::make_unique<BagOfTokensEmbedder>(config.embedder_dimensions);
  } else {
    HttpBackendConfig http;
    http.base_url = config.http_base_url;
    http.model = config.http_model;
    http.embedding_model = config.http_embedding_model;
    http.timeout_ms = config.http_timeout_ms;
    http.api_key = config.http_api_key;
    b.raw_embed = std::make_unique<OpenAiHttpBackend>(http);
  }
  b.embed = std::make_unique<RetryingEmbeddingProvider>(*b.raw_embed, policy,
                                                        derive_seed(config.seed, "retry_embed"));
  return b;
}

struct RunContext {
  std::string command;
  RunConfig config;
  CliOptions options;
  fs::path out_dir;

  fs::path artifact(const std::string& name) const { return out_dir / name; }
};

std::optional<nlohmann::json> read_manifest(const fs::path& out_dir) {
  std::ifstream in(out_dir / "manifest.json", std::ios::binary);
  if (!in) return std::nullopt;
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

void write_manifest(const RunContext& ctx, const std::string& status,
                    const std::string& started_at, const nlohmann::json& counts,
                    const std::vector<std::string>& artifacts,
                    std::size_t completed_count = 0) {
  nlohmann::json m;
  m["command"] = ctx.command;
  m["status"] = status;
  m["seed"] = ctx.config.seed;
  m["started_at"] = started_at;
  m["ended_at"] = now_iso8601();
  m["config"] = ctx.config.raw;
  nlohmann::json effective;
  effective["out_dir"] = ctx.config.out_dir;
  effective["max_in_flight"] = ctx.config.max_in_flight;
  effective["backend"] = ctx.config.backend;
  effective["enable_ikr"] = ctx.config.enable_ikr;
  effective["enable_ekr"] = ctx.config.enable_ekr;
  effective["enable_ckr"] = ctx.config.enable_ckr;
  effective["answer_as_clue"] = ctx.config.answer_as_clue;
  effective["noise_mode"] = ctx.config.noise_mode;
  effective["ratios"] = ctx.config.ratios;
  m["effective"] = effective;
  m["counts"] = counts;
  m["artifacts"] = artifacts;
  if (completed_count > 0 || status == "partial") m["completed_count"] = completed_count;

  const fs::path tmp = ctx.out_dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest: " + tmp.string());
    out << m.dump(2) << '\n';
  }
  fs::rename(tmp, ctx.out_dir / "manifest.json");
}

// A completed run is never touched again: --resume on it is a no-op so its
// artifact bytes stay exactly as they were.
bool resume_already_complete(const RunContext& ctx) {
  if (!ctx.options.resume) return false;
  const auto manifest = read_manifest(ctx.out_dir);
  return manifest && manifest->value("command", "") == ctx.command &&
         manifest->value("status", "") == "complete";
}

std::ofstream open_trunc(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  return out;
}

std::string json_number(double value) { return nlohmann::json(value).dump(); }

std::vector<QAInstance> load_required_dataset(const RunContext& ctx) {
  if (ctx.config.dataset_path.empty())
    throw ConfigError(ctx.command + " needs a dataset path in the config");
  return load_dataset(ctx.config.dataset_path);
}

int cmd_validate_config(RunContext& ctx) {
  std::cout << "config ok: " << ctx.options.config_path << "\n";
  return kExitOk;
}

int cmd_build_dataset(RunContext& ctx) {
  const std::string started = now_iso8601();
  std::vector<QAInstance> dataset;
  if (ctx.config.synthetic) {
    dataset = make_synthetic_dataset(*ctx.config.synthetic);
  } else if (!ctx.config.dataset_path.empty()) {
    dataset = load_dataset(ctx.config.dataset_path);
  } else {
    throw ConfigError("build-dataset needs either a dataset path or a synthetic block");
  }

  save_dataset(dataset, ctx.artifact("dataset.jsonl").string());
  const DatasetStats stats = dataset_stats(dataset);
  {
    nlohmann::json j;
    j["count"] = stats.count;
    nlohmann::json histogram = nlohmann::json::object();
    for (const auto& [passages, n] : stats.passage_count_histogram)
      histogram[std::to_string(passages)] = n;
    j["passage_count_histogram"] = histogram;
    j["mean_gold_answers"] = stats.mean_gold_answers;
    j["per_task_counts"] = stats.per_task_counts;
    auto out = open_trunc(ctx.artifact("stats.json"));
    out << j.dump(2) << '\n';
  }
  write_manifest(ctx, "complete", started, {{"instances", dataset.size()}},
                 {"dataset.jsonl", "stats.json"});
  std::cout << "wrote " << dataset.size() << " instances to "
            << ctx.artifact("dataset.jsonl").string() << "\n";
  return kExitOk;
}

// Validates that the existing candidate file is a prefix of this dataset's
// run and trims anything past the manifest's completed count (a crash can
// leave a torn tail). Returns how many instances are already done.
std::size_t prepare_resume(const RunContext& ctx, const std::vector<QAInstance>& dataset) {
  if (!ctx.options.resume) return 0;
  const auto manifest = read_manifest(ctx.out_dir);
  if (!manifest || manifest->value("command", "") != ctx.command) return 0;
  const auto claimed = manifest->value("completed_count", std::size_t{0});
  if (claimed == 0) return 0;

  std::ifstream in(ctx.artifact("candidates.jsonl"), std::ios::binary);
  if (!in) return 0;
  std::vector<std::string> kept_lines;
  std::vector<std::string> group_ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object() || !row.contains("instance_id")) break;
    const std::string id = row["instance_id"].get<std::string>();
    if (group_ids.empty() || group_ids.back() != id) {
      if (group_ids.size() == claimed) break;
      group_ids.push_back(id);
    }
    kept_lines.push_back(line);
  }
  in.close();

  const std::size_t completed = std::min(claimed, group_ids.size());
  for (std::size_t i = 0; i < completed; ++i) {
    if (i >= dataset.size() || group_ids[i] != dataset[i].id)
      throw std::runtime_error(
          "resume: candidates.jsonl does not match the configured dataset; rerun without "
          "--resume");
  }
  auto out = open_trunc(ctx.artifact("candidates.jsonl"));
  for (const auto& kept : kept_lines) out << kept << '\n';
  return completed;
}

int cmd_explore(RunContext& ctx) {
  const std::string started = now_iso8601();
  const std::vector<QAInstance> dataset = load_required_dataset(ctx);
  const Backends backends = make_backends(ctx.config, dataset);
  const PromptTemplates templates = templates_from_config(ctx.config);

  ExplorationConfig base;
  base.enable_internal = ctx.config.enable_ikr;
  base.enable_external = ctx.config.enable_ekr;
  base.enable_clue_anchored = ctx.config.enable_ckr;
  base.answer_as_clue = ctx.config.answer_as_clue;
  base.path_params = ctx.config.explore_params;
  base.clue_params = ctx.config.clue_params;
  if (!base.enable_internal && !base.enable_external && !base.enable_clue_anchored)
    throw ConfigError("explore: all path kinds are disabled");

  std::size_t completed = prepare_resume(ctx, dataset);
  const std::uint64_t explore_seed = derive_seed(ctx.config.seed, "explore");

  std::ofstream out(ctx.artifact("candidates.jsonl"),
                    completed > 0 ? std::ios::binary | std::ios::app
                                  : std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open candidates.jsonl for writing");

  std::optional<BackendError> fatal;
  const std::size_t chunk = std::max<std::size_t>(ctx.config.max_in_flight * 4, 8);
  while (completed < dataset.size() && !fatal) {
    const std::size_t end = std::min(completed + chunk, dataset.size());
    std::vector<std::size_t> indices;
    for (std::size_t i = completed; i < end; ++i) indices.push_back(i);

    const auto results = map_bounded(
        indices,
        [&](const std::size_t& gi, std::uint64_t) {
          ExplorationConfig ec = base;
          ec.path_params.seed = derive_seed(explore_seed, gi);
          ec.clue_params.seed = derive_seed(explore_seed, gi);
          return explore_paths(dataset[gi], ec, *backends.gen, templates);
        },
        ctx.config.max_in_flight, explore_seed);

    for (const auto& slot : results) {
      if (!slot.ok()) {
        fatal = slot.error();
        break;
      }
      for (const auto& path : slot.value().paths)
        out << path_to_json(slot.value().instance_id, path).dump() << '\n';
      ++completed;
    }
    out.flush();
    if (!out) throw std::runtime_error("write failed: candidates.jsonl");
    write_manifest(ctx, "partial", started, {{"instances_completed", completed}},
                   {"candidates.jsonl"}, completed);
  }

  // Final counts come from the artifact so resumed runs report the whole
  // file, not just this process's share.
  nlohmann::json counts;
  counts["instances"] = completed;
  std::size_t total_paths = 0;
  std::map<std::string, std::size_t> by_kind;
  std::map<std::string, std::size_t> by_clue_status;
  {
    std::ifstream check(ctx.artifact("candidates.jsonl"), std::ios::binary);
    std::string line;
    while (std::getline(check, line)) {
      if (line.empty()) continue;
      nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
      if (row.is_discarded()) continue;
      ++total_paths;
      ++by_kind[row.value("kind", "?")];
      ++by_clue_status[row.value("clue_status", "?")];
    }
  }
  counts["paths"] = total_paths;
  counts["paths_by_kind"] = by_kind;
  counts["paths_by_clue_status"] = by_clue_status;

  if (fatal) {
    write_manifest(ctx, "partial", started, counts, {"candidates.jsonl"}, completed);
    throw *fatal;
  }
  write_manifest(ctx, "complete", started, counts, {"candidates.jsonl"}, completed);
  std::cout << "explored " << completed << " instances, " << total_paths << " paths -> "
            << ctx.artifact("candidates.jsonl").string() << "\n";
  return kExitOk;
}

int cmd_select_pairs(RunContext& ctx) {
  const std::string started = now_iso8601();
  const std::vector<QAInstance> dataset = load_required_dataset(ctx);
  const PromptTemplates templates = templates_from_config(ctx.config);

  const fs::path candidates_path = ctx.options.candidates_path
                                       ? fs::path(*ctx.options.candidates_path)
                                       : ctx.artifact("candidates.jsonl");
  std::ifstream in(candidates_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open candidates file: " + candidates_path.string());
  std::vector<CandidateSet> sets = load_candidates(in);

  std::map<std::string, const QAInstance*> by_id;
  for (const auto& instance : dataset) by_id[instance.id] = &instance;

  std::vector<PreferencePair> pairs;
  std::size_t filtered = 0;
  for (auto& set : sets) {
    const auto it = by_id.find(set.instance_id);
    if (it == by_id.end())
      throw std::runtime_error("candidates reference unknown instance: " + set.instance_id);
    for (auto& path : set.paths)
      path.reward = accuracy_reward(path.parsed.answer, it->second->gold_answers);
    auto pair = select_pair(set, *it->second, TieOrder::standard(), templates);
    if (pair)
      pairs.push_back(std::move(*pair));
    else
      ++filtered;
  }

  const std::size_t written =
      emit_preference_dataset(pairs, ctx.artifact("preferences.jsonl").string());
  write_manifest(ctx, "complete", started,
                 {{"candidate_sets", sets.size()}, {"pairs", written}, {"filtered", filtered}},
                 {"preferences.jsonl"});
  std::cout << "selected " << written << " pairs (" << filtered << " filtered) -> "
            << ctx.artifact("preferences.jsonl").string() << "\n";
  return kExitOk;
}

std::size_t count_exhausted(const std::vector<InstanceEval>& records) {
  std::size_t n = 0;
  for (const auto& r : records)
    if (r.failed && r.error.find("exhausted_retries") != std::string::npos) ++n;
  return n;
}

int cmd_eval(RunContext& ctx) {
  const std::string started = now_iso8601();
  const std::vector<QAInstance> dataset = load_required_dataset(ctx);
  const Backends backends = make_backends(ctx.config, dataset);
  const PromptTemplates templates = templates_from_config(ctx.config);

  const AccuracyReport internal = evaluate_accuracy(
      dataset, *backends.gen, EvalMode::InternalOnly, ctx.config.eval_params,
      ctx.config.max_in_flight, derive_seed(ctx.config.seed, "eval_internal"), templates);
  const AccuracyReport with_context = evaluate_accuracy(
      dataset, *backends.gen, EvalMode::WithContext, ctx.config.eval_params,
      ctx.config.max_in_flight, derive_seed(ctx.config.seed, "eval_context"), templates);

  std::map<std::string, double> internal_rewards;
  for (const auto& r : internal.records) internal_rewards[r.instance_id] = r.reward;
  const auto buckets = stratify_conditions(dataset, internal_rewards);

  EvalReport report;
  report.bucket_reference_backend = ctx.config.backend;
  for (const AccuracyReport* fragment : {&internal, &with_context}) {
    const std::string mode = to_string(fragment->mode);
    report.accuracy_by_mode[mode] = fragment->accuracy;
    report.count_by_mode[mode] = fragment->count;
    report.failures_by_mode[mode] = fragment->failures;
  }
  std::map<std::string, double> bucket_total;
  std::map<std::string, std::size_t> bucket_count;
  for (const auto& r : with_context.records) {
    const std::string bucket = to_string(buckets.at(r.instance_id));
    bucket_total[bucket] += r.reward;
    bucket_count[bucket] += 1;
  }
  for (const auto& [bucket, total] : bucket_total) {
    report.accuracy_by_bucket[bucket] = total / static_cast<double>(bucket_count[bucket]);
    report.count_by_bucket[bucket] = bucket_count[bucket];
  }

  {
    auto out = open_trunc(ctx.artifact("report.json"));
    out << to_json(report).dump(2) << '\n';
  }
  {
    auto out = open_trunc(ctx.artifact("accuracy_by_mode.csv"));
    out << "mode,accuracy,count,failures\n";
    for (const auto& [mode, accuracy] : report.accuracy_by_mode)
      out << mode << ',' << json_number(accuracy) << ',' << report.count_by_mode[mode] << ','
          << report.failures_by_mode[mode] << '\n';
  }
  {
    auto out = open_trunc(ctx.artifact("accuracy_by_bucket.csv"));
    out << "bucket,accuracy,count\n";
    for (const auto& [bucket, accuracy] : report.accuracy_by_bucket)
      out << bucket << ',' << json_number(accuracy) << ',' << report.count_by_bucket[bucket]
          << '\n';
  }
  {
    auto out = open_trunc(ctx.artifact("eval_records.jsonl"));
    for (const AccuracyReport* fragment : {&internal, &with_context}) {
      for (const auto& r : fragment->records) {
        nlohmann::json row;
        row["instance_id"] = r.instance_id;
        row["mode"] = to_string(fragment->mode);
        row["answer"] = r.answer;
        row["parse_status"] = to_string(r.parse_status);
        row["reward"] = r.reward;
        row["failed"] = r.failed;
        if (r.failed) row["error"] = r.error;
        if (fragment->mode == EvalMode::WithContext)
          row["bucket"] = to_string(buckets.at(r.instance_id));
        out << row.dump() << '\n';
      }
    }
  }

  const std::size_t exhausted =
      count_exhausted(internal.records) + count_exhausted(with_context.records);
  const std::vector<std::string> artifacts = {"report.json", "accuracy_by_mode.csv",
                                              "accuracy_by_bucket.csv", "eval_records.jsonl"};
  nlohmann::json counts = {{"instances", dataset.size()},
                           {"failures", internal.failures + with_context.failures}};
  if (exhausted > 0) {
    write_manifest(ctx, "partial", started, counts, artifacts);
    std::cerr << "error: backend: " << exhausted
              << " instances exhausted retries; rerun to retry them\n";
    return kExitBackendExhausted;
  }
  write_manifest(ctx, "complete", started, counts, artifacts);
  std::cout << "internal_only accuracy " << json_number(internal.accuracy)
            << ", with_context accuracy " << json_number(with_context.accuracy) << " -> "
            << ctx.artifact("report.json").string() << "\n";
  return kExitOk;
}

int cmd_noise_eval(RunContext& ctx) {
  const std::string started = now_iso8601();
  const std::vector<QAInstance> dataset = load_required_dataset(ctx);
  const Backends backends = make_backends(ctx.config, dataset);
  const PromptTemplates templates = templates_from_config(ctx.config);

  NoiseEvalOptions options;
  options.mode = noise_mode_from_string(ctx.config.noise_mode);
  options.ratios = ctx.config.ratios;
  options.seed = derive_seed(ctx.config.seed, "noise");
  options.params = ctx.config.eval_params;
  options.max_in_flight = ctx.config.max_in_flight;
  for (double r : options.ratios)
    if (NoiseSpec{options.mode, r, 0}.exceeds_reference_range())
      std::cerr << "warning: substitution ratio " << json_number(r)
                << " exceeds the reference grid (max 0.8)\n";

  const NoiseReport noise = run_noise_eval(dataset, *backends.gen, options, templates);

  EvalReport report;
  report.noise_curve = noise.points;
  report.noise_mode = std::string(to_string(noise.mode));
  report.slope = noise.slope;
  {
    auto out = open_trunc(ctx.artifact("report.json"));
    out << to_json(report).dump(2) << '\n';
  }
  {
    auto out = open_trunc(ctx.artifact("noise_curve.csv"));
    out << "level,ratio,accuracy,count,failures\n";
    for (std::size_t i = 0; i < noise.points.size(); ++i) {
      const NoisePoint& p = noise.points[i];
      out << i << ',' << json_number(p.ratio) << ',' << json_number(p.accuracy) << ','
          << p.count << ',' << p.failures << '\n';
    }
  }

  std::size_t failures = 0;
  for (const auto& p : noise.points) failures += p.failures;
  nlohmann::json counts = {{"instances", dataset.size()},
                           {"levels", noise.points.size()},
                           {"failures", failures}};
  write_manifest(ctx, "complete", started, counts, {"report.json", "noise_curve.csv"});
  std::cout << to_string(noise.mode) << " curve over " << noise.points.size() << " levels";
  if (noise.slope) std::cout << ", slope " << json_number(*noise.slope);
  std::cout << " -> " << ctx.artifact("report.json").string() << "\n";
  return kExitOk;
}

int cmd_clue_hit(RunContext& ctx) {
  const std::string started = now_iso8601();
  const std::vector<QAInstance> dataset = load_required_dataset(ctx);
  const Backends backends = make_backends(ctx.config, dataset);
  const PromptTemplates templates = templates_from_config(ctx.config);

  const ClueHitReport report = run_clue_hit_eval(
      dataset, *backends.gen, *backends.embed, ctx.config.eval_params, ctx.config.clue_params,
      ctx.config.max_in_flight, derive_seed(ctx.config.seed, "clue_hit"), templates);

  {
    auto out = open_trunc(ctx.artifact("clue_hit.jsonl"));
    for (const auto& r : report.records) {
      nlohmann::json row;
      row["instance_id"] = r.instance_id;
      row["score"] = r.score;
      row["best_sentence"] = r.best_sentence;
      row["gt_clue"] = r.gt_clue;
      out << row.dump() << '\n';
    }
  }
  {
    auto out = open_trunc(ctx.artifact("clue_hit.csv"));
    out << "instance_id,score\n";
    for (const auto& r : report.records)
      out << csv_escape(r.instance_id) << ',' << json_number(r.score) << '\n';
  }
  {
    nlohmann::json j;
    j["clue_hit_mean_times_100"] = report.mean_times_100;
    j["scored"] = report.records.size();
    j["excluded"] = report.excluded;
    auto out = open_trunc(ctx.artifact("report.json"));
    out << j.dump(2) << '\n';
  }

  nlohmann::json counts = {{"instances", dataset.size()},
                           {"scored", report.records.size()},
                           {"excluded", report.excluded}};
  const std::vector<std::string> artifacts = {"clue_hit.jsonl", "clue_hit.csv", "report.json"};
  if (report.exhausted > 0) {
    write_manifest(ctx, "partial", started, counts, artifacts);
    std::cerr << "error: backend: " << report.exhausted
              << " instances exhausted retries; rerun to retry them\n";
    return kExitBackendExhausted;
  }
  write_manifest(ctx, "complete", started, counts, artifacts);
  std::cout << "clue-hit mean (x100) " << json_number(report.mean_times_100) << " over "
            << report.records.size() << " instances (" << report.excluded << " excluded) -> "
            << ctx.artifact("report.json").string() << "\n";
  return kExitOk;
}

int cmd_train_toy_dpo(RunContext& ctx) {
  const std::string started = now_iso8601();
  const fs::path preferences_path = ctx.options.preferences_path
                                        ? fs::path(*ctx.options.preferences_path)
                                        : ctx.artifact("preferences.jsonl");
  const std::vector<PreferenceRecord> records =
      load_preference_dataset(preferences_path.string());
  if (records.empty())
    throw std::runtime_error("no preference pairs in " + preferences_path.string());

  // Policy and reference start identical (all zeros), so the first trace
  // entry is exactly ln 2 and training moves only the margin.
  std::vector<DpoExample> seeds(records.size(),
                                DpoExample{0.0, 0.0, 0.0, 0.0, ctx.config.beta});
  const ToyTrainResult result =
      toy_train(seeds, ctx.config.steps, ctx.config.lr, ctx.config.beta);

  {
    auto out = open_trunc(ctx.artifact("dpo_trace.csv"));
    out << "step,loss\n";
    for (std::size_t i = 0; i < result.trace.size(); ++i)
      out << i << ',' << json_number(result.trace[i]) << '\n';
  }
  {
    nlohmann::json j;
    j["beta"] = result.policy.beta;
    j["pairs"] = records.size();
    j["steps"] = ctx.config.steps;
    j["lr"] = ctx.config.lr;
    j["initial_loss"] = result.trace.front();
    j["final_loss"] = result.trace.back();
    nlohmann::json margins = nlohmann::json::array();
    for (std::size_t i = 0; i < result.policy.lp_pos.size(); ++i)
      margins.push_back(result.policy.lp_pos[i] - result.policy.lp_neg[i]);
    j["margins"] = margins;
    j["lp_pos"] = result.policy.lp_pos;
    j["lp_neg"] = result.policy.lp_neg;
    auto out = open_trunc(ctx.artifact("dpo_policy.json"));
    out << j.dump(2) << '\n';
  }

  write_manifest(ctx, "complete", started,
                 {{"pairs", records.size()}, {"steps", ctx.config.steps}},
                 {"dpo_trace.csv", "dpo_policy.json"});
  std::cout << "trained " << records.size() << " pairs for " << ctx.config.steps
            << " steps, loss " << json_number(result.trace.front()) << " -> "
            << json_number(result.trace.back()) << "\n";
  return kExitOk;
}

int dispatch(const std::string& command, CliOptions& options) {
  RunContext ctx;
  ctx.command = command;
  ctx.options = options;
  ctx.config = load_config(options.config_path);
  apply_overrides(ctx.config, options);
  validate_config(ctx.config);
  if (command == "validate-config") return cmd_validate_config(ctx);

  ctx.out_dir = ctx.config.out_dir;
  fs::create_directories(ctx.out_dir);
  if (resume_already_complete(ctx)) {
    std::cout << "run already complete: " << ctx.out_dir.string() << "\n";
    return kExitOk;
  }

  if (command == "build-dataset") return cmd_build_dataset(ctx);
  if (command == "explore") return cmd_explore(ctx);
  if (command == "select-pairs") return cmd_select_pairs(ctx);
  if (command == "eval") return cmd_eval(ctx);
  if (command == "noise-eval") return cmd_noise_eval(ctx);
  if (command == "clue-hit") return cmd_clue_hit(ctx);
  if (command == "train-toy-dpo") return cmd_train_toy_dpo(ctx);
  throw std::runtime_error("unknown command: " + command);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ClueAnchor pipeline: exploration, preference selection, and evaluation"};
  app.require_subcommand(1);

  CliOptions options;
  std::vector<CLI::App*> subcommands;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", options.config_path, "Path to the run config JSON")->required();
    sub->add_option("--seed", options.seed, "Override the config seed");
    sub->add_option("--out", options.out, "Override the output directory");
    sub->add_flag("--resume", options.resume, "Continue or skip an existing run");
    sub->add_option("--max-in-flight", options.max_in_flight,
                    "Override the parallel request bound");
    subcommands.push_back(sub);
    return sub;
  };

  add_common(app.add_subcommand("validate-config", "Check the config and exit"));
  add_common(app.add_subcommand("build-dataset", "Write the canonical dataset and its stats"));
  CLI::App* explore = add_common(
      app.add_subcommand("explore", "Generate candidate reasoning paths per instance"));
  explore->add_flag("--no-ikr", options.no_ikr, "Disable the internal path");
  explore->add_flag("--no-ekr", options.no_ekr, "Disable the external path");
  explore->add_flag("--no-ckr", options.no_ckr, "Disable the clue-anchored path");
  explore->add_flag("--answer-as-clue", options.answer_as_clue,
                    "Use the gold answer text as the clue");
  CLI::App* select = add_common(
      app.add_subcommand("select-pairs", "Build the preference dataset from candidates"));
  select->add_option("--candidates", options.candidates_path,
                     "Candidates file (default: <out>/candidates.jsonl)");
  add_common(app.add_subcommand("eval", "Accuracy by mode and knowledge condition"));
  CLI::App* noise = add_common(
      app.add_subcommand("noise-eval", "Accuracy under noise with slope fitting"));
  noise->add_option("--noise-mode", options.noise_mode, "substitute or inject");
  noise->add_option("--ratios", options.ratios_csv, "Comma-separated noise ratios");
  add_common(app.add_subcommand("clue-hit", "Clue-hit similarity of reasoning sentences"));
  CLI::App* train = add_common(
      app.add_subcommand("train-toy-dpo", "Gradient descent on the toy DPO objective"));
  train->add_option("--preferences", options.preferences_path,
                    "Preference file (default: <out>/preferences.jsonl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    for (CLI::App* sub : subcommands)
      if (sub->parsed()) return dispatch(sub->get_name(), options);
    std::cerr << "error: usage: no command given\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DatasetError& e) {
    std::cerr << "error: dataset: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const BackendError& e) {
    if (e.kind() == BackendErrorKind::exhausted_retries) {
      std::cerr << "error: backend: " << e.detail() << "\n";
      return kExitBackendExhausted;
    }
    std::cerr << "error: backend: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return kExitRuntime;
  }
}
