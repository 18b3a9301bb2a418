#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clueanchor/backends.hpp"
#include "clueanchor/prompting.hpp"
#include "clueanchor/synthetic.hpp"

namespace clueanchor {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One structured file per run. Every field has a default so a minimal mock
// config is a handful of lines; strings may reference environment variables
// as ${NAME} (resolved at load, unset variables are an error).
struct RunConfig {
  // Data
  std::string dataset_path;
  std::optional<SyntheticOptions> synthetic;  // build-dataset: generate instead of loading
  std::string out_dir = "runs/out";

  // Backend
  std::string backend = "oracle";  // oracle | scripted | http
  std::string scripted_replies_path;
  std::vector<std::string> oracle_known_questions;
  std::string http_base_url;
  std::string http_model;
  std::string http_embedding_model;
  int http_timeout_ms = 60000;
  std::string http_api_key;  // usually "${CLUEANCHOR_API_KEY}"
  int retries = 3;
  std::size_t max_in_flight = 1;

  // Embedder
  std::string embedder = "bag_of_tokens";  // bag_of_tokens | http
  std::size_t embedder_dimensions = 4096;

  // Templates (empty path keeps the built-in text)
  std::string template_internal;
  std::string template_external;
  std::string template_clue_extraction;
  std::string template_clue_anchored;

  // Exploration
  bool enable_ikr = true;
  bool enable_ekr = true;
  bool enable_ckr = true;
  bool answer_as_clue = false;
  GenParams explore_params = make_gen_params(0.7, 1024);
  GenParams clue_params = make_gen_params(0.0, 512);

  // Evaluation
  GenParams eval_params = make_gen_params(0.0, 1024);
  std::string noise_mode = "substitute";
  std::vector<double> ratios = {0.0, 0.2, 0.4, 0.6, 0.8};

  // Optimization
  double beta = 0.1;
  double lr = 0.1;
  std::size_t steps = 500;

  std::uint64_t seed = 0;

  nlohmann::json raw;  // config file content as loaded, for the manifest
};

namespace detail {

inline std::string interpolate_env(const std::string& value) {
  std::string out;
  std::size_t pos = 0;
  while (pos < value.size()) {
    const auto open = value.find("${", pos);
    if (open == std::string::npos) {
      out += value.substr(pos);
      break;
    }
    out += value.substr(pos, open - pos);
    const auto close = value.find('}', open + 2);
    if (close == std::string::npos)
      throw ConfigError("unterminated ${ in config value: " + value);
    const std::string name = value.substr(open + 2, close - open - 2);
    const char* env = std::getenv(name.c_str());
    if (!env)
      throw ConfigError("environment variable not set: " + name);
    out += env;
    pos = close + 1;
  }
  return out;
}

inline void read_string(const nlohmann::json& j, const char* key, std::string& out) {
  if (!j.contains(key)) return;
  if (!j[key].is_string()) throw ConfigError(std::string("config field must be a string: ") + key);
  out = interpolate_env(j[key].get<std::string>());
}

template <typename T>
void read_value(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config field has wrong type: ") + key);
  }
}

inline void read_gen_params(const nlohmann::json& j, const char* key, GenParams& out) {
  if (!j.contains(key)) return;
  const nlohmann::json& p = j[key];
  if (!p.is_object()) throw ConfigError(std::string("config field must be an object: ") + key);
  read_value(p, "temperature", out.temperature);
  read_value(p, "max_tokens", out.max_tokens);
  if (p.contains("stop")) out.stop = p["stop"].get<std::vector<std::string>>();
  if (p.contains("seed")) out.seed = p["seed"].get<std::uint64_t>();
}

}  // namespace detail

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw ConfigError("config file is not a JSON object: " + path);

  RunConfig config;
  config.raw = j;
  detail::read_string(j, "dataset", config.dataset_path);
  detail::read_string(j, "out_dir", config.out_dir);
  detail::read_string(j, "backend", config.backend);
  detail::read_string(j, "scripted_replies", config.scripted_replies_path);
  detail::read_value(j, "oracle_known_questions", config.oracle_known_questions);
  detail::read_string(j, "http_base_url", config.http_base_url);
  detail::read_string(j, "http_model", config.http_model);
  detail::read_string(j, "http_embedding_model", config.http_embedding_model);
  detail::read_value(j, "http_timeout_ms", config.http_timeout_ms);
  detail::read_string(j, "http_api_key", config.http_api_key);
  detail::read_value(j, "retries", config.retries);
  detail::read_value(j, "max_in_flight", config.max_in_flight);
  detail::read_string(j, "embedder", config.embedder);
  detail::read_value(j, "embedder_dimensions", config.embedder_dimensions);

  if (j.contains("templates")) {
    const nlohmann::json& t = j["templates"];
    if (!t.is_object()) throw ConfigError("config field must be an object: templates");
    detail::read_string(t, "internal", config.template_internal);
    detail::read_string(t, "external", config.template_external);
    detail::read_string(t, "clue_extraction", config.template_clue_extraction);
    detail::read_string(t, "clue_anchored", config.template_clue_anchored);
  }

  detail::read_value(j, "enable_ikr", config.enable_ikr);
  detail::read_value(j, "enable_ekr", config.enable_ekr);
  detail::read_value(j, "enable_ckr", config.enable_ckr);
  detail::read_value(j, "answer_as_clue", config.answer_as_clue);
  detail::read_gen_params(j, "explore_params", config.explore_params);
  detail::read_gen_params(j, "clue_params", config.clue_params);
  detail::read_gen_params(j, "eval_params", config.eval_params);
  detail::read_string(j, "noise_mode", config.noise_mode);
  detail::read_value(j, "ratios", config.ratios);
  detail::read_value(j, "beta", config.beta);
  detail::read_value(j, "lr", config.lr);
  detail::read_value(j, "steps", config.steps);
  detail::read_value(j, "seed", config.seed);

  if (j.contains("synthetic")) {
    const nlohmann::json& s = j["synthetic"];
    if (!s.is_object()) throw ConfigError("config field must be an object: synthetic");
    SyntheticOptions options;
    detail::read_value(s, "count", options.count);
    detail::read_value(s, "passages_per_instance", options.passages_per_instance);
    detail::read_value(s, "miss_every", options.miss_every);
    detail::read_value(s, "double_gold_every", options.double_gold_every);
    detail::read_value(s, "seed", options.seed);
    config.synthetic = options;
  }
  return config;
}

// Structural validation shared by every command. Referenced paths must
// exist now, not at first use three stages later.
inline void validate_config(const RunConfig& config) {
  namespace fs = std::filesystem;

  if (config.backend != "oracle" && config.backend != "scripted" && config.backend != "http")
    throw ConfigError("unknown backend: " + config.backend);
  if (config.embedder != "bag_of_tokens" && config.embedder != "http")
    throw ConfigError("unknown embedder: " + config.embedder);
  if (config.backend == "scripted") {
    if (config.scripted_replies_path.empty())
      throw ConfigError("backend 'scripted' needs scripted_replies");
    if (!fs::exists(config.scripted_replies_path))
      throw ConfigError("scripted_replies path does not exist: " + config.scripted_replies_path);
  }
  if (config.backend == "http" && config.http_base_url.empty())
    throw ConfigError("backend 'http' needs http_base_url");
  if (!config.dataset_path.empty() && !fs::exists(config.dataset_path))
    throw ConfigError("dataset path does not exist: " + config.dataset_path);
  for (const std::string* path : {&config.template_internal, &config.template_external,
                                  &config.template_clue_extraction,
                                  &config.template_clue_anchored}) {
    if (!path->empty() && !fs::exists(*path))
      throw ConfigError("template path does not exist: " + *path);
  }
  if (config.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  if (config.retries < 0) throw ConfigError("retries must be >= 0");
  if (config.embedder_dimensions < 1) throw ConfigError("embedder_dimensions must be >= 1");
  if (!(config.beta > 0.0)) throw ConfigError("beta must be > 0");
  if (!(config.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (config.noise_mode != "substitute" && config.noise_mode != "inject")
    throw ConfigError("noise_mode must be 'substitute' or 'inject'");
  if (config.ratios.empty()) throw ConfigError("ratios must be non-empty");
  for (double r : config.ratios)
    if (r < 0.0 || r > 1.0) throw ConfigError("every ratio must be in [0, 1]");
  try {
    validate(config.explore_params);
    validate(config.clue_params);
    validate(config.eval_params);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline PromptTemplates templates_from_config(const RunConfig& config) {
  return PromptTemplates::load(config.template_internal, config.template_external,
                               config.template_clue_extraction, config.template_clue_anchored);
}

}  // namespace clueanchor
