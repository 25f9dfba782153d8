#pragma once

// Run configuration: one JSON object whose keys mirror the CLI flags. Every
// field has a default; a config file may set any subset and flags override
// the file.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "biolearn/attacks.hpp"
#include "biolearn/error.hpp"
#include "biolearn/fewshot.hpp"
#include "biolearn/plasticity.hpp"

namespace biolearn {

using json = nlohmann::json;

struct FetchEntry {
  std::string url;
  std::string sha256;  // hex digest of the downloaded bytes
  std::string file;    // name under <data_dir>/<dataset>/
  bool gunzip = false;
};

struct RunConfig {
  std::string dataset = "mnist";
  std::string data_dir;  // empty: $BIOLEARN_DATA_DIR, then ./data
  Rule rule = Rule::bio;
  bool nonneg = false;
  std::vector<std::size_t> hidden{2000};
  double beta_norm = 1.0;
  BioHyperParams bio;
  BpParams bp;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out = "run";
  std::string model;
  bool force = false;

  // attack
  AttackMethod method = AttackMethod::pgd;
  std::vector<double> eps{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  double step = kPgdStep;
  std::size_t iters = kPgdIters;
  bool random_start = false;
  std::size_t attack_batch = 1000;

  // analysis
  double threshold = kDetectionThreshold;
  std::size_t layer = 0;

  // few-shot
  std::vector<std::size_t> shots{1, 10, 100};
  std::size_t n_seeds = 5;
  std::size_t fewshot_epochs = kFewShotEpochs;

  std::vector<FetchEntry> fetch;

  std::filesystem::path resolved_data_dir() const {
    if (!data_dir.empty()) return data_dir;
    if (const char* env = std::getenv("BIOLEARN_DATA_DIR"); env && *env) return env;
    return "data";
  }

  Architecture architecture(std::size_t input_dim, std::size_t classes) const {
    Architecture a;
    a.input_dim = input_dim;
    a.hidden_dims = hidden;
    a.output_dim = classes;
    a.nonneg = nonneg;
    a.beta_norm = beta_norm;
    return a;
  }

  TrainerConfig trainer(std::size_t input_dim, std::size_t classes) const {
    TrainerConfig t;
    t.rule = rule;
    t.arch = architecture(input_dim, classes);
    t.bio = bio;
    t.bp = bp;
    return t;
  }
};

// ---------------------------------------------------------------------------
// String forms

inline std::string to_string(Rule r) { return r == Rule::bio ? "bio" : "bp"; }
inline std::string to_string(AttackMethod m) { return m == AttackMethod::fgsm ? "fgsm" : "pgd"; }
inline std::string to_string(MixMode m) { return m == MixMode::literal ? "literal" : "eta_free"; }
inline std::string to_string(BiasSignal s) { return s == BiasSignal::softmax ? "softmax" : "linear"; }
inline std::string to_string(OutputRule r) { return r == OutputRule::wp ? "wp" : "bp"; }

inline Rule parse_rule(const std::string& s) {
  if (s == "bio") return Rule::bio;
  if (s == "bp") return Rule::bp;
  throw ParameterError("rule must be bio or bp, got '" + s + "'");
}
inline AttackMethod parse_method(const std::string& s) {
  if (s == "fgsm") return AttackMethod::fgsm;
  if (s == "pgd") return AttackMethod::pgd;
  throw ParameterError("method must be fgsm or pgd, got '" + s + "'");
}
inline MixMode parse_mix_mode(const std::string& s) {
  if (s == "literal") return MixMode::literal;
  if (s == "eta_free") return MixMode::eta_free;
  throw ParameterError("--eq4-mode must be literal or eta_free, got '" + s + "'");
}
inline BiasSignal parse_bias_signal(const std::string& s) {
  if (s == "softmax") return BiasSignal::softmax;
  if (s == "linear") return BiasSignal::linear;
  throw ParameterError("--eq5-signal must be softmax or linear, got '" + s + "'");
}
inline OutputRule parse_output_rule(const std::string& s) {
  if (s == "wp") return OutputRule::wp;
  if (s == "bp") return OutputRule::bp;
  throw ParameterError("output rule must be wp or bp, got '" + s + "'");
}

/// "2000", "2000,500", "2000x10" (ten layers of 2000) or "none".
inline std::vector<std::size_t> parse_hidden(const std::string& s) {
  if (s.empty() || s == "none" || s == "0") return {};
  auto to_count = [&](const std::string& t) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(t, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != t.size() || v == 0) throw ParameterError("bad --hidden value '" + s + "'");
    return static_cast<std::size_t>(v);
  };
  if (auto x = s.find('x'); x != std::string::npos)
    return std::vector<std::size_t>(to_count(s.substr(x + 1)), to_count(s.substr(0, x)));
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) out.push_back(to_count(tok));
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    std::stringstream ts(tok);
    T v{};
    if (!(ts >> v) || !ts.eof()) throw ParameterError(std::string("bad ") + what + " '" + s + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ParameterError(std::string("empty ") + what);
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const RunConfig& c) {
  json fetch = json::array();
  for (const auto& f : c.fetch)
    fetch.push_back({{"url", f.url}, {"sha256", f.sha256}, {"file", f.file}, {"gunzip", f.gunzip}});
  return {
      {"dataset", c.dataset},
      {"data_dir", c.resolved_data_dir().string()},
      {"rule", to_string(c.rule)},
      {"nonneg", c.nonneg},
      {"hidden", c.hidden},
      {"beta_norm", c.beta_norm},
      {"bio",
       {{"eta", c.bio.eta},
        {"sigma2", c.bio.sigma2},
        {"alpha", c.bio.alpha},
        {"beta_wp", c.bio.beta_wp},
        {"gamma", c.bio.gamma},
        {"batch_size", c.bio.batch_size},
        {"epochs", c.bio.epochs},
        {"balanced", c.bio.balanced},
        {"eq4_mode", to_string(c.bio.mix)},
        {"eq5_signal", to_string(c.bio.bias_signal)},
        {"output_rule", to_string(c.bio.output_rule)},
        {"output_lr", c.bio.output_lr}}},
      {"bp",
       {{"lr", c.bp.lr},
        {"batch_size", c.bp.batch_size},
        {"epochs", c.bp.epochs},
        {"balanced", c.bp.balanced}}},
      {"seed", c.seed},
      {"threads", c.threads},
      {"attack",
       {{"method", to_string(c.method)},
        {"eps", c.eps},
        {"step", c.step},
        {"iters", c.iters},
        {"random_start", c.random_start},
        {"batch_size", c.attack_batch}}},
      {"analysis", {{"threshold", c.threshold}, {"layer", c.layer}}},
      {"fewshot", {{"shots", c.shots}, {"n_seeds", c.n_seeds}, {"epochs", c.fewshot_epochs}}},
      {"fetch", fetch},
  };
}

namespace detail {

template <typename T>
void read_if(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

/// Overlays the keys present in `j` onto `c`. Unknown keys are rejected.
inline void apply_json(const json& j, RunConfig& c) {
  static const std::vector<std::string> known{
      "dataset", "data_dir", "rule", "nonneg", "hidden", "beta_norm", "bio", "bp", "seed",
      "threads", "out", "model", "attack", "analysis", "fewshot", "fetch"};
  if (!j.is_object()) throw ParameterError("config: top level must be an object");
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ParameterError("config: unknown key '" + k + "'");
  try {
    using detail::read_if;
    read_if(j, "dataset", c.dataset);
    read_if(j, "data_dir", c.data_dir);
    if (j.contains("rule")) c.rule = parse_rule(j["rule"].get<std::string>());
    read_if(j, "nonneg", c.nonneg);
    if (j.contains("hidden")) {
      if (j["hidden"].is_string())
        c.hidden = parse_hidden(j["hidden"].get<std::string>());
      else
        c.hidden = j["hidden"].get<std::vector<std::size_t>>();
    }
    read_if(j, "beta_norm", c.beta_norm);
    if (j.contains("bio")) {
      const auto& b = j["bio"];
      read_if(b, "eta", c.bio.eta);
      read_if(b, "sigma2", c.bio.sigma2);
      read_if(b, "alpha", c.bio.alpha);
      read_if(b, "beta_wp", c.bio.beta_wp);
      read_if(b, "gamma", c.bio.gamma);
      read_if(b, "batch_size", c.bio.batch_size);
      read_if(b, "epochs", c.bio.epochs);
      read_if(b, "balanced", c.bio.balanced);
      if (b.contains("eq4_mode")) c.bio.mix = parse_mix_mode(b["eq4_mode"].get<std::string>());
      if (b.contains("eq5_signal")) c.bio.bias_signal = parse_bias_signal(b["eq5_signal"].get<std::string>());
      if (b.contains("output_rule"))
        c.bio.output_rule = parse_output_rule(b["output_rule"].get<std::string>());
      read_if(b, "output_lr", c.bio.output_lr);
    }
    if (j.contains("bp")) {
      const auto& b = j["bp"];
      read_if(b, "lr", c.bp.lr);
      read_if(b, "batch_size", c.bp.batch_size);
      read_if(b, "epochs", c.bp.epochs);
      read_if(b, "balanced", c.bp.balanced);
    }
    read_if(j, "seed", c.seed);
    read_if(j, "threads", c.threads);
    read_if(j, "out", c.out);
    read_if(j, "model", c.model);
    if (j.contains("attack")) {
      const auto& a = j["attack"];
      if (a.contains("method")) c.method = parse_method(a["method"].get<std::string>());
      read_if(a, "eps", c.eps);
      read_if(a, "step", c.step);
      read_if(a, "iters", c.iters);
      read_if(a, "random_start", c.random_start);
      read_if(a, "batch_size", c.attack_batch);
    }
    if (j.contains("analysis")) {
      read_if(j["analysis"], "threshold", c.threshold);
      read_if(j["analysis"], "layer", c.layer);
    }
    if (j.contains("fewshot")) {
      read_if(j["fewshot"], "shots", c.shots);
      read_if(j["fewshot"], "n_seeds", c.n_seeds);
      read_if(j["fewshot"], "epochs", c.fewshot_epochs);
    }
    if (j.contains("fetch")) {
      c.fetch.clear();
      for (const auto& f : j["fetch"]) {
        FetchEntry e;
        e.url = f.at("url").get<std::string>();
        e.sha256 = f.at("sha256").get<std::string>();
        e.file = f.at("file").get<std::string>();
        detail::read_if(f, "gunzip", e.gunzip);
        c.fetch.push_back(std::move(e));
      }
    }
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParameterError("config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  apply_json(j, c);
  return c;
}

}  // namespace biolearn
