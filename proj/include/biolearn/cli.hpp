#pragma once

// The `biolearn` command line.
//
//   biolearn {fetch,train,eval,attack,analyze,fewshot,gradcheck} [flags]
//
// Settings come from built-in defaults, then `--config file.json`, then
// flags. Exit codes: 0 success, 2 usage or data problem, 3 numeric failure
// (divergence, failed gradient check), 1 anything else.

#include <zlib.h>
#include <curl/curl.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "biolearn/analysis.hpp"
#include "biolearn/attacks.hpp"
#include "biolearn/config.hpp"
#include "biolearn/data.hpp"
#include "biolearn/error.hpp"
#include "biolearn/fewshot.hpp"
#include "biolearn/gradcheck.hpp"
#include "biolearn/network.hpp"
#include "biolearn/plasticity.hpp"
#include "biolearn/sha256.hpp"

#ifndef BIOLEARN_VERSION
#define BIOLEARN_VERSION "0.0.0"
#endif

namespace biolearn::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kNumeric = 3 };

// ---------------------------------------------------------------------------
// JSON text with 17 significant digits for every floating-point value

namespace detail {

inline void write_json(std::string& out, const json& j, int indent, int depth) {
  const auto pad = [&](int d) {
    if (indent >= 0) out += '\n' + std::string(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out += ',';
        first = false;
        pad(depth + 1);
        out += json(k).dump();
        out += indent >= 0 ? ": " : ":";
        write_json(out, v, indent, depth + 1);
      }
      pad(depth);
      out += '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ',';
        pad(depth + 1);
        write_json(out, j[i], indent, depth + 1);
      }
      pad(depth);
      out += ']';
      return;
    }
    case json::value_t::number_float: {
      const double v = j.get<double>();
      if (!std::isfinite(v)) {
        out += "null";
        return;
      }
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out += buf;
      if (std::string_view(buf).find_first_of(".eEn") == std::string_view::npos) out += ".0";
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace detail

/// JSON text; indent < 0 gives a single line.
inline std::string json_text(const json& j, int indent = 2) {
  std::string out;
  detail::write_json(out, j, indent, 0);
  if (indent >= 0) out += '\n';
  return out;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Datasets on disk

struct DataFiles {
  Dataset train;
  Dataset test;
  json checksums = json::object();  // file name -> sha256 hex
};

namespace detail {

inline fs::path find_dataset_dir(const RunConfig& c, std::span<const std::string> names) {
  const fs::path root = c.resolved_data_dir();
  std::vector<fs::path> candidates{root / c.dataset, root};
  if (c.dataset == "cifar10") {
    candidates.insert(candidates.begin() + 1, root / c.dataset / "cifar-10-batches-bin");
    candidates.push_back(root / "cifar-10-batches-bin");
  }
  for (const auto& dir : candidates) {
    bool all = true;
    for (const auto& n : names) all = all && fs::is_regular_file(dir / n);
    if (all) return dir;
  }
  std::string list;
  for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
  throw DataError(c.dataset + " data not found under " + root.string() + " (need " + list +
                  "; set --data-dir or BIOLEARN_DATA_DIR, or run `biolearn fetch`)");
}

inline void checksum(const RunConfig& c, const fs::path& path, json& sums) {
  const std::string name = path.filename().string();
  const std::string hex = sha256_file_hex(path);
  for (const auto& f : c.fetch)
    if (f.file == name && !f.sha256.empty() && f.sha256 != hex)
      throw DataError("checksum mismatch for " + path.string() + ": expected " + f.sha256 +
                      ", got " + hex);
  sums[name] = hex;
}

}  // namespace detail

inline DataFiles load_data(const RunConfig& c, bool need_train = true) {
  DataFiles d;
  if (c.dataset == "mnist") {
    const std::vector<std::string> names{"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                                         "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
    const fs::path dir = detail::find_dataset_dir(
        c, std::span(names).subspan(need_train ? 0 : 2));
    for (std::size_t i = need_train ? 0 : 2; i < names.size(); ++i)
      detail::checksum(c, dir / names[i], d.checksums);
    if (need_train) d.train = load_mnist(dir / names[0], dir / names[1]);
    d.test = load_mnist(dir / names[2], dir / names[3]);
  } else if (c.dataset == "cifar10") {
    std::vector<std::string> names;
    for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
    names.push_back("test_batch.bin");
    const fs::path dir = detail::find_dataset_dir(
        c, need_train ? std::span<const std::string>(names)
                      : std::span<const std::string>(names).subspan(5));
    std::vector<fs::path> train_paths;
    for (std::size_t i = need_train ? 0 : 5; i < names.size(); ++i) {
      detail::checksum(c, dir / names[i], d.checksums);
      if (i < 5) train_paths.push_back(dir / names[i]);
    }
    if (need_train) d.train = load_cifar10(train_paths);
    d.test = load_cifar10({dir / names[5]});
  } else {
    throw ParameterError("dataset must be mnist or cifar10, got '" + c.dataset + "'");
  }
  return d;
}

// ---------------------------------------------------------------------------
// fetch

namespace detail {

inline std::size_t curl_sink(char* ptr, std::size_t size, std::size_t n, void* user) {
  auto* buf = static_cast<std::vector<unsigned char>*>(user);
  buf->insert(buf->end(), ptr, ptr + size * n);
  return size * n;
}

inline std::vector<unsigned char> download(const std::string& url) {
  CURL* h = curl_easy_init();
  if (!h) throw Error("fetch: curl initialisation failed");
  std::vector<unsigned char> buf;
  curl_easy_setopt(h, CURLOPT_URL, url.c_str());
  curl_easy_setopt(h, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(h, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(h, CURLOPT_WRITEFUNCTION, curl_sink);
  curl_easy_setopt(h, CURLOPT_WRITEDATA, &buf);
  const CURLcode rc = curl_easy_perform(h);
  curl_easy_cleanup(h);
  if (rc != CURLE_OK) throw DataError("fetch " + url + ": " + curl_easy_strerror(rc));
  return buf;
}

inline std::vector<unsigned char> gunzip(std::span<const unsigned char> in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw Error("gunzip: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<unsigned char> out;
  unsigned char chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof chunk;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("gunzip: corrupt stream");
    }
    out.insert(out.end(), chunk, chunk + (sizeof chunk - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw DataError("gunzip: truncated stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

struct Context {
  RunConfig cfg;
  bool out_given = false;
  bool epochs_given = false;
  std::size_t gradcheck_nets = 10;
  bool inject_sign_bug = false;
  std::ostream& out;
  std::ostream& err;
};

namespace detail {

inline fs::path prepare_output(const Context& ctx, std::initializer_list<std::string> names) {
  const fs::path dir = ctx.cfg.out;
  for (const auto& n : names)
    if (fs::exists(dir / n) && !ctx.cfg.force)
      throw ParameterError("refusing to overwrite " + (dir / n).string() + " (pass --force)");
  fs::create_directories(dir);
  return dir;
}

inline json report_json(const EpochReport& r) {
  json j{{"epoch", r.epoch}, {"loss", r.loss}, {"sparsity", r.sparsity}, {"seconds", r.seconds}};
  j["test_acc"] = r.test_acc ? json(*r.test_acc) : json(nullptr);
  return j;
}

inline json manifest(const Context& ctx, const std::string& command, const json& checksums) {
  return {{"tool", "biolearn"},
          {"version", BIOLEARN_VERSION},
          {"command", command},
          {"seed", ctx.cfg.seed},
          {"rng", Rng::kAlgorithm},
          {"threads", ctx.cfg.threads},
          {"config", to_json(ctx.cfg)},
          {"datasets", checksums},
          {"started_at", utc_timestamp()}};
}

inline MlpModel load_model_arg(const Context& ctx) {
  if (ctx.cfg.model.empty()) throw ParameterError("--model is required");
  if (!fs::is_regular_file(ctx.cfg.model))
    throw DataError("model file not found: " + ctx.cfg.model);
  return load_model(ctx.cfg.model);
}

inline json fit_json(const FitResult& f) {
  json j{{"family", family_name(f.family)},
         {"log_likelihood", f.log_likelihood},
         {"ks", f.ks_stat},
         {"n", f.n}};
  if (f.family == Family::weibull) {
    j["shape_k"] = f.p1;
    j["scale_lambda"] = f.p2;
    j["regime"] = f.regime();
  } else {
    j["mu"] = f.p1;
    j["sigma"] = f.p2;
  }
  return j;
}

}  // namespace detail

inline int cmd_fetch(Context& ctx) {
  const auto& c = ctx.cfg;
  if (c.fetch.empty()) throw ParameterError("fetch: the config file lists no `fetch` entries");
  const fs::path dir = c.resolved_data_dir() / c.dataset;
  fs::create_directories(dir);
  curl_global_init(CURL_GLOBAL_DEFAULT);
  for (const auto& f : c.fetch) {
    if (f.file.empty() || f.file.find('/') != std::string::npos)
      throw ParameterError("fetch: bad file name '" + f.file + "'");
    const fs::path target = dir / f.file;
    auto bytes = detail::download(f.url);
    const std::string hex = to_hex(sha256(bytes));
    if (!f.sha256.empty() && hex != f.sha256)
      throw DataError("fetch " + f.url + ": checksum mismatch: expected " + f.sha256 + ", got " +
                      hex);
    if (f.gunzip) bytes = detail::gunzip(bytes);
    write_file_atomic(target, bytes);
    ctx.out << target.string() << " " << hex << "\n";
  }
  curl_global_cleanup();
  return kOk;
}

inline int cmd_train(Context& ctx) {
  const auto& c = ctx.cfg;
  const fs::path dir =
      detail::prepare_output(ctx, {"model.bin", "metrics.jsonl", "manifest.json"});
  const DataFiles data = load_data(c);
  const TrainerConfig tc = c.trainer(data.train.features(), data.train.num_classes);
  tc.arch.validate();
  write_file_atomic(dir / "manifest.json", json_text(detail::manifest(ctx, "train", data.checksums)));

  std::string metrics;
  TrainOptions opt;
  opt.eval_set = &data.test;
  opt.on_epoch = [&](const EpochReport& r) {
    metrics += json_text(detail::report_json(r), -1) + "\n";
    ctx.err << "epoch " << r.epoch + 1 << " loss " << r.loss << " test_acc "
            << (r.test_acc ? *r.test_acc : 0.0) << " sparsity " << r.sparsity << "\n";
  };
  const TrainResult res = train_with(tc, data.train, Rng(c.seed), opt);
  save_model(res.model, dir / "model.bin");
  write_file_atomic(dir / "metrics.jsonl", metrics);
  const double acc = res.reports.empty() ? accuracy(res.model, data.test)
                                         : *res.reports.back().test_acc;
  ctx.out << json_text({{"model", (dir / "model.bin").string()}, {"test_acc", acc}});
  return kOk;
}

inline int cmd_eval(Context& ctx) {
  const MlpModel m = detail::load_model_arg(ctx);
  const DataFiles data = load_data(ctx.cfg, /*need_train=*/false);
  const double acc = accuracy(m, data.test);
  const json j{{"model", ctx.cfg.model},
               {"dataset", ctx.cfg.dataset},
               {"n", data.test.size()},
               {"accuracy", acc}};
  ctx.out << json_text(j);
  if (ctx.out_given) {
    const fs::path dir = detail::prepare_output(ctx, {"eval.json"});
    write_file_atomic(dir / "eval.json", json_text(j));
  }
  return kOk;
}

inline int cmd_attack(Context& ctx) {
  const auto& c = ctx.cfg;
  const std::string name = "robustness_" + to_string(c.method) + ".csv";
  const fs::path dir = detail::prepare_output(ctx, {name});
  const MlpModel m = detail::load_model_arg(ctx);
  const DataFiles data = load_data(c, /*need_train=*/false);
  AttackConfig ac;
  ac.method = c.method;
  ac.step = c.step;
  ac.iters = c.iters;
  ac.random_start = c.random_start;
  ac.batch_size = c.attack_batch;
  ac.seed = c.seed;
  const RobustnessCurve curve = robustness_sweep(m, data.test, c.eps, ac);
  write_file_atomic(dir / name, curve.to_csv(ac));

  for (std::size_t i = 1; i < curve.points.size(); ++i)
    if (curve.points[i].second > curve.points[i - 1].second)
      ctx.err << "warning: accuracy rises from eps=" << curve.points[i - 1].first << " to eps="
              << curve.points[i].first << "\n";
  if (c.method == AttackMethod::pgd) {
    AttackConfig fc = ac;
    fc.method = AttackMethod::fgsm;
    const RobustnessCurve fg = robustness_sweep(m, data.test, c.eps, fc);
    for (std::size_t i = 0; i < curve.points.size(); ++i)
      if (curve.points[i].first > 0.0 && curve.points[i].second > fg.points[i].second)
        ctx.err << "warning: PGD accuracy " << curve.points[i].second << " exceeds FGSM accuracy "
                << fg.points[i].second << " at eps=" << curve.points[i].first << "\n";
  }
  json pts = json::array();
  for (const auto& [e, a] : curve.points) pts.push_back({{"epsilon", e}, {"accuracy", a}});
  ctx.out << json_text({{"method", to_string(c.method)},
                        {"clean_accuracy", curve.clean_accuracy},
                        {"points", pts},
                        {"csv", (dir / name).string()}});
  return kOk;
}

inline int cmd_analyze(Context& ctx) {
  const auto& c = ctx.cfg;
  const fs::path dir = detail::prepare_output(ctx, {"analysis.json", "histogram.csv"});
  const MlpModel m = detail::load_model_arg(ctx);
  if (c.layer >= m.weights.size())
    throw ParameterError("--layer " + std::to_string(c.layer) + " out of range (model has " +
                         std::to_string(m.weights.size()) + " weight matrices)");
  const Matrix& w = m.weights[c.layer];
  const Sparsity sp = sparsity(w, c.threshold);
  const WeightSample sample = weight_sample(w, c.threshold);
  json j{{"model", c.model},
         {"layer", c.layer},
         {"threshold", c.threshold},
         {"n_total", sample.n_total},
         {"n_below_threshold", sample.n_below_threshold},
         {"n_surviving", sample.values.size()},
         {"sparsity", {{"exact_zero", sp.exact_zero}, {"below_threshold", sp.below_threshold}}}};
  const FitResult ln = fit_lognormal(sample.values);
  const FitResult wb = fit_weibull(sample.values);
  const FitResult nm = fit_normal(sample.values);
  j["fits"] = {{"lognormal", detail::fit_json(ln)},
               {"weibull", detail::fit_json(wb)},
               {"normal", detail::fit_json(nm)}};

  // Decorrelation of the hidden layer fed by this matrix (the last hidden
  // layer for the output matrix), on the first test images.
  json dec = nullptr;
  if (!m.arch.hidden_dims.empty()) {
    try {
      const DataFiles data = load_data(c, /*need_train=*/false);
      const std::size_t n = std::min<std::size_t>(2000, data.test.size());
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      const auto tr = forward(m, gather_rows(data.test.inputs, idx), Mode::eval);
      const std::size_t h = std::min(c.layer, tr.hidden.size() - 1);
      const Decorrelation d = decorrelation(tr.hidden[h].a);
      dec = {{"hidden_layer", h},
             {"samples", n},
             {"mean_abs_corr", d.mean_abs_corr},
             {"live_units", d.live_units},
             {"dead_units", d.dead_units}};
    } catch (const DataError& e) {
      ctx.err << "warning: decorrelation skipped: " << e.what() << "\n";
    } catch (const DegenerateError& e) {
      ctx.err << "warning: decorrelation skipped: " << e.what() << "\n";
    }
  }
  j["decorrelation"] = dec;
  write_file_atomic(dir / "histogram.csv", histogram_csv(sample, ln, wb));
  write_file_atomic(dir / "analysis.json", json_text(j));
  ctx.out << json_text(j);
  return kOk;
}

inline int cmd_fewshot(Context& ctx) {
  const auto& c = ctx.cfg;
  const fs::path dir = detail::prepare_output(ctx, {"fewshot.json"});
  const DataFiles data = load_data(c);
  TrainerConfig tc = c.trainer(data.train.features(), data.train.num_classes);
  tc.arch.validate();
  if (!ctx.epochs_given) {
    tc.bio.epochs = c.fewshot_epochs;
    tc.bp.epochs = c.fewshot_epochs;
  }
  json reports = json::array();
  for (std::size_t shots : c.shots) {
    const FewShotReport r = few_shot_eval(tc, data.train, data.test, shots, c.n_seeds, Rng(c.seed));
    ctx.err << shots << "-shot mean " << r.mean << " std " << r.std << "\n";
    reports.push_back({{"shots", r.shots},
                       {"epochs", r.epochs},
                       {"n_seeds", c.n_seeds},
                       {"accuracies", r.accuracies},
                       {"mean", r.mean},
                       {"std", r.std}});
  }
  json j = detail::manifest(ctx, "fewshot", data.checksums);
  j["reports"] = reports;
  write_file_atomic(dir / "fewshot.json", json_text(j));
  ctx.out << json_text(reports);
  return kOk;
}

inline int cmd_gradcheck(Context& ctx) {
  GradcheckOptions o;
  o.nets = ctx.gradcheck_nets;
  o.seed = ctx.cfg.seed;
  o.inject_sign_bug = ctx.inject_sign_bug;
  json modes = json::array();
  bool ok = true;
  for (bool nonneg : {false, true}) {
    const GradcheckReport r = gradcheck(o, nonneg);
    ok = ok && r.passed;
    json blocks = json::array();
    for (const auto& b : r.blocks)
      blocks.push_back({{"block", b.name},
                        {"max_rel_err", b.max_rel_err},
                        {"tolerance", b.name == "input" ? kInputTolerance : kParamTolerance}});
    modes.push_back({{"mode", nonneg ? "nonneg" : "standard"},
                     {"nets", r.nets},
                     {"passed", r.passed},
                     {"blocks", blocks}});
  }
  const json j{{"passed", ok}, {"modes", modes}};
  ctx.out << json_text(j);
  if (ctx.out_given) {
    const fs::path dir = detail::prepare_output(ctx, {"gradcheck.json"});
    write_file_atomic(dir / "gradcheck.json", json_text(j));
  }
  if (!ok) ctx.err << "gradcheck FAILED\n";
  return ok ? kOk : kNumeric;
}

// ---------------------------------------------------------------------------
// Argument parsing

struct Flags {
  std::string config;
  std::optional<std::string> dataset, data_dir, rule, hidden, out, model, method, eps, shots;
  std::optional<std::string> mix_mode, bias_signal, output_rule;
  std::optional<bool> nonneg, balanced, random_start;
  std::optional<std::size_t> epochs, batch_size, iters, n_seeds, layer;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<double> eta, sigma2, alpha, beta_wp, gamma, beta_norm, step, threshold, lr,
      output_lr;
};

inline void apply_flags(const Flags& f, Context& ctx) {
  RunConfig& c = ctx.cfg;
  if (f.dataset) c.dataset = *f.dataset;
  if (f.data_dir) c.data_dir = *f.data_dir;
  if (f.rule) c.rule = parse_rule(*f.rule);
  if (f.nonneg) c.nonneg = *f.nonneg;
  if (f.hidden) c.hidden = parse_hidden(*f.hidden);
  if (f.epochs) c.bio.epochs = c.bp.epochs = *f.epochs;
  if (f.batch_size) c.bio.batch_size = c.bp.batch_size = *f.batch_size;
  if (f.balanced) c.bio.balanced = c.bp.balanced = *f.balanced;
  if (f.seed) c.seed = *f.seed;
  if (f.eta) c.bio.eta = *f.eta;
  if (f.sigma2) c.bio.sigma2 = *f.sigma2;
  if (f.alpha) c.bio.alpha = *f.alpha;
  if (f.beta_wp) c.bio.beta_wp = *f.beta_wp;
  if (f.gamma) c.bio.gamma = *f.gamma;
  if (f.beta_norm) c.beta_norm = *f.beta_norm;
  if (f.mix_mode) c.bio.mix = parse_mix_mode(*f.mix_mode);
  if (f.bias_signal) c.bio.bias_signal = parse_bias_signal(*f.bias_signal);
  if (f.output_rule) c.bio.output_rule = parse_output_rule(*f.output_rule);
  if (f.output_lr) c.bio.output_lr = *f.output_lr;
  if (f.lr) c.bp.lr = *f.lr;
  if (f.out) c.out = *f.out;
  if (f.model) c.model = *f.model;
  if (f.method) c.method = parse_method(*f.method);
  if (f.eps) c.eps = parse_list<double>(*f.eps, "--eps");
  if (f.step) c.step = *f.step;
  if (f.iters) c.iters = *f.iters;
  if (f.random_start) c.random_start = *f.random_start;
  if (f.shots) c.shots = parse_list<std::size_t>(*f.shots, "--shots");
  if (f.n_seeds) c.n_seeds = *f.n_seeds;
  if (f.threshold) c.threshold = *f.threshold;
  if (f.layer) c.layer = *f.layer;
  if (f.threads) c.threads = *f.threads;
  ctx.out_given = f.out.has_value();
  ctx.epochs_given = f.epochs.has_value();
  if (c.threads < 1) throw ParameterError("--threads must be >= 1");
}

inline void add_options(CLI::App& app, Flags& f) {
  app.add_option("--config", f.config, "JSON config file; flags override its values");
  app.add_option("--dataset", f.dataset, "mnist or cifar10");
  app.add_option("--data-dir", f.data_dir, "Dataset root (default $BIOLEARN_DATA_DIR, then ./data)");
  app.add_option("--rule", f.rule, "bio or bp");
  app.add_flag("--nonneg,!--standard", f.nonneg, "Nonnegative weights and normalised forward");
  app.add_option("--hidden", f.hidden, "Hidden widths: 2000 | 2000,500 | 2000x10 | none");
  app.add_option("--epochs", f.epochs);
  app.add_option("--batch-size", f.batch_size);
  app.add_flag("--balanced,!--unbalanced", f.balanced, "Class-balanced batches");
  app.add_option("--seed", f.seed);
  app.add_option("--eta", f.eta);
  app.add_option("--sigma2", f.sigma2);
  app.add_option("--alpha", f.alpha);
  app.add_option("--beta-wp", f.beta_wp);
  app.add_option("--gamma", f.gamma);
  app.add_option("--beta-norm", f.beta_norm);
  app.add_option("--eq4-mode", f.mix_mode, "literal or eta_free");
  app.add_option("--eq5-signal", f.bias_signal, "softmax or linear");
  app.add_option("--output-rule", f.output_rule, "wp or bp (bio rule only)");
  app.add_option("--output-lr", f.output_lr, "SGD rate of a bp output layer under the bio rule");
  app.add_option("--lr", f.lr, "SGD learning rate for the bp rule");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--model", f.model, "Model file");
  app.add_option("--method", f.method, "fgsm or pgd");
  app.add_option("--eps", f.eps, "Comma-separated epsilons, ascending");
  app.add_option("--step", f.step, "PGD step size");
  app.add_option("--iters", f.iters, "PGD iterations");
  app.add_flag("--random-start", f.random_start, "PGD random start inside the ball");
  app.add_option("--shots", f.shots, "Comma-separated shots per class");
  app.add_option("--n-seeds", f.n_seeds);
  app.add_option("--threshold", f.threshold, "Detection threshold for weight analysis");
  app.add_option("--layer", f.layer, "Weight matrix index for analyze (0 = first hidden)");
  app.add_option("--threads", f.threads, "Worker threads; 1 is the bit-exact reference mode");
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Hebbian plus weight-perturbation learning for MLPs", "biolearn"};
  app.set_version_flag("--version", BIOLEARN_VERSION);
  app.require_subcommand(1, 1);
  app.fallthrough();
  Flags f;
  add_options(app, f);
  bool force = false;
  std::size_t nets = 10;
  bool sign_bug = false;
  app.add_flag("--force", force, "Overwrite existing outputs");
  auto* fetch = app.add_subcommand("fetch", "Download dataset files listed in the config");
  auto* train = app.add_subcommand("train", "Train a model");
  auto* eval = app.add_subcommand("eval", "Test accuracy of a model");
  auto* attack = app.add_subcommand("attack", "FGSM/PGD robustness sweep");
  auto* analyze = app.add_subcommand("analyze", "Weight distribution and decorrelation");
  auto* fewshot = app.add_subcommand("fewshot", "k-shot training and evaluation");
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the gradients");
  grad->add_option("--nets", nets, "Random nets per mode");
  grad->add_flag("--inject-sign-bug", sign_bug)->group("");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    Context ctx{f.config.empty() ? RunConfig{} : load_config(f.config), false, false, nets,
                sign_bug, out, err};
    apply_flags(f, ctx);
    ctx.cfg.force = force;
    set_threads(ctx.cfg.threads);
    if (*fetch) return cmd_fetch(ctx);
    if (*train) return cmd_train(ctx);
    if (*eval) return cmd_eval(ctx);
    if (*attack) return cmd_attack(ctx);
    if (*analyze) return cmd_analyze(ctx);
    if (*fewshot) return cmd_fewshot(ctx);
    if (*grad) return cmd_gradcheck(ctx);
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kFailure;
  }
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

}  // namespace biolearn::cli
