// Copyright 2026 The DecomposeWHAR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Command-line front end. Kept header-only so tests can drive run() in-process.
//
// Configuration is one flat JSON object with dotted keys ("model.d_model",
// "train.epochs", ...). Values come from built-in defaults, then --config,
// then individual flags. The fully resolved object is written to
// <out>/config.json and can be fed back with --config to reproduce a run.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dwhar/config.hpp"
#include "dwhar/data.hpp"
#include "dwhar/error.hpp"
#include "dwhar/gradcheck.hpp"
#include "dwhar/metrics.hpp"
#include "dwhar/model.hpp"
#include "dwhar/serialize.hpp"
#include "dwhar/training.hpp"

namespace dwhar::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kIo = 5,
  kInternal = 6,
};

using Json = nlohmann::json;

inline Json default_settings() {
  return Json{
      {"seed", 0},
      {"out", ""},
      {"data.manifest", ""},
      {"data.window_ms", 800.0},
      {"data.overlap", 0.5},
      {"synth.n_classes", 6},
      {"synth.n_subjects", 4},
      {"synth.windows_per_class", 30},
      {"synth.n_sensors", 5},
      {"synth.n_vars", 9},
      {"synth.sample_rate_hz", 30.0},
      {"synth.noise_std", 0.3},
      {"synth.amplitude_jitter", 0.1},
      {"synth.seed", 0},
      {"model.n_sensors", 5},
      {"model.n_vars", 9},
      {"model.window", 24},
      {"model.n_classes", 18},
      {"model.d_model", 64},
      {"model.patch", 0},
      {"model.stride", 0},
      {"model.lte_kernel", 3},
      {"model.expand_ratio", 2},
      {"model.heads", 8},
      {"model.d_state", 16},
      {"model.d_conv", 4},
      {"model.mamba_expand", 2},
      {"model.attn_scaled", false},
      {"model.enable_gta", true},
      {"model.enable_csi", true},
      {"model.gta_before_csi", true},
      {"train.epochs", 80},
      {"train.batch_size", 64},
      {"train.lr", 0.001},
      {"train.reps", 1},
      {"train.split", "loso"},
      {"train.workers", 1},
  };
}

namespace detail {

template <class T>
T setting(const Json& s, const std::string& key) {
  try {
    return s.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError("setting '" + key + "': " + e.what());
  }
}

inline void merge_file(Json& settings, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  Json file;
  try {
    in >> file;
  } catch (const Json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  if (!file.is_object()) throw ConfigError("config '" + path.string() + "' must be a JSON object");
  for (const auto& [key, value] : file.items()) {
    if (!settings.contains(key)) throw ConfigError("config: unknown key '" + key + "'");
    if (settings[key].type() != value.type() &&
        !(settings[key].is_number() && value.is_number())) {
      throw ConfigError("config: key '" + key + "' has the wrong type");
    }
    settings[key] = value;
  }
}

/// Model hyperparameters from settings; patch/stride 0 mean "derive from window".
inline ModelConfig model_config(const Json& s) {
  ModelConfig c;
  c.n_sensors = setting<std::size_t>(s, "model.n_sensors");
  c.n_vars = setting<std::size_t>(s, "model.n_vars");
  c.window = setting<std::size_t>(s, "model.window");
  c.n_classes = setting<std::size_t>(s, "model.n_classes");
  c.d_model = setting<std::size_t>(s, "model.d_model");
  c.patch = setting<std::size_t>(s, "model.patch");
  c.stride = setting<std::size_t>(s, "model.stride");
  if (c.patch == 0) c.patch = ModelConfig::default_patch(c.window);
  if (c.stride == 0) c.stride = c.patch;
  c.lte_kernel = setting<std::size_t>(s, "model.lte_kernel");
  c.expand_ratio = setting<std::size_t>(s, "model.expand_ratio");
  c.heads = setting<std::size_t>(s, "model.heads");
  c.d_state = setting<std::size_t>(s, "model.d_state");
  c.d_conv = setting<std::size_t>(s, "model.d_conv");
  c.mamba_expand = setting<std::size_t>(s, "model.mamba_expand");
  c.attn_scaled = setting<bool>(s, "model.attn_scaled");
  c.enable_gta = setting<bool>(s, "model.enable_gta");
  c.enable_csi = setting<bool>(s, "model.enable_csi");
  c.gta_before_csi = setting<bool>(s, "model.gta_before_csi");
  c.seed = setting<std::uint64_t>(s, "seed");
  c.validate();
  return c;
}

inline SynthSpec synth_spec(const Json& s) {
  SynthSpec sp;
  sp.n_classes = setting<std::size_t>(s, "synth.n_classes");
  sp.n_subjects = setting<std::size_t>(s, "synth.n_subjects");
  sp.windows_per_class = setting<std::size_t>(s, "synth.windows_per_class");
  sp.n_sensors = setting<std::size_t>(s, "synth.n_sensors");
  sp.n_vars = setting<std::size_t>(s, "synth.n_vars");
  sp.sample_rate_hz = setting<double>(s, "synth.sample_rate_hz");
  sp.window = window_length(setting<double>(s, "data.window_ms"), sp.sample_rate_hz);
  sp.noise_std = setting<double>(s, "synth.noise_std");
  sp.amplitude_jitter = setting<double>(s, "synth.amplitude_jitter");
  sp.seed = setting<std::uint64_t>(s, "synth.seed");
  return sp;
}

struct Dataset {
  SensorBatch windows;
  std::size_t n_classes = 0;
};

/// Windows from the manifest, or from the in-memory synthetic generator when
/// no manifest is configured.
inline Dataset load_dataset(const Json& s) {
  const auto manifest = setting<std::string>(s, "data.manifest");
  const double window_ms = setting<double>(s, "data.window_ms");
  const double overlap = setting<double>(s, "data.overlap");
  std::vector<Recording> recs;
  Dataset ds;
  if (manifest.empty()) {
    const SynthSpec sp = synth_spec(s);
    recs = synth_generate(sp);
    ds.n_classes = sp.n_classes;
  } else {
    const DatasetManifest m = load_manifest(manifest);
    recs = load_recordings(m);
    ds.n_classes = m.class_names.size();
  }
  std::vector<SensorBatch> parts;
  for (const auto& r : recs) parts.push_back(slide_windows(r, window_ms, overlap));
  ds.windows = SensorBatch::concat(parts);
  if (ds.windows.size() == 0) throw DataError("dataset yields no windows");
  return ds;
}

/// Writes the data-derived model shape back into the settings.
inline void resolve_shape(Json& s, const Dataset& ds) {
  const Shape& shape = ds.windows.windows.shape();
  s["model.n_sensors"] = shape[1];
  s["model.n_vars"] = shape[2];
  s["model.window"] = shape[3];
  s["model.n_classes"] = ds.n_classes;
  const ModelConfig c = model_config(s);
  s["model.patch"] = c.patch;
  s["model.stride"] = c.stride;
}

inline std::filesystem::path output_dir(const Json& s, const std::string& subcommand) {
  auto out = setting<std::string>(s, "out");
  if (!out.empty()) return out;
  const char* root = std::getenv("DWHAR_OUT_ROOT");
  return std::filesystem::path(root ? root : "runs") / subcommand;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline void prepare_out(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

inline std::vector<NamedTensor> stats_to_aux(const ChannelStats& st) {
  return {{"input.mean", Tensor::from({st.mean.size()}, st.mean)},
          {"input.std", Tensor::from({st.stddev.size()}, st.stddev)}};
}

inline ChannelStats stats_from_aux(const std::vector<NamedTensor>& aux) {
  ChannelStats st;
  for (const auto& a : aux) {
    if (a.name == "input.mean") st.mean.assign(a.value.data().begin(), a.value.data().end());
    if (a.name == "input.std") st.stddev.assign(a.value.data().begin(), a.value.data().end());
  }
  if (st.mean.empty() || st.stddev.empty()) throw DataError("model file lacks input statistics");
  return st;
}

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  for (double x : v) r.stddev += (x - r.mean) * (x - r.mean);
  r.stddev = std::sqrt(r.stddev / static_cast<double>(v.size()));
  return r;
}

/// Held-out windows of the run that produced model.bin (repetition 0): the
/// holdout test split, or the first LOSO fold's test subject.
inline SensorBatch evaluation_windows(const Json& s, const Dataset& ds) {
  if (setting<std::string>(s, "train.split") == "holdout") {
    return holdout_split(ds.windows, setting<std::uint64_t>(s, "seed")).test;
  }
  return loso_split(ds.windows).front().test;
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_synth(Json s, std::ostream& out) {
  const auto dir = output_dir(s, "synth");
  prepare_out(dir);
  const SynthSpec sp = synth_spec(s);
  const auto recs = synth_generate(sp);
  DatasetManifest m;
  for (std::size_t k = 0; k < sp.n_classes; ++k) m.class_names.push_back("activity" + std::to_string(k));
  for (const auto& r : recs) {
    const std::string file = r.subject_id + ".csv";
    write_recording(r, dir / file);
    m.recordings.push_back({r.subject_id, file, r.sample_rate_hz, r.n_sensors, r.n_vars});
  }
  write_manifest(m, dir / "manifest.json");
  write_json(dir / "config.json", s);
  out << "wrote " << recs.size() << " recordings and manifest.json to " << dir.string() << '\n';
  return kOk;
}

inline int cmd_train(Json s, std::ostream& out) {
  const Dataset ds = load_dataset(s);
  resolve_shape(s, ds);
  const ModelConfig base = model_config(s);
  const auto dir = output_dir(s, "train");
  prepare_out(dir);
  s["out"] = dir.string();
  write_json(dir / "config.json", s);

  const auto split = setting<std::string>(s, "train.split");
  if (split != "loso" && split != "holdout") {
    throw ConfigError("train.split must be 'loso' or 'holdout', got '" + split + "'");
  }
  const auto reps = setting<std::size_t>(s, "train.reps");
  const auto seed = setting<std::uint64_t>(s, "seed");
  if (reps == 0) throw ConfigError("train.reps must be positive");
  TrainOptions opts;
  opts.epochs = setting<std::size_t>(s, "train.epochs");
  opts.batch_size = setting<std::size_t>(s, "train.batch_size");
  opts.lr = setting<double>(s, "train.lr");
  opts.eval_workers = setting<std::size_t>(s, "train.workers");

  std::ofstream log(dir / "train_log.jsonl");
  if (!log) throw IoError("cannot write train log in '" + dir.string() + "'");
  Json runs = Json::array();
  std::vector<double> accs, f1s;
  double seconds = 0.0;
  bool saved = false;

  auto run_one = [&](std::size_t rep, const std::string& fold, const SensorBatch& train_raw,
                     const SensorBatch* val_raw, const SensorBatch& test_raw) {
    const std::uint64_t run_seed = seed + rep;
    const ChannelStats stats = fit_channel_stats(train_raw);
    const SensorBatch train = apply_channel_stats(train_raw, stats);
    const SensorBatch test = apply_channel_stats(test_raw, stats);
    std::optional<SensorBatch> val;
    if (val_raw) val = apply_channel_stats(*val_raw, stats);
    ModelConfig cfg = base;
    cfg.seed = run_seed;
    ModelState st = init_model(cfg);
    opts.seed = run_seed;
    const TrainReport rep_report = train_epochs(
        cfg, st, train, val ? &*val : nullptr, opts, [&](const EpochRecord& e) {
          Json line = to_json(e);
          line["rep"] = rep;
          line["fold"] = fold;
          log << line.dump() << '\n';
        });
    seconds += rep_report.seconds;
    const MetricsReport m = evaluate_split(cfg, st, test, opts.eval_workers);
    accs.push_back(m.accuracy);
    f1s.push_back(m.macro_f1);
    Json r = to_json(m);
    r["rep"] = rep;
    r["fold"] = fold;
    r["seed"] = run_seed;
    r["best_epoch"] = rep_report.best_epoch;
    r["final_train_loss"] = rep_report.epochs.back().train_loss;
    runs.push_back(r);
    out << "rep " << rep << " fold " << fold << ": accuracy " << m.accuracy << "%, macro-F1 "
        << m.macro_f1 << "%\n";
    if (!saved) {
      save_model(dir / "model.bin", cfg, st, stats_to_aux(stats));
      saved = true;
    }
  };

  for (std::size_t rep = 0; rep < reps; ++rep) {
    if (split == "holdout") {
      const HoldoutSplit h = holdout_split(ds.windows, seed + rep);
      run_one(rep, "holdout", h.train, &h.val, h.test);
    } else {
      for (const Fold& f : loso_split(ds.windows)) run_one(rep, f.test_subject, f.train, nullptr, f.test);
    }
  }
  const MeanStd acc = mean_std(accs), f1 = mean_std(f1s);
  const ModelState probe = init_model(base);
  Json summary{{"split", split},
               {"reps", reps},
               {"seed", seed},
               {"accuracy_mean", acc.mean},
               {"accuracy_std", acc.stddev},
               {"macro_f1_mean", f1.mean},
               {"macro_f1_std", f1.stddev},
               {"param_count", count_params(probe)},
               {"flops_per_window", count_flops(base).total()},
               {"runs", runs}};
  write_json(dir / "metrics.json", summary);
  write_json(dir / "timing.json", Json{{"train_seconds", seconds}});
  out << "accuracy " << acc.mean << " +- " << acc.stddev << " %, macro-F1 " << f1.mean << " +- "
      << f1.stddev << " %\n";
  return kOk;
}

inline ModelFile load_for(const Json& s, const ModelConfig& cfg, const std::string& model_path) {
  std::filesystem::path path = model_path;
  if (path.empty()) path = std::filesystem::path(setting<std::string>(s, "out")) / "model.bin";
  return load_model(path, cfg);
}

inline int cmd_eval(Json s, const std::string& model_path, std::ostream& out) {
  const Dataset ds = load_dataset(s);
  resolve_shape(s, ds);
  ModelConfig cfg = model_config(s);
  const ModelFile mf = load_for(s, cfg, model_path);
  const SensorBatch data = apply_channel_stats(evaluation_windows(s, ds), stats_from_aux(mf.aux));
  const MetricsReport m =
      evaluate_split(cfg, mf.state, data, setting<std::size_t>(s, "train.workers"));
  const auto dir = output_dir(s, "eval");
  prepare_out(dir);
  write_json(dir / "eval_config.json", s);
  write_json(dir / "eval_metrics.json", to_json(m));
  out << "accuracy " << m.accuracy << "%, macro-F1 " << m.macro_f1 << "% on " << data.size()
      << " windows\n";
  return kOk;
}

inline int cmd_export_attention(Json s, const std::string& model_path, std::ostream& out) {
  const Dataset ds = load_dataset(s);
  resolve_shape(s, ds);
  ModelConfig cfg = model_config(s);
  if (!cfg.enable_csi) throw ConfigError("export-attention needs model.enable_csi = true");
  const ModelFile mf = load_for(s, cfg, model_path);
  const SensorBatch data = apply_channel_stats(evaluation_windows(s, ds), stats_from_aux(mf.aux));
  const ForwardResult r = forward(data.windows, cfg, mf.state);
  std::vector<std::string> names;
  for (std::size_t n = 0; n < cfg.n_sensors; ++n) names.push_back("s" + std::to_string(n));
  const auto dir = output_dir(s, "export-attention");
  prepare_out(dir);
  write_json(dir / "attention_config.json", s);
  const auto files = export_attention(*r.attention, names, dir);
  out << "wrote " << files.size() << " attention matrices to " << dir.string() << '\n';
  return kOk;
}

inline int cmd_gradcheck(const Json& s, double tolerance, std::ostream& out) {
  const ModelConfig cfg = model_config(s);
  const auto dir = output_dir(s, "gradcheck");
  prepare_out(dir);
  write_json(dir / "config.json", s);
  ModelState st = init_model(cfg);
  const std::size_t batch = 2;
  std::mt19937_64 rng(cfg.seed + 1);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> xs(batch * cfg.n_sensors * cfg.n_vars * cfg.window);
  for (double& v : xs) v = nd(rng);
  const Tensor x = Tensor::from({batch, cfg.n_sensors, cfg.n_vars, cfg.window}, xs);
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % cfg.n_classes);
  std::vector<Tensor> params;
  for (const auto& p : st.params()) params.push_back(p.value);
  const GradCheckResult r = finite_diff_check(
      [&]() { return cross_entropy(forward(x, cfg, st).logits, labels); }, params, 1e-5);
  const bool pass = r.max_rel_error < tolerance;
  write_json(dir / "gradcheck.json", Json{{"max_rel_error", r.max_rel_error},
                                          {"coordinates", r.coordinates},
                                          {"tolerance", tolerance},
                                          {"pass", pass}});
  out << "gradcheck: " << r.coordinates << " coordinates over " << params.size()
      << " tensors, max relative error " << r.max_rel_error << " (worst: "
      << st.params()[r.worst_tensor].name << "[" << r.worst_index << "]) -> "
      << (pass ? "PASS" : "FAIL") << " at tolerance " << tolerance << '\n';
  return pass ? kOk : kCheckFailed;
}

inline int cmd_bench(Json s, std::size_t repeats, std::ostream& out) {
  const ModelConfig cfg = model_config(s);
  const ModelState st = init_model(cfg);
  const FlopBreakdown f = count_flops(cfg);
  const ParamBreakdown p = expected_param_counts(cfg);
  const std::size_t batch = 1;
  const Tensor x = Tensor::zeros({batch, cfg.n_sensors, cfg.n_vars, cfg.window});
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < repeats; ++i) (void)forward(x, cfg, st);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count() / static_cast<double>(std::max<std::size_t>(repeats, 1));
  const std::int64_t limit = 600'000'000;
  Json report{{"config", cfg.canonical()},
              {"param_count", count_params(st)},
              {"params",
               {{"mse", p.mse}, {"lte", p.lte}, {"ccf", p.ccf}, {"cvf", p.cvf},
                {"mamba", p.mamba}, {"csi", p.csi}, {"classifier", p.classifier}}},
              {"flops_per_window", f.total()},
              {"flops",
               {{"mse", f.mse}, {"lte", f.lte}, {"ccf", f.ccf}, {"cvf", f.cvf},
                {"mamba", f.mamba}, {"csi", f.csi}, {"classifier", f.classifier}}},
              {"flops_under_600M", f.total() < limit},
              {"forward_ms_per_window", ms}};
  const auto dir = output_dir(s, "bench");
  prepare_out(dir);
  write_json(dir / "config.json", s);
  write_json(dir / "bench.json", report);
  out << "params " << count_params(st) << ", flops_per_window " << f.total()
      << (f.total() < limit ? " (< 600M)" : " (>= 600M)") << ", forward " << ms
      << " ms/window\n";
  return kOk;
}

}  // namespace detail

/// Entry point. Returns a process exit code; messages go to `out`/`err`.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"DecomposeWHAR engine: synthetic data, training, evaluation, verification", "dwhar_cli"};
  app.require_subcommand(1);

  std::string config_path, manifest, split, out_dir, model_path;
  std::uint64_t seed = 0;
  std::size_t epochs = 0, batch_size = 0, reps = 0, workers = 0, bench_repeats = 20;
  double lr = 0.0, tolerance = 1e-4;
  bool no_gta = false, no_csi = false, gta_after_csi = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat JSON settings file");
    sub->add_option("--seed", seed, "global seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--manifest", manifest, "dataset manifest (JSON)");
    sub->add_flag("--no-gta", no_gta, "disable the temporal SSM stage");
    sub->add_flag("--no-csi", no_csi, "disable cross-sensor attention");
    sub->add_flag("--gta-after-csi", gta_after_csi, "run attention before the SSM stage");
  };
  auto training = [&](CLI::App* sub) {
    sub->add_option("--epochs", epochs, "training epochs");
    sub->add_option("--batch-size", batch_size, "minibatch size");
    sub->add_option("--lr", lr, "Adam learning rate");
    sub->add_option("--split", split, "loso | holdout")->check(CLI::IsMember({"loso", "holdout"}));
    sub->add_option("--reps", reps, "repetitions with seeds seed..seed+reps-1");
    sub->add_option("--workers", workers, "evaluation threads");
  };

  CLI::App* synth = app.add_subcommand("synth", "write a synthetic dataset and manifest");
  common(synth);
  CLI::App* train = app.add_subcommand("train", "train and evaluate");
  common(train);
  training(train);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a saved model");
  common(eval);
  training(eval);
  eval->add_option("--model", model_path, "model file (default <out>/model.bin)");
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference check of every parameter");
  common(grad);
  grad->add_option("--tolerance", tolerance, "maximum relative error");
  CLI::App* bench = app.add_subcommand("bench", "parameter/FLOP report and forward timing");
  common(bench);
  bench->add_option("--repeats", bench_repeats, "timed forward passes");
  CLI::App* exp = app.add_subcommand("export-attention", "write attention matrices as CSV");
  common(exp);
  training(exp);
  exp->add_option("--model", model_path, "model file (default <out>/model.bin)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    Json s = default_settings();
    if (sub == grad) {
      const ModelConfig tiny = ModelConfig::tiny();
      s["model.n_sensors"] = tiny.n_sensors;
      s["model.n_vars"] = tiny.n_vars;
      s["model.window"] = tiny.window;
      s["model.n_classes"] = tiny.n_classes;
      s["model.d_model"] = tiny.d_model;
      s["model.heads"] = tiny.heads;
      s["model.d_state"] = tiny.d_state;
    }
    if (!config_path.empty()) detail::merge_file(s, config_path);
    if (sub->count("--seed")) s["seed"] = seed;
    if (sub->count("--out")) s["out"] = out_dir;
    if (sub->count("--manifest")) s["data.manifest"] = manifest;
    if (no_gta) s["model.enable_gta"] = false;
    if (no_csi) s["model.enable_csi"] = false;
    if (gta_after_csi) s["model.gta_before_csi"] = false;
    if (sub == train || sub == eval || sub == exp) {
      if (sub->count("--epochs")) s["train.epochs"] = epochs;
      if (sub->count("--batch-size")) s["train.batch_size"] = batch_size;
      if (sub->count("--lr")) s["train.lr"] = lr;
      if (sub->count("--split")) s["train.split"] = split;
      if (sub->count("--reps")) s["train.reps"] = reps;
      if (sub->count("--workers")) s["train.workers"] = workers;
    }
    if (sub == synth) return detail::cmd_synth(s, out);
    if (sub == train) return detail::cmd_train(s, out);
    if (sub == eval) return detail::cmd_eval(s, model_path, out);
    if (sub == grad) return detail::cmd_gradcheck(s, tolerance, out);
    if (sub == bench) return detail::cmd_bench(s, bench_repeats, out);
    return detail::cmd_export_attention(s, model_path, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace dwhar::cli
