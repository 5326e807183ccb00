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

// Recordings, windowing, normalization, splits and the synthetic generator.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwhar/error.hpp"
#include "dwhar/tensor.hpp"

namespace dwhar {

/// A continuous multi-sensor recording of one subject.
struct Recording {
  std::string subject_id;
  double sample_rate_hz = 0.0;
  std::size_t n_sensors = 0;
  std::size_t n_vars = 0;
  std::vector<double> timestamps;   // seconds, one per row
  std::vector<double> signals;      // row-major [rows, N·M], sensor-major columns
  std::vector<int> labels;          // per row
  std::vector<std::string> channel_names;

  std::size_t rows() const { return labels.size(); }
  std::size_t channels() const { return n_sensors * n_vars; }
  double at(std::size_t row, std::size_t sensor, std::size_t var) const {
    return signals[row * channels() + sensor * n_vars + var];
  }

  bool operator==(const Recording&) const = default;
};

inline std::string channel_name(std::size_t sensor, std::size_t var) {
  return "s" + std::to_string(sensor) + "_v" + std::to_string(var);
}

/// Windows of equal length with one label and subject each.
struct SensorBatch {
  Tensor windows;  // [B, N, M, L]
  std::vector<int> labels;
  std::vector<std::string> subjects;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t window_values() const { return windows.size() / size(); }

  SensorBatch subset(const std::vector<std::size_t>& indices) const {
    SensorBatch out;
    if (indices.empty()) return out;
    const std::size_t w = window_values();
    std::vector<double> values;
    values.reserve(indices.size() * w);
    const auto src = windows.data();
    for (std::size_t i : indices) {
      values.insert(values.end(), src.begin() + static_cast<std::ptrdiff_t>(i * w),
                    src.begin() + static_cast<std::ptrdiff_t>((i + 1) * w));
      out.labels.push_back(labels[i]);
      out.subjects.push_back(subjects[i]);
    }
    Shape shape = windows.shape();
    shape[0] = indices.size();
    out.windows = Tensor::from(std::move(shape), std::move(values));
    return out;
  }

  /// Appends `other`, which must have the same per-window shape.
  static SensorBatch concat(const std::vector<SensorBatch>& parts) {
    SensorBatch out;
    Shape shape;
    std::vector<double> values;
    for (const auto& p : parts) {
      if (p.empty()) continue;
      if (shape.empty()) {
        shape = p.windows.shape();
        shape[0] = 0;
      } else if (!std::equal(shape.begin() + 1, shape.end(), p.windows.shape().begin() + 1)) {
        throw DataError("cannot concatenate windows of shape " + shape_str(p.windows.shape()));
      }
      shape[0] += p.size();
      values.insert(values.end(), p.windows.data().begin(), p.windows.data().end());
      out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
      out.subjects.insert(out.subjects.end(), p.subjects.begin(), p.subjects.end());
    }
    if (!shape.empty()) out.windows = Tensor::from(std::move(shape), std::move(values));
    return out;
  }
};

// ---------------------------------------------------------------------------
// CSV

struct RecordingInfo {
  std::string subject_id;       // defaults to the file stem
  double sample_rate_hz = 0.0;  // 0: infer from the timestamp column
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

template <class T>
bool parse_number(std::string_view field, T& out) {
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace detail

/// Parses a recording CSV with header `timestamp,label,s0_v0,...`.
inline Recording parse_recording(const std::filesystem::path& path, RecordingInfo info = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open recording '" + path.string() + "'");
  const std::string where = path.string();
  std::string line;
  if (!std::getline(in, line)) throw DataError(where + ": empty recording (no header)");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM

  const auto header = detail::split_csv(line);
  if (header.empty() || header[0] != "timestamp") {
    throw DataError(where + ":1: missing column 'timestamp'");
  }
  if (header.size() < 2 || header[1] != "label") {
    throw DataError(where + ":1: missing column 'label'");
  }
  Recording rec;
  rec.subject_id = info.subject_id.empty() ? path.stem().string() : info.subject_id;
  std::size_t max_sensor = 0, max_var = 0;
  std::vector<std::pair<std::size_t, std::size_t>> ids;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const std::string_view name = header[c];
    const auto sep = name.find("_v");
    std::size_t s = 0, v = 0;
    if (name.size() < 4 || name[0] != 's' || sep == std::string_view::npos ||
        !detail::parse_number(name.substr(1, sep - 1), s) ||
        !detail::parse_number(name.substr(sep + 2), v)) {
      throw DataError(where + ":1: column '" + std::string(name) + "' is not of the form s{n}_v{m}");
    }
    ids.emplace_back(s, v);
    max_sensor = std::max(max_sensor, s);
    max_var = std::max(max_var, v);
  }
  if (ids.empty()) throw DataError(where + ":1: no sensor columns");
  rec.n_sensors = max_sensor + 1;
  rec.n_vars = max_var + 1;
  if (ids.size() != rec.channels()) {
    throw DataError(where + ":1: expected " + std::to_string(rec.channels()) +
                    " sensor columns for N=" + std::to_string(rec.n_sensors) +
                    ", M=" + std::to_string(rec.n_vars) + ", found " + std::to_string(ids.size()));
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t s = i / rec.n_vars, v = i % rec.n_vars;
    if (ids[i] != std::make_pair(s, v)) {
      throw DataError(where + ":1: column " + std::to_string(i + 3) + " should be '" +
                      channel_name(s, v) + "' (sensor-major order)");
    }
    rec.channel_names.push_back(channel_name(s, v));
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != header.size()) {
      throw DataError(where + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    double ts = 0.0;
    if (!detail::parse_number(fields[0], ts)) {
      throw DataError(where + ":" + std::to_string(line_no) + ": non-numeric timestamp '" +
                      std::string(fields[0]) + "'");
    }
    int label = 0;
    if (!detail::parse_number(fields[1], label) || label < 0) {
      throw DataError(where + ":" + std::to_string(line_no) + ": invalid label '" +
                      std::string(fields[1]) + "'");
    }
    rec.timestamps.push_back(ts);
    rec.labels.push_back(label);
    for (std::size_t c = 2; c < fields.size(); ++c) {
      double v = 0.0;
      if (!detail::parse_number(fields[c], v) || !std::isfinite(v)) {
        throw DataError(where + ":" + std::to_string(line_no) + ": non-numeric value '" +
                        std::string(fields[c]) + "' in column " + std::string(header[c]));
      }
      rec.signals.push_back(v);
    }
  }
  if (rec.rows() == 0) throw DataError(where + ": empty recording");

  if (info.sample_rate_hz > 0.0) {
    rec.sample_rate_hz = info.sample_rate_hz;
  } else if (rec.rows() >= 2 && rec.timestamps.back() > rec.timestamps.front()) {
    rec.sample_rate_hz = static_cast<double>(rec.rows() - 1) /
                         (rec.timestamps.back() - rec.timestamps.front());
  } else {
    throw DataError(where + ": sample rate not given and not inferable from timestamps");
  }
  return rec;
}

inline void write_recording(const Recording& rec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write recording '" + path.string() + "'");
  out.precision(17);
  out << "timestamp,label";
  for (const auto& name : rec.channel_names) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < rec.rows(); ++r) {
    out << rec.timestamps[r] << ',' << rec.labels[r];
    for (std::size_t c = 0; c < rec.channels(); ++c) out << ',' << rec.signals[r * rec.channels() + c];
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Windowing

inline std::size_t window_length(double window_ms, double sample_rate_hz) {
  return static_cast<std::size_t>(std::floor(window_ms / 1000.0 * sample_rate_hz + 1e-9));
}

/// Fixed-length windows labelled by per-step majority (ties go to the
/// smallest label id).
inline SensorBatch slide_windows(const Recording& rec, double window_ms, double overlap_fraction) {
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
    throw UsageError("overlap fraction must be in [0, 1)");
  }
  const std::size_t len = window_length(window_ms, rec.sample_rate_hz);
  if (len < 1) throw UsageError("window of " + std::to_string(window_ms) + " ms is shorter than one sample");
  const auto step = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(len) * (1.0 - overlap_fraction))));
  SensorBatch batch;
  if (rec.rows() < len) return batch;
  const std::size_t count = (rec.rows() - len) / step + 1;
  const std::size_t n = rec.n_sensors, m = rec.n_vars;
  std::vector<double> values(count * n * m * len);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t start = w * step;
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t v = 0; v < m; ++v) {
        double* dst = values.data() + ((w * n + s) * m + v) * len;
        for (std::size_t t = 0; t < len; ++t) dst[t] = rec.at(start + t, s, v);
      }
    }
    std::map<int, std::size_t> votes;
    for (std::size_t t = 0; t < len; ++t) ++votes[rec.labels[start + t]];
    int best = votes.begin()->first;
    std::size_t best_count = 0;
    for (const auto& [label, c] : votes) {  // ascending label order
      if (c > best_count) {
        best = label;
        best_count = c;
      }
    }
    batch.labels.push_back(best);
    batch.subjects.push_back(rec.subject_id);
  }
  batch.windows = Tensor::from({count, n, m, len}, std::move(values));
  return batch;
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-(sensor, variable) mean and standard deviation.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline ChannelStats fit_channel_stats(const SensorBatch& train, double std_floor = 1e-8) {
  if (train.empty()) throw UsageError("cannot fit normalization on an empty batch");
  const std::size_t b = train.windows.dim(0), ch = train.windows.dim(1) * train.windows.dim(2);
  const std::size_t len = train.windows.dim(3);
  ChannelStats st{std::vector<double>(ch, 0.0), std::vector<double>(ch, 0.0)};
  const auto x = train.windows.data();
  const double count = static_cast<double>(b * len);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t t = 0; t < len; ++t) st.mean[c] += x[(i * ch + c) * len + t];
    }
  }
  for (double& v : st.mean) v /= count;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t t = 0; t < len; ++t) {
        const double dv = x[(i * ch + c) * len + t] - st.mean[c];
        st.stddev[c] += dv * dv;
      }
    }
  }
  for (double& v : st.stddev) v = std::max(std::sqrt(v / count), std_floor);
  return st;
}

inline SensorBatch apply_channel_stats(const SensorBatch& batch, const ChannelStats& st) {
  SensorBatch out = batch;
  if (batch.empty()) return out;
  const std::size_t ch = batch.windows.dim(1) * batch.windows.dim(2), len = batch.windows.dim(3);
  if (ch != st.mean.size()) throw DataError("normalization statistics do not match channel count");
  std::vector<double> v(batch.windows.data().begin(), batch.windows.data().end());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t c = (i / len) % ch;
    v[i] = (v[i] - st.mean[c]) / st.stddev[c];
  }
  out.windows = Tensor::from(batch.windows.shape(), std::move(v));
  return out;
}

/// Standardizes `train` with its own statistics and every batch in `others`
/// with the same train statistics.
inline std::pair<SensorBatch, std::vector<SensorBatch>> zscore_normalize(
    const SensorBatch& train, const std::vector<SensorBatch>& others) {
  const ChannelStats st = fit_channel_stats(train);
  std::vector<SensorBatch> rest;
  rest.reserve(others.size());
  for (const auto& o : others) rest.push_back(apply_channel_stats(o, st));
  return {apply_channel_stats(train, st), std::move(rest)};
}

// ---------------------------------------------------------------------------
// Splits

struct Fold {
  std::string test_subject;
  SensorBatch train;
  SensorBatch test;
};

/// Leave-one-subject-out folds, ordered by subject id.
inline std::vector<Fold> loso_split(const SensorBatch& all) {
  const std::set<std::string> subjects(all.subjects.begin(), all.subjects.end());
  if (subjects.size() < 2) {
    throw UsageError("leave-one-subject-out needs at least 2 subjects; use holdout_split");
  }
  std::vector<Fold> folds;
  for (const auto& s : subjects) {
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < all.size(); ++i) {
      (all.subjects[i] == s ? test_idx : train_idx).push_back(i);
    }
    folds.push_back({s, all.subset(train_idx), all.subset(test_idx)});
  }
  return folds;
}

inline std::vector<Fold> loso_split(const std::vector<Recording>& recordings, double window_ms,
                                    double overlap_fraction) {
  std::vector<SensorBatch> parts;
  for (const auto& r : recordings) parts.push_back(slide_windows(r, window_ms, overlap_fraction));
  return loso_split(SensorBatch::concat(parts));
}

struct HoldoutSplit {
  SensorBatch train, val, test;
};

/// Seeded shuffle followed by contiguous slicing.
inline HoldoutSplit holdout_split(const SensorBatch& batch, std::uint64_t seed,
                                  double train_fraction = 0.8, double val_fraction = 0.1,
                                  double test_fraction = 0.1) {
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
    throw UsageError("holdout fractions must sum to 1");
  }
  const std::size_t b = batch.size();
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(b)));
  const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(b)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= b) {
    throw UsageError("batch of " + std::to_string(b) + " windows is too small for a holdout split");
  }
  std::vector<std::size_t> idx(b);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto take = [&](std::size_t from, std::size_t to) {
    return batch.subset(std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(from),
                                                 idx.begin() + static_cast<std::ptrdiff_t>(to)));
  };
  return {take(0, n_train), take(n_train, n_train + n_val), take(n_train + n_val, b)};
}

// ---------------------------------------------------------------------------
// Synthetic activities

struct SynthSpec {
  std::size_t n_classes = 6;
  std::size_t n_subjects = 4;
  std::size_t windows_per_class = 30;  // per subject
  std::size_t n_sensors = 5;
  std::size_t n_vars = 9;
  std::size_t window = 24;
  double sample_rate_hz = 30.0;
  double noise_std = 0.3;
  double amplitude_jitter = 0.1;  // per-subject, per-sensor gain in [1-j, 1+j]
  std::uint64_t seed = 0;
};

/// Class k drives sensor n, variable m with sin(2π f t / rate + φ) where
/// (f, φ) is drawn once per (k, n, m). Frequencies of different classes on
/// the same channel sit on distinct points of a 0.5 Hz grid. Each subject gets
/// one recording made of a segment per class, `windows_per_class` windows long;
/// t restarts at zero in every segment.
inline std::vector<Recording> synth_generate(const SynthSpec& spec) {
  if (spec.n_classes == 0 || spec.n_subjects == 0 || spec.windows_per_class == 0 ||
      spec.n_sensors == 0 || spec.n_vars == 0 || spec.window == 0 || !(spec.sample_rate_hz > 0)) {
    throw UsageError("synthetic generator needs positive counts and rate");
  }
  std::mt19937_64 rng(spec.seed);
  const std::size_t ch = spec.n_sensors * spec.n_vars;
  const double f_min = 1.0;
  const double f_max = std::min(12.0, spec.sample_rate_hz / 2.0 - 1.0);
  std::vector<double> grid;
  for (double f = f_min; f <= f_max + 1e-9; f += 0.5) grid.push_back(f);
  if (grid.size() < spec.n_classes) {
    throw UsageError("sample rate too low to separate " + std::to_string(spec.n_classes) + " classes");
  }
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  // freq[k][c], phase[k][c]
  std::vector<std::vector<double>> freq(spec.n_classes, std::vector<double>(ch));
  std::vector<std::vector<double>> phase(spec.n_classes, std::vector<double>(ch));
  for (std::size_t c = 0; c < ch; ++c) {
    std::vector<double> pool = grid;
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t k = 0; k < spec.n_classes; ++k) {
      freq[k][c] = pool[k];
      phase[k][c] = phase_dist(rng);
    }
  }
  std::uniform_real_distribution<double> gain_dist(1.0 - spec.amplitude_jitter,
                                                   1.0 + spec.amplitude_jitter);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t seg = spec.windows_per_class * spec.window;

  std::vector<Recording> out;
  for (std::size_t subj = 0; subj < spec.n_subjects; ++subj) {
    Recording rec;
    rec.subject_id = "subject" + std::to_string(subj);
    rec.sample_rate_hz = spec.sample_rate_hz;
    rec.n_sensors = spec.n_sensors;
    rec.n_vars = spec.n_vars;
    for (std::size_t s = 0; s < spec.n_sensors; ++s) {
      for (std::size_t v = 0; v < spec.n_vars; ++v) rec.channel_names.push_back(channel_name(s, v));
    }
    std::vector<double> gain(spec.n_sensors);
    for (double& g : gain) g = gain_dist(rng);
    rec.signals.reserve(spec.n_classes * seg * ch);
    for (std::size_t k = 0; k < spec.n_classes; ++k) {
      for (std::size_t t = 0; t < seg; ++t) {
        rec.timestamps.push_back(static_cast<double>(rec.labels.size()) / spec.sample_rate_hz);
        rec.labels.push_back(static_cast<int>(k));
        for (std::size_t c = 0; c < ch; ++c) {
          const double arg = 2.0 * std::numbers::pi * freq[k][c] * static_cast<double>(t) /
                                 spec.sample_rate_hz + phase[k][c];
          double value = gain[c / spec.n_vars] * std::sin(arg);
          if (spec.noise_std > 0.0) value += spec.noise_std * noise(rng);
          rec.signals.push_back(value);
        }
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest (JSON)

struct ManifestEntry {
  std::string subject_id;
  std::filesystem::path path;
  double sample_rate_hz = 0.0;
  std::size_t n_sensors = 0;
  std::size_t n_vars = 0;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> recordings;
};

/// Relative recording paths are resolved against the manifest's directory.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
    DatasetManifest m;
    m.class_names = j.at("classes").get<std::vector<std::string>>();
    for (const auto& r : j.at("recordings")) {
      ManifestEntry e;
      e.subject_id = r.at("subject_id").get<std::string>();
      e.path = r.at("path").get<std::string>();
      if (e.path.is_relative()) e.path = path.parent_path() / e.path;
      e.sample_rate_hz = r.at("sample_rate_hz").get<double>();
      e.n_sensors = r.at("n_sensors").get<std::size_t>();
      e.n_vars = r.at("n_vars").get<std::size_t>();
      m.recordings.push_back(std::move(e));
    }
    if (m.class_names.size() < 2) throw DataError("manifest needs at least 2 classes");
    if (m.recordings.empty()) throw DataError("manifest lists no recordings");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + path.string() + "': " + e.what());
  }
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["classes"] = m.class_names;
  j["recordings"] = nlohmann::json::array();
  for (const auto& e : m.recordings) {
    j["recordings"].push_back({{"subject_id", e.subject_id},
                               {"path", e.path.string()},
                               {"sample_rate_hz", e.sample_rate_hz},
                               {"n_sensors", e.n_sensors},
                               {"n_vars", e.n_vars}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

/// Parses every recording in the manifest and checks it against the
/// declared sensor layout and class table.
inline std::vector<Recording> load_recordings(const DatasetManifest& m) {
  std::vector<Recording> out;
  for (const auto& e : m.recordings) {
    Recording r = parse_recording(e.path, {e.subject_id, e.sample_rate_hz});
    if (r.n_sensors != e.n_sensors || r.n_vars != e.n_vars) {
      throw DataError(e.path.string() + ": columns describe N=" + std::to_string(r.n_sensors) +
                      ", M=" + std::to_string(r.n_vars) + " but manifest declares N=" +
                      std::to_string(e.n_sensors) + ", M=" + std::to_string(e.n_vars));
    }
    for (int label : r.labels) {
      if (static_cast<std::size_t>(label) >= m.class_names.size()) {
        throw DataError(e.path.string() + ": label " + std::to_string(label) +
                        " outside class table of size " + std::to_string(m.class_names.size()));
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dwhar
