// SPDX-License-Identifier: Apache-2.0
#include "csa/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "binary_io.hpp"
#include "csa/error.hpp"

namespace csa {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::size_t parse_fold(const std::string& s, std::size_t line) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty() || v == 0) {
    throw Error(ErrorKind::Parse, "manifest line " + std::to_string(line) + ": fold must be a positive integer, got '" + s + "'");
  }
  return v;
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (base_dir.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

bool is_urbansound_csv(const std::string& text) {
  const auto first = trim(text.substr(0, text.find('\n')));
  return first.rfind("slice_file_name", 0) == 0;
}

DatasetManifest parse_urbansound(const std::string& text, const std::string& base_dir) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  const auto header = split(trim(line), ',');
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorKind::Parse, "UrbanSound8K metadata lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_file = column("slice_file_name"), c_fold = column("fold"), c_id = column("classID"),
                    c_class = column("class");
  std::string audio_root = (fs::path(base_dir) / "audio").string();
  if (!fs::exists(audio_root) && fs::exists(fs::path(base_dir) / ".." / "audio")) {
    audio_root = (fs::path(base_dir) / ".." / "audio").lexically_normal().string();
  }
  struct Row {
    std::string file;
    std::size_t fold, class_id;
  };
  std::vector<Row> rows;
  std::map<std::size_t, std::string> names;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(trim(line), ',');
    if (cells.size() < header.size()) {
      throw Error(ErrorKind::Parse, "UrbanSound8K metadata line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()));
    }
    const std::size_t fold = parse_fold(cells[c_fold], line_no);
    std::size_t id = 0;
    try {
      id = std::stoul(cells[c_id]);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Parse, "UrbanSound8K metadata line " + std::to_string(line_no) + ": bad classID");
    }
    names[id] = cells[c_class];
    rows.push_back({cells[c_file], fold, id});
  }
  DatasetManifest m;
  std::map<std::size_t, std::size_t> index;
  for (const auto& [id, name] : names) {
    index[id] = m.classes.size();
    m.classes.push_back(name);
  }
  for (const auto& r : rows) {
    const std::string path = (fs::path(audio_root) / ("fold" + std::to_string(r.fold)) / r.file).string();
    m.entries.push_back({path, {index[r.class_id]}, r.fold});
  }
  if (m.entries.empty()) throw Error(ErrorKind::Data, "UrbanSound8K metadata lists no clips");
  return m;
}

}  // namespace

std::vector<std::size_t> DatasetManifest::folds() const {
  std::set<std::size_t> s;
  for (const auto& e : entries) s.insert(e.fold);
  return {s.begin(), s.end()};
}

DatasetManifest parse_manifest(const std::string& text, const std::string& base_dir) {
  if (is_urbansound_csv(text)) return parse_urbansound(text, base_dir);
  DatasetManifest m;
  bool declared_mode = false;
  std::map<std::string, std::size_t> index;
  struct Pending {
    std::string path, labels;
    std::size_t fold, line;
  };
  std::vector<Pending> pending;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("classes=", 0) == 0) {
      for (const auto& name : split(line.substr(8), ',')) {
        if (name.empty()) throw Error(ErrorKind::Parse, "manifest line " + std::to_string(line_no) + ": empty class name");
        if (index.count(name)) throw Error(ErrorKind::Config, "class '" + name + "' declared twice");
        index[name] = m.classes.size();
        m.classes.push_back(name);
      }
      continue;
    }
    if (line.rfind("mode=", 0) == 0) {
      m.label_mode = parse_label_mode(trim(line.substr(5)));
      declared_mode = true;
      continue;
    }
    const char sep = line.find('\t') != std::string::npos ? '\t' : ',';
    const auto cells = split(line, sep);
    if (cells.size() != 3) {
      throw Error(ErrorKind::Parse, "manifest line " + std::to_string(line_no) + ": expected 'path, labels, fold', got " +
                                        std::to_string(cells.size()) + " fields");
    }
    if (cells[0].empty()) throw Error(ErrorKind::Parse, "manifest line " + std::to_string(line_no) + ": empty path");
    pending.push_back({cells[0], cells[1], parse_fold(cells[2], line_no), line_no});
  }
  if (m.classes.empty()) throw Error(ErrorKind::Config, "manifest declares no classes (expected a 'classes=' line)");
  bool multi = false;
  for (const auto& p : pending) {
    ManifestEntry e;
    e.path = resolve(base_dir, p.path);
    e.fold = p.fold;
    for (const auto& name : split(p.labels, ';')) {
      if (name.empty()) continue;
      const auto it = index.find(name);
      if (it == index.end()) {
        throw Error(ErrorKind::Config, "manifest line " + std::to_string(p.line) + ": class '" + name + "' is not declared");
      }
      if (std::find(e.labels.begin(), e.labels.end(), it->second) == e.labels.end()) e.labels.push_back(it->second);
    }
    if (e.labels.size() != 1) multi = true;
    m.entries.push_back(std::move(e));
  }
  if (!declared_mode && multi) m.label_mode = LabelMode::MultiHot;
  if (m.label_mode == LabelMode::OneHot) {
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      if (m.entries[i].labels.size() != 1) {
        throw Error(ErrorKind::Data, "single-label manifest entry " + m.entries[i].path + " has " +
                                         std::to_string(m.entries[i].labels.size()) + " labels");
      }
    }
  }
  if (m.entries.empty()) throw Error(ErrorKind::Data, "manifest lists no clips");
  return m;
}

DatasetManifest load_manifest(const std::string& path) {
  const auto bytes = detail::read_file(path);
  const std::string text(bytes.begin(), bytes.end());
  try {
    return parse_manifest(text, fs::path(path).parent_path().string());
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

std::string serialize_manifest(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << "classes=";
  for (std::size_t i = 0; i < manifest.classes.size(); ++i) out << (i ? "," : "") << manifest.classes[i];
  out << "\nmode=" << to_string(manifest.label_mode) << "\n";
  for (const auto& e : manifest.entries) {
    out << e.path << '\t';
    for (std::size_t i = 0; i < e.labels.size(); ++i) out << (i ? ";" : "") << manifest.classes.at(e.labels[i]);
    out << '\t' << e.fold << '\n';
  }
  return out.str();
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  const std::string text = serialize_manifest(manifest);
  detail::write_file_atomic(path, {text.begin(), text.end()});
}

// ---------------------------------------------------------------------------
// Toy corpus

std::vector<std::string> toy_class_names(std::size_t num_classes) {
  static const char* base[] = {"tone", "clicks", "chirp", "noise"};
  std::vector<std::string> names;
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::string n = base[k % 4];
    if (k >= 4) n += std::to_string(k / 4 + 1);
    names.push_back(n);
  }
  return names;
}

namespace {

double raised_cosine_envelope(std::size_t i, std::size_t len, std::size_t ramp) {
  if (ramp == 0) return 1.0;
  const auto r = std::min(ramp, len / 2);
  if (r == 0) return 1.0;
  if (i < r) return 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(r));
  if (i >= len - r) return 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(len - 1 - i) / static_cast<double>(r));
  return 1.0;
}

}  // namespace

Waveform synthesize_toy_clip(const ToySpec& spec, std::size_t label, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  const double sr = kSampleRate;
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * sr));
  Waveform w;
  w.samples.assign(n, 0.0);

  const std::size_t archetype = label % 4;
  const double shift = 1.0 + 0.6 * static_cast<double>(label / 4);
  const double dur = spec.duration_s;
  double event_s = 0.0;
  switch (archetype) {
    case 0: event_s = range(0.5, 0.8) * dur; break;
    case 1: event_s = range(0.4, 0.7) * dur; break;
    case 2: event_s = range(0.2, 0.4) * dur; break;
    default: event_s = range(0.08, 0.2) * dur; break;
  }
  const auto len = std::max<std::size_t>(1, std::min(n, static_cast<std::size_t>(event_s * sr)));
  const auto onset = static_cast<std::size_t>(u(rng) * static_cast<double>(n - len));
  std::vector<double> event(len, 0.0);
  const double nyq_guard = 0.45 * sr;

  switch (archetype) {
    case 0: {
      const double f = std::min(range(400.0, 1000.0) * shift, nyq_guard);
      const double phase = range(0.0, 2 * std::numbers::pi);
      for (std::size_t i = 0; i < len; ++i) event[i] = std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / sr + phase);
      break;
    }
    case 1: {
      const auto period = static_cast<std::size_t>(range(0.04, 0.08) * sr);
      const auto click = static_cast<std::size_t>(0.003 * sr);
      const double f = std::min(3000.0 * shift, nyq_guard);
      for (std::size_t start = 0; start < len; start += period) {
        for (std::size_t j = 0; j < click && start + j < len; ++j) {
          const double decay = std::exp(-static_cast<double>(j) / (0.3 * static_cast<double>(click)));
          event[start + j] = decay * std::sin(2 * std::numbers::pi * f * static_cast<double>(j) / sr);
        }
      }
      break;
    }
    case 2: {
      const double f0 = std::min(range(300.0, 600.0) * shift, nyq_guard);
      const double f1 = std::min(range(2500.0, 3500.0) * shift, nyq_guard);
      const double t_len = static_cast<double>(len) / sr;
      for (std::size_t i = 0; i < len; ++i) {
        const double t = static_cast<double>(i) / sr;
        event[i] = std::sin(2 * std::numbers::pi * (f0 * t + 0.5 * (f1 - f0) * t * t / t_len));
      }
      break;
    }
    default: {
      const double lo = std::min(2000.0 * shift, nyq_guard - 2000.0);
      const double hi = lo + 3000.0;
      constexpr int kPartials = 48;
      for (int p = 0; p < kPartials; ++p) {
        const double f = range(lo, hi);
        const double phase = range(0.0, 2 * std::numbers::pi);
        for (std::size_t i = 0; i < len; ++i) {
          event[i] += std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / sr + phase);
        }
      }
      break;
    }
  }

  const auto ramp = static_cast<std::size_t>(0.005 * sr);
  double event_power = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    event[i] *= raised_cosine_envelope(i, len, ramp);
    event_power += event[i] * event[i];
  }
  event_power /= static_cast<double>(len);

  const double noise_rms = 0.01;
  const double snr_db = range(10.0, 20.0);
  const double gain = event_power > 0 ? noise_rms * std::pow(10.0, snr_db / 20.0) / std::sqrt(event_power) : 0.0;
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = noise_rms * gauss(rng);
  for (std::size_t i = 0; i < len; ++i) w.samples[onset + i] += gain * event[i];
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  if (peak > 0.9) {
    for (auto& s : w.samples) s *= 0.9 / peak;
  }
  return w;
}

DatasetManifest generate_toy_dataset(const ToySpec& spec, const std::string& out_dir) {
  if (spec.num_classes < 2) throw Error(ErrorKind::Config, "toy corpus needs at least 2 classes");
  if (spec.clips_per_class == 0) throw Error(ErrorKind::Config, "toy corpus needs at least 1 clip per class");
  if (!(spec.duration_s * kSampleRate >= static_cast<double>(kFrameLength))) {
    throw Error(ErrorKind::Config, "toy clip duration must cover at least one 512-sample frame");
  }
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "audio", ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + out_dir + "/audio: " + ec.message());

  DatasetManifest relative;
  relative.classes = toy_class_names(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.clips_per_class; ++i) {
      char name[96];
      std::snprintf(name, sizeof name, "audio/%s_%03zu.wav", relative.classes[c].c_str(), i);
      write_wav((fs::path(out_dir) / name).string(), synthesize_toy_clip(spec, c, i));
      relative.entries.push_back({name, {c}, i % 10 + 1});
    }
  }
  const std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
  write_manifest(manifest_path, relative);
  return load_manifest(manifest_path);
}

// ---------------------------------------------------------------------------
// Features and batches

std::vector<Clip> load_clips(const DatasetManifest& manifest, const FeatureOptions& options) {
  const std::size_t n = manifest.entries.size();
  std::vector<Clip> clips(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const auto& e = manifest.entries[i];
        Clip c;
        c.id = fs::path(e.path).stem().string();
        c.labels = e.labels;
        c.fold = e.fold;
        if (fs::path(e.path).extension() == ".msp") {
          c.features = read_feature_cache(e.path);
        } else {
          c.features = log_msp(load_wav(e.path, WavOptions{options.allow_resample}));
        }
        if (options.standardize) standardize(c.features);
        clips[i] = std::move(c);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(n, 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return clips;
}

Batch make_batch(const std::vector<Clip>& clips, const std::vector<std::size_t>& indices, std::size_t num_classes) {
  if (indices.empty()) throw Error(ErrorKind::Data, "empty batch");
  std::size_t t_max = 0;
  const std::size_t bands = clips.at(indices[0]).features.n_mels;
  for (auto i : indices) {
    const auto& f = clips.at(i).features;
    if (f.n_mels != bands) {
      throw Error(ErrorKind::Data, "clip " + clips[i].id + " has " + std::to_string(f.n_mels) + " mel bands, expected " +
                                       std::to_string(bands));
    }
    t_max = std::max(t_max, f.frames);
  }
  const std::size_t n = indices.size();
  std::vector<double> x(n * bands * t_max, 0.0);
  std::vector<double> y(n * num_classes, 0.0);
  Batch b;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& c = clips[indices[k]];
    for (std::size_t m = 0; m < bands; ++m) {
      std::copy_n(c.features.values.begin() + static_cast<std::ptrdiff_t>(m * c.features.frames), c.features.frames,
                  x.begin() + static_cast<std::ptrdiff_t>((k * bands + m) * t_max));
    }
    for (auto l : c.labels) {
      if (l >= num_classes) throw Error(ErrorKind::Config, "label index " + std::to_string(l) + " exceeds class count");
      y[k * num_classes + l] = 1.0;
    }
    b.frame_lengths.push_back(c.features.frames);
  }
  b.inputs = Tensor::from({n, 1, bands, t_max}, std::move(x));
  b.targets = Tensor::from({n, num_classes}, std::move(y));
  b.clip_indices = indices;
  return b;
}

FoldSplit split_by_fold(const std::vector<Clip>& clips, std::size_t test_fold, std::size_t valid_fold) {
  std::set<std::size_t> folds;
  for (const auto& c : clips) folds.insert(c.fold);
  if (folds.empty()) throw Error(ErrorKind::Data, "no clips to split");
  FoldSplit s;
  if (folds.size() == 1) {
    for (std::size_t i = 0; i < clips.size(); ++i) s.train.push_back(i);
    return s;
  }
  s.test_fold = test_fold ? test_fold : *folds.rbegin();
  if (!folds.count(s.test_fold)) throw Error(ErrorKind::Data, "test fold " + std::to_string(s.test_fold) + " has no clips");
  if (folds.size() > 2) {
    if (valid_fold) {
      s.valid_fold = valid_fold;
    } else {
      auto it = folds.upper_bound(s.test_fold);
      s.valid_fold = it == folds.end() ? *folds.begin() : *it;
    }
    if (!folds.count(s.valid_fold)) throw Error(ErrorKind::Data, "validation fold " + std::to_string(s.valid_fold) + " has no clips");
    if (s.valid_fold == s.test_fold) throw Error(ErrorKind::Config, "validation and test folds must differ");
  }
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].fold == s.test_fold) s.test.push_back(i);
    else if (s.valid_fold && clips[i].fold == s.valid_fold) s.valid.push_back(i);
    else s.train.push_back(i);
  }
  return s;
}

}  // namespace csa
