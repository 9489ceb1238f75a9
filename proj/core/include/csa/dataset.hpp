// SPDX-License-Identifier: Apache-2.0
//
// Clip manifests, the synthetic toy corpus and mini-batch assembly.
//
// Manifest text format, one record per line:
//
//   classes=dog_bark,siren,...
//   path<TAB>label[;label...]<TAB>fold
//
// Commas may replace tabs. Blank lines and lines starting with '#' are
// ignored. Relative paths resolve against the manifest's directory. A path
// ending in ".msp" is read as a feature cache, anything else as a WAV file.
// The UrbanSound8K metadata CSV is accepted as-is.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csa/audio.hpp"
#include "csa/config.hpp"
#include "csa/tensor.hpp"

namespace csa {

struct ManifestEntry {
  std::string path;
  std::vector<std::size_t> labels;  // indices into DatasetManifest::classes
  std::size_t fold = 1;
};

struct DatasetManifest {
  std::vector<std::string> classes;
  LabelMode label_mode = LabelMode::OneHot;
  std::vector<ManifestEntry> entries;

  std::vector<std::size_t> folds() const;
};

/// `base_dir` resolves relative entry paths. Throws a parse error naming the
/// line for malformed records and a configuration error for undeclared class
/// names.
DatasetManifest parse_manifest(const std::string& text, const std::string& base_dir = "");
DatasetManifest load_manifest(const std::string& path);
std::string serialize_manifest(const DatasetManifest& manifest);
void write_manifest(const std::string& path, const DatasetManifest& manifest);

struct ToySpec {
  std::size_t num_classes = 4;
  std::size_t clips_per_class = 25;
  double duration_s = 2.0;
  std::uint64_t seed = 7;
};

/// Class archetypes cycle through steady tone, click train, upward chirp and
/// band-limited noise burst; classes past the fourth reuse an archetype in a
/// shifted frequency band. Each clip draws its onset, event length and SNR
/// from the seed. Clip i of each class lands in fold (i mod 10) + 1.
/// Writes `<out_dir>/audio/*.wav` and `<out_dir>/manifest.txt`.
DatasetManifest generate_toy_dataset(const ToySpec& spec, const std::string& out_dir);
std::vector<std::string> toy_class_names(std::size_t num_classes);
/// The waveform generate_toy_dataset writes for clip `index` of class `label`.
Waveform synthesize_toy_clip(const ToySpec& spec, std::size_t label, std::size_t index);

struct FeatureOptions {
  bool standardize = true;
  bool allow_resample = false;
};

struct Clip {
  std::string id;
  MelSpectrogram features;
  std::vector<std::size_t> labels;
  std::size_t fold = 1;
};

/// Loads and featurizes every entry, fanning out across hardware threads.
std::vector<Clip> load_clips(const DatasetManifest& manifest, const FeatureOptions& options = {});

struct Batch {
  Tensor inputs;   // [N, 1, n_mels, T_max], zero-padded frames
  Tensor targets;  // [N, c] one-hot or multi-hot
  std::vector<std::size_t> frame_lengths;
  std::vector<std::size_t> clip_indices;
};

Batch make_batch(const std::vector<Clip>& clips, const std::vector<std::size_t>& indices, std::size_t num_classes);

struct FoldSplit {
  std::size_t test_fold = 0;
  std::size_t valid_fold = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
};

/// A fold of 0 picks the default: the highest fold tests and the next fold
/// after it (wrapping to the lowest) validates. With one fold every clip
/// trains; with two there is no validation split. Throws a data error when a requested fold is absent.
FoldSplit split_by_fold(const std::vector<Clip>& clips, std::size_t test_fold = 0, std::size_t valid_fold = 0);

}  // namespace csa
