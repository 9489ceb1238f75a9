// SPDX-License-Identifier: Apache-2.0
//
// Log mel-spectrogram frontend: 16 kHz mono PCM16 input, 512-point Hann
// frames with a 256-sample hop (no centering), power spectrum, 60 triangular
// HTK-mel filters spanning 0..8 kHz, natural log with a 1e-10 floor.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace csa {

inline constexpr std::uint32_t kSampleRate = 16000;
inline constexpr std::size_t kFrameLength = 512;
inline constexpr std::size_t kFrameShift = 256;
inline constexpr std::size_t kSpectrumBins = kFrameLength / 2 + 1;
inline constexpr std::size_t kMelBands = 60;
inline constexpr double kLogFloorMsp = 1e-10;

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  std::uint32_t sample_rate = kSampleRate;
};

/// Row-major [rows x cols] real matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

struct MelSpectrogram {
  std::size_t n_mels = kMelBands;
  std::size_t frames = 0;
  std::vector<double> values;  // [n_mels x frames], row-major

  double operator()(std::size_t band, std::size_t frame) const { return values[band * frames + frame]; }
};

struct WavOptions {
  /// Linear-interpolation resampling of non-16 kHz input instead of rejecting it.
  bool allow_resample = false;
};

/// RIFF/WAVE PCM16, mono or stereo (channels averaged), scaled by 1/32768.
Waveform load_wav(const std::string& path, const WavOptions& options = {});
Waveform parse_wav(const std::vector<std::uint8_t>& bytes, const WavOptions& options = {});
/// Writes mono PCM16 with clipping to [-32768, 32767].
void write_wav(const std::string& path, const Waveform& wave);
std::vector<std::uint8_t> encode_wav(const Waveform& wave);

Waveform resample_linear(const Waveform& wave, std::uint32_t target_rate);

/// floor((len - 512) / 256) + 1 for len >= 512.
std::size_t frame_count(std::size_t samples);

std::vector<double> hann_window(std::size_t length);

/// [257 x T] power spectrum |DFT|^2 of Hann-windowed frames.
Matrix stft_power(const Waveform& wave);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// [n_mels x n_bins] peak-normalized triangles with HTK-mel-spaced centers
/// between 0 Hz and sr/2.
Matrix mel_filterbank(std::size_t n_bins = kSpectrumBins, std::size_t n_mels = kMelBands, double sample_rate = kSampleRate);

MelSpectrogram log_msp(const Waveform& wave);

/// Zero mean, unit variance over the whole clip (variance floored at 1e-12).
void standardize(MelSpectrogram& msp);

/// Feature cache: "MSP1", u32 n_mels, u32 frames, then f64 values, all
/// little-endian, row-major.
void write_feature_cache(const std::string& path, const MelSpectrogram& msp);
MelSpectrogram read_feature_cache(const std::string& path);

}  // namespace csa
