// SPDX-License-Identifier: Apache-2.0
#include "csa/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>

#include "binary_io.hpp"
#include "csa/error.hpp"

namespace csa {

namespace detail {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorKind::Io, "failed reading " + path);
  return bytes;
}

void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot rename " + tmp + " to " + path + ": " + ec.message());
}

}  // namespace detail

namespace {

std::uint16_t read_u16(const std::vector<std::uint8_t>& b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

[[noreturn]] void malformed(std::size_t offset, const std::string& what) {
  throw Error(ErrorKind::Parse, "malformed WAV at byte offset " + std::to_string(offset) + ": " + what);
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

// FFTW planning is not thread-safe; one shared plan is created once and run
// through the new-array execute interface, which is.
struct FftPlan {
  fftw_plan plan = nullptr;
  FftPlan() {
    auto* in = fftw_alloc_real(kFrameLength);
    auto* out = fftw_alloc_complex(kSpectrumBins);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(kFrameLength), in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
  }
  ~FftPlan() { fftw_destroy_plan(plan); }
};

const FftPlan& fft_plan() {
  static FftPlan plan;
  return plan;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

Waveform parse_wav(const std::vector<std::uint8_t>& b, const WavOptions& options) {
  if (b.size() < 12) malformed(b.size(), "file shorter than the 12-byte RIFF header");
  if (std::memcmp(b.data(), "RIFF", 4) != 0) malformed(0, "missing RIFF tag");
  if (std::memcmp(b.data() + 8, "WAVE", 4) != 0) malformed(8, "missing WAVE tag");

  std::size_t off = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* pcm = nullptr;
  std::size_t pcm_bytes = 0;
  while (off + 8 <= b.size()) {
    const std::string id(reinterpret_cast<const char*>(b.data() + off), 4);
    const std::uint32_t size = read_u32(b, off + 4);
    const std::size_t body = off + 8;
    if (id == "fmt ") {
      if (size < 16 || body + 16 > b.size()) malformed(body, "fmt chunk too short");
      format = read_u16(b, body);
      channels = read_u16(b, body + 2);
      rate = read_u32(b, body + 4);
      bits = read_u16(b, body + 14);
      if (format == 0xFFFE && size >= 40 && body + 26 <= b.size()) format = read_u16(b, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) malformed(off, "data chunk before fmt chunk");
      pcm = b.data() + body;
      pcm_bytes = std::min<std::size_t>(size, b.size() - body);
      if (pcm_bytes < size) {
        malformed(b.size(), "data chunk declares " + std::to_string(size) + " bytes, " + std::to_string(pcm_bytes) + " present");
      }
      break;
    }
    off = body + size + (size & 1);
  }
  if (!have_fmt) malformed(off, "no fmt chunk");
  if (!pcm) malformed(off, "no data chunk");
  if (format != 1 || bits != 16) {
    throw Error(ErrorKind::UnsupportedFormat, "only PCM 16-bit WAV is supported (format tag " + std::to_string(format) +
                                                  ", " + std::to_string(bits) + " bits)");
  }
  if (channels != 1 && channels != 2) {
    throw Error(ErrorKind::UnsupportedFormat, "only mono or stereo WAV is supported, got " + std::to_string(channels) + " channels");
  }
  const std::size_t frame_bytes = 2u * channels;
  const std::size_t n = pcm_bytes / frame_bytes;
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t p = i * frame_bytes + 2 * c;
      const auto raw = static_cast<std::int16_t>(static_cast<std::uint16_t>(pcm[p] | (pcm[p + 1] << 8)));
      acc += raw;
    }
    w.samples[i] = acc / channels / 32768.0;
  }
  if (w.samples.empty()) throw Error(ErrorKind::Data, "WAV contains no samples");
  if (rate != kSampleRate) {
    if (!options.allow_resample) {
      throw Error(ErrorKind::UnsupportedFormat, "sample rate " + std::to_string(rate) +
                                                    " Hz rejected; input must be 16000 Hz (enable resampling to convert)");
    }
    w = resample_linear(w, kSampleRate);
  }
  return w;
}

Waveform load_wav(const std::string& path, const WavOptions& options) {
  try {
    return parse_wav(detail::read_file(path), options);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const Waveform& wave) {
  std::vector<std::uint8_t> b;
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(b, 16);
  put_u16(b, 1);
  put_u16(b, 1);
  put_u32(b, wave.sample_rate);
  put_u32(b, wave.sample_rate * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put_u32(b, data_bytes);
  for (double s : wave.samples) {
    const double scaled = std::round(s * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put_u16(b, static_cast<std::uint16_t>(v));
  }
  return b;
}

void write_wav(const std::string& path, const Waveform& wave) { detail::write_file_atomic(path, encode_wav(wave)); }

Waveform resample_linear(const Waveform& wave, std::uint32_t target_rate) {
  if (wave.sample_rate == target_rate) return wave;
  if (wave.sample_rate == 0) throw Error(ErrorKind::Data, "sample rate must be positive");
  const double ratio = static_cast<double>(wave.sample_rate) / target_rate;
  const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(wave.samples.size() - 1) / ratio)) + 1;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double src = static_cast<double>(i) * ratio;
    const auto i0 = static_cast<std::size_t>(src);
    const std::size_t i1 = std::min(i0 + 1, wave.samples.size() - 1);
    const double frac = src - static_cast<double>(i0);
    out.samples[i] = wave.samples[i0] * (1 - frac) + wave.samples[i1] * frac;
  }
  return out;
}

std::size_t frame_count(std::size_t samples) {
  if (samples < kFrameLength) {
    throw Error(ErrorKind::Geometry, "waveform of " + std::to_string(samples) + " samples is shorter than the minimum " +
                                         std::to_string(kFrameLength));
  }
  return (samples - kFrameLength) / kFrameShift + 1;
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t i = 0; i < length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(length));
  }
  return w;
}

Matrix stft_power(const Waveform& wave) {
  const std::size_t frames = frame_count(wave.samples.size());
  static const std::vector<double> window = hann_window(kFrameLength);
  const auto& plan = fft_plan();
  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(kFrameLength));
  std::unique_ptr<fftw_complex, FftwDeleter> out(fftw_alloc_complex(kSpectrumBins));
  Matrix power{kSpectrumBins, frames, std::vector<double>(kSpectrumBins * frames)};
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = wave.samples.data() + t * kFrameShift;
    for (std::size_t i = 0; i < kFrameLength; ++i) in.get()[i] = src[i] * window[i];
    fftw_execute_dft_r2c(plan.plan, in.get(), out.get());
    for (std::size_t k = 0; k < kSpectrumBins; ++k) {
      const double re = out.get()[k][0], im = out.get()[k][1];
      power(k, t) = re * re + im * im;
    }
  }
  return power;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Matrix mel_filterbank(std::size_t n_bins, std::size_t n_mels, double sample_rate) {
  if (n_bins < 2 || n_mels == 0) throw Error(ErrorKind::Config, "mel filterbank needs at least 2 bins and 1 band");
  const double nyquist = sample_rate / 2.0;
  const double top = hz_to_mel(nyquist);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  const double bin_hz = nyquist / static_cast<double>(n_bins - 1);
  Matrix fb{n_mels, n_bins, std::vector<double>(n_mels * n_bins, 0.0)};
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double w = 0.0;
      if (f > lo && f <= center) w = (f - lo) / (center - lo);
      else if (f > center && f < hi) w = (hi - f) / (hi - center);
      fb(m, k) = w;
    }
  }
  return fb;
}

MelSpectrogram log_msp(const Waveform& wave) {
  const Matrix power = stft_power(wave);
  static const Matrix fb = mel_filterbank();
  MelSpectrogram msp;
  msp.n_mels = kMelBands;
  msp.frames = power.cols;
  msp.values.assign(msp.n_mels * msp.frames, 0.0);
  for (std::size_t m = 0; m < kMelBands; ++m) {
    for (std::size_t k = 0; k < kSpectrumBins; ++k) {
      const double w = fb(m, k);
      if (w == 0.0) continue;
      for (std::size_t t = 0; t < power.cols; ++t) msp.values[m * msp.frames + t] += w * power(k, t);
    }
  }
  for (auto& v : msp.values) v = std::log(v + kLogFloorMsp);
  return msp;
}

void standardize(MelSpectrogram& msp) {
  if (msp.values.empty()) return;
  double mean = 0.0;
  for (double v : msp.values) mean += v;
  mean /= static_cast<double>(msp.values.size());
  double var = 0.0;
  for (double v : msp.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(msp.values.size());
  const double inv = 1.0 / std::sqrt(std::max(var, 1e-12));
  for (auto& v : msp.values) v = (v - mean) * inv;
}

void write_feature_cache(const std::string& path, const MelSpectrogram& msp) {
  detail::ByteWriter w;
  w.bytes("MSP1", 4);
  w.u32(static_cast<std::uint32_t>(msp.n_mels));
  w.u32(static_cast<std::uint32_t>(msp.frames));
  for (double v : msp.values) w.f64(v);
  detail::write_file_atomic(path, w.buffer());
}

MelSpectrogram read_feature_cache(const std::string& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes.data(), bytes.size(), "feature cache " + path);
  const auto* magic = r.take(4);
  if (std::memcmp(magic, "MSP1", 4) != 0) throw Error(ErrorKind::Parse, path + ": not an MSP1 feature cache");
  MelSpectrogram msp;
  msp.n_mels = r.u32();
  msp.frames = r.u32();
  const std::size_t n = msp.n_mels * msp.frames;
  r.need(n * 8);
  msp.values.resize(n);
  for (auto& v : msp.values) v = r.f64();
  if (r.remaining() != 0) throw Error(ErrorKind::Integrity, path + ": trailing bytes after feature payload");
  return msp;
}

}  // namespace csa
