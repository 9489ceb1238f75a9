// SPDX-License-Identifier: Apache-2.0
#include "csa/checkpoint.hpp"

#include <zlib.h>

#include <sstream>

#include "binary_io.hpp"
#include "csa/error.hpp"

namespace csa {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'A', 'C'};
constexpr const char* kMetaPrefix = "checkpoint.";

std::string join(const std::vector<std::string>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

}  // namespace

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

Checkpoint capture_checkpoint(Model& model, const std::vector<std::string>& classes, const Adam* adam,
                              std::map<std::string, std::string> meta) {
  Checkpoint c;
  c.config = model.config();
  c.classes = classes;
  c.meta = std::move(meta);
  const auto collected = model.parameters();
  for (const auto& p : collected.params()) {
    c.tensors.push_back({p.name, p.tensor.shape(), p.tensor.to_vector()});
  }
  for (const auto& b : collected.buffers()) c.tensors.push_back({b.name, {b.values->size()}, *b.values});
  if (adam) {
    const auto& s = adam->state();
    for (std::size_t i = 0; i < adam->params().size(); ++i) {
      const auto& p = adam->params()[i];
      c.tensors.push_back({"adam.m." + p.name, p.tensor.shape(), s.first_moment[i]});
      c.tensors.push_back({"adam.v." + p.name, p.tensor.shape(), s.second_moment[i]});
    }
    c.meta["adam_step"] = std::to_string(s.step_count);
  }
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::string text = serialize(c.config);
  text += std::string(kMetaPrefix) + "classes=" + join(c.classes, ',') + "\n";
  for (const auto& [k, v] : c.meta) {
    if (v.find('\n') != std::string::npos) throw Error(ErrorKind::Config, "checkpoint metadata '" + k + "' spans lines");
    text += kMetaPrefix + k + "=" + v + "\n";
  }
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.string(text);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw Error(ErrorKind::Shape, "checkpoint record " + t.name + ": shape " + shape_to_string(t.shape) + " holds " +
                                        std::to_string(shape_numel(t.shape)) + " values, got " + std::to_string(t.values.size()));
    }
    w.string(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    for (double v : t.values) w.f64(v);
  }
  auto& buf = w.buffer();
  w.u32(crc32_of(buf.data(), buf.size()));
  return std::move(buf);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  detail::ByteReader r(bytes.data(), bytes.size(), what);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw Error(ErrorKind::Parse, what + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::Version, what + ": format version " + std::to_string(version) + " is not supported (expected " +
                                        std::to_string(kCheckpointVersion) + ")");
  }
  const std::string text = r.string();
  const std::uint32_t count = r.u32();
  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.string();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw Error(ErrorKind::Integrity, what + ": record " + t.name + " has implausible rank " + std::to_string(rank));
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = r.u64();
      t.shape.push_back(static_cast<std::size_t>(dim));
      numel *= static_cast<std::size_t>(dim);
      if (dim != 0 && numel / dim > bytes.size()) {
        throw Error(ErrorKind::Integrity, what + ": record " + t.name + " declares more values than the file can hold");
      }
    }
    r.need(numel * 8);
    t.values.resize(numel);
    for (auto& v : t.values) v = r.f64();
    c.tensors.push_back(std::move(t));
  }
  const std::size_t body = r.position();
  const std::uint32_t stored = r.u32();
  if (r.remaining() != 0) {
    throw Error(ErrorKind::Integrity, what + ": " + std::to_string(r.remaining()) + " unexpected trailing bytes");
  }
  const std::uint32_t actual = crc32_of(bytes.data(), body);
  if (stored != actual) {
    char buf[96];
    std::snprintf(buf, sizeof buf, ": checksum mismatch (stored %08x, computed %08x)", stored, actual);
    throw Error(ErrorKind::Integrity, what + buf);
  }

  std::string config_text;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(kMetaPrefix, 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(ErrorKind::Parse, what + ": malformed metadata line '" + line + "'");
      const std::string key = line.substr(std::string(kMetaPrefix).size(), eq - std::string(kMetaPrefix).size());
      const std::string value = line.substr(eq + 1);
      if (key == "classes") c.classes = split_list(value, ',');
      else c.meta[key] = value;
    } else {
      config_text += line + "\n";
    }
  }
  c.config = parse_config(config_text);
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  detail::write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path), path); }

namespace {

void copy_record(const Checkpoint& c, const std::string& name, const Shape& shape, std::span<double> dst) {
  const auto* rec = c.find(name);
  if (!rec) throw Error(ErrorKind::Integrity, "checkpoint has no record '" + name + "'");
  if (rec->shape != shape) {
    throw Error(ErrorKind::Integrity, "checkpoint record '" + name + "' has shape " + shape_to_string(rec->shape) +
                                          ", model expects " + shape_to_string(shape));
  }
  std::copy(rec->values.begin(), rec->values.end(), dst.begin());
}

}  // namespace

void restore_model(const Checkpoint& c, Model& model) {
  auto collected = model.parameters();
  for (const auto& p : collected.params()) {
    Tensor t = p.tensor;
    copy_record(c, p.name, t.shape(), t.mutable_data());
  }
  for (const auto& b : collected.buffers()) copy_record(c, b.name, {b.values->size()}, *b.values);
}

void restore_adam(const Checkpoint& c, Adam& adam) {
  auto& s = adam.mutable_state();
  for (std::size_t i = 0; i < adam.params().size(); ++i) {
    const auto& p = adam.params()[i];
    copy_record(c, "adam.m." + p.name, p.tensor.shape(), s.first_moment[i]);
    copy_record(c, "adam.v." + p.name, p.tensor.shape(), s.second_moment[i]);
  }
  const auto it = c.meta.find("adam_step");
  if (it == c.meta.end()) throw Error(ErrorKind::Integrity, "checkpoint lacks optimizer step count");
  s.step_count = std::stoull(it->second);
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& c) {
  auto model = std::make_unique<Model>(c.config);
  restore_model(c, *model);
  return model;
}

}  // namespace csa
