// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint, little-endian throughout:
//
//   "CSAC" | u32 version | u32 len + config text | u32 record count |
//   records: u32 len + name, u32 rank, u64 dims[rank], f64 payload |
//   u32 CRC-32 of every preceding byte
//
// The config text is the ModelConfig serialization followed by
// `checkpoint.<key>=value` metadata lines (class list, epoch, RNG state).
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "csa/config.hpp"
#include "csa/model.hpp"
#include "csa/objective.hpp"

namespace csa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> classes;
  std::map<std::string, std::string> meta;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
};

/// Snapshot of parameters, BN running statistics and (optionally) Adam
/// moments under `adam.m.<param>` / `adam.v.<param>`.
Checkpoint capture_checkpoint(Model& model, const std::vector<std::string>& classes, const Adam* adam = nullptr,
                              std::map<std::string, std::string> meta = {});

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Integrity errors report truncation (expected vs actual bytes) and checksum
/// mismatches; an unknown version is a version error.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what = "checkpoint");

/// Atomic: writes `path.tmp` then renames.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

/// Copies every parameter and buffer of `model` from the checkpoint. Missing
/// records or shape mismatches are integrity errors.
void restore_model(const Checkpoint& checkpoint, Model& model);
void restore_adam(const Checkpoint& checkpoint, Adam& adam);
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& checkpoint);

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size);

}  // namespace csa
