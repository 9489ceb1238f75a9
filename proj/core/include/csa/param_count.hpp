// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csa/config.hpp"

namespace csa {

struct ParamBreakdown {
  std::size_t total = 0;
  std::size_t attention = 0;  // all attention-net scalars
  std::vector<std::pair<std::string, std::size_t>> modules;
};

/// Exact number of trainable scalars (BN running statistics excluded).
ParamBreakdown param_count(const ModelConfig& config);

struct NamedConfig {
  std::string name;
  ModelConfig config;
  double table_millions = 0.0;  // published count
};

/// The architectures of the published parameter table at full width.
std::vector<NamedConfig> reference_configs();
std::optional<NamedConfig> find_reference_config(const std::string& name);

struct TableRow {
  std::string name;
  std::size_t count = 0;
  double table_millions = 0.0;
  double relative_deviation = 0.0;  // (count - table) / table
  bool within_tolerance = false;    // |deviation| <= 0.2
};

std::vector<TableRow> reference_table_comparison();

/// True when sorting the CSA rows by our count gives the same order as
/// sorting them by the table value.
bool variant_ordering_matches(const std::vector<TableRow>& rows);

}  // namespace csa
