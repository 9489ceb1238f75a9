// SPDX-License-Identifier: Apache-2.0
#include "csa/param_count.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "csa/model.hpp"

namespace csa {

namespace {

std::string group_of(const std::string& name) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = name.find('.', start);
    parts.push_back(name.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (parts.size() >= 3 && parts[0] == "blocks" && (parts[2] == "branch" || parts[2] == "attention" || parts[2] == "post_bn")) {
    return parts[0] + "." + parts[1] + "." + parts[2];
  }
  return parts.size() >= 2 ? parts[0] + "." + parts[1] : parts[0];
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace

ParamBreakdown param_count(const ModelConfig& config) {
  Model model(config);
  const auto collected = model.parameters();
  ParamBreakdown out;
  std::vector<std::string> order;
  std::map<std::string, std::size_t> counts;
  for (const auto& p : collected.params()) {
    const auto g = group_of(p.name);
    if (!counts.count(g)) order.push_back(g);
    counts[g] += p.tensor.numel();
    out.total += p.tensor.numel();
    if (p.name.find(".attention.") != std::string::npos) out.attention += p.tensor.numel();
  }
  for (const auto& g : order) out.modules.emplace_back(g, counts[g]);
  return out;
}

std::vector<NamedConfig> reference_configs() {
  auto base = [] {
    ModelConfig c;
    c.num_blocks = 3;
    c.channels = 256;
    c.gru_hidden = 128;
    c.num_classes = 10;
    return c;
  };
  auto csa = [&](AttentionKind kind, std::size_t kernel) {
    ModelConfig c = base();
    c.block_type = BlockType::CSA;
    c.attention = {kind, Sampling::MaxPoolDownUp, kernel};
    return c;
  };
  ModelConfig dcrnn = base();
  dcrnn.block_type = BlockType::PlainCNN;
  ModelConfig res = base();
  res.block_type = BlockType::ResCNN;
  return {
      {"DCRNN", dcrnn, 1.484},
      {"ResCNN", res, 0.510},
      {"CC_SAM_3D", csa(AttentionKind::CC_SAM_3D, 3), 1.692},
      {"CW_SAM_2.5D", csa(AttentionKind::CW_SAM_2_5D, 3), 0.518},
      {"CW_SAM_2.5D_shared", csa(AttentionKind::CW_SAM_2_5D_SHARED, 3), 0.513},
      {"SAM_2D", csa(AttentionKind::SAM_2D, 3), 0.515},
      {"TAM_1D", csa(AttentionKind::TAM_1D, 1), 0.512},
  };
}

std::optional<NamedConfig> find_reference_config(const std::string& name) {
  for (auto& c : reference_configs()) {
    if (lower(c.name) == lower(name)) return c;
  }
  return std::nullopt;
}

std::vector<TableRow> reference_table_comparison() {
  std::vector<TableRow> rows;
  for (const auto& nc : reference_configs()) {
    TableRow r;
    r.name = nc.name;
    r.count = param_count(nc.config).total;
    r.table_millions = nc.table_millions;
    const double table = nc.table_millions * 1e6;
    r.relative_deviation = (static_cast<double>(r.count) - table) / table;
    r.within_tolerance = std::abs(r.relative_deviation) <= 0.2;
    rows.push_back(r);
  }
  return rows;
}

bool variant_ordering_matches(const std::vector<TableRow>& rows) {
  std::vector<TableRow> csa_rows;
  for (const auto& r : rows) {
    const auto nc = find_reference_config(r.name);
    if (nc && nc->config.block_type == BlockType::CSA) csa_rows.push_back(r);
  }
  auto by_count = csa_rows, by_table = csa_rows;
  std::stable_sort(by_count.begin(), by_count.end(), [](const auto& a, const auto& b) { return a.count < b.count; });
  std::stable_sort(by_table.begin(), by_table.end(),
                   [](const auto& a, const auto& b) { return a.table_millions < b.table_millions; });
  for (std::size_t i = 0; i < by_count.size(); ++i) {
    if (by_count[i].name != by_table[i].name) return false;
  }
  return true;
}

}  // namespace csa
