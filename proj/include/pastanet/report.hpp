#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pastanet::eval {

/// Evaluation output record. Scalar metrics that are ratios stay in [0,1];
/// the resolved configuration rides along for reproducibility. The timestamp
/// is left empty unless explicitly stamped, so reports stay byte-identical
/// across reruns with the same seed/config/inputs.
struct MetricReport {
  std::map<std::string, double> metrics;
  std::map<std::string, std::vector<double>> series;  // loss curves, per-class APs
  std::map<std::string, std::uint64_t> category_counts;
  std::string config_json;  // resolved configuration (canonical form)
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string timestamp;

  std::string to_json() const;
  std::string to_text_table() const;
  void save_json(const std::string& path) const;
};

/// FNV-1a over the canonical config text; stable across platforms.
std::string config_hash_hex(const std::string& canonical_config);

/// Current UTC time in ISO-8601; only called when stamping is requested.
std::string iso_utc_now();

}  // namespace pastanet::eval
