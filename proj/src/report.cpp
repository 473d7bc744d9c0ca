#include "pastanet/report.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "pastanet/types.hpp"

namespace pastanet::eval {

using nlohmann::json;

std::string config_hash_hex(const std::string& canonical_config) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : canonical_config) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string iso_utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string MetricReport::to_json() const {
  json j;
  j["metrics"] = metrics;
  j["series"] = series;
  j["category_counts"] = category_counts;
  if (!config_json.empty()) j["config"] = json::parse(config_json);
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["timestamp"] = timestamp;
  return j.dump(2);
}

std::string MetricReport::to_text_table() const {
  std::size_t width = 6;
  for (const auto& [k, v] : metrics) {
    (void)v;
    width = std::max(width, k.size());
  }
  std::ostringstream out;
  for (const auto& [k, v] : metrics)
    out << std::left << std::setw(static_cast<int>(width) + 2) << k << std::setprecision(6)
        << std::fixed << v << "\n";
  for (const auto& [k, v] : category_counts)
    out << std::left << std::setw(static_cast<int>(width) + 2) << k << v << "\n";
  return out.str();
}

void MetricReport::save_json(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write report " + path);
  out << to_json() << "\n";
}

}  // namespace pastanet::eval
