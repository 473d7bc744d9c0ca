#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pastanet {

struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0;      // measured error / deviation
  double threshold = 0;  // pass bound (value <= threshold, unless inverted)
  bool inverted = false; // negative controls pass when value > threshold
};

/// Reverse-mode verification battery: every layer kind plus the combined
/// Activity2Vec path and each reasoning head at reduced widths, checked at
/// <= 1e-4 relative error in 64-bit, with a corrupted-gradient negative
/// control that must exceed 1e-2.
std::vector<CheckResult> run_gradient_checks();

/// Independent-oracle spot checks (NPMI, AP, IoU, MIL pooling, few-shot
/// split, schedule closed form) sized for an interactive self test.
std::vector<CheckResult> run_oracle_checks(std::uint64_t seed);

bool all_pass(const std::vector<CheckResult>& results);
std::string format_check_table(const std::vector<CheckResult>& results);

}  // namespace pastanet
