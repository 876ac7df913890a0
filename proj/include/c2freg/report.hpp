#pragma once

// Result tables, rendered aligned for people and comma-separated for tools.

#include <string>
#include <vector>

#include "c2freg/metrics.hpp"

namespace c2freg {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string aligned() const;
  std::string csv() const;
};

/// Shortest round-trippable decimal form of v.
std::string format_number(double v);

/// One row per case (id, mean DSC, per-structure DSC, mean HD95).
Table case_table(const std::vector<CaseResult>& cases);
/// Mean DSC, DSC30 and mean HD95 over cases.
Table summary_table(const std::vector<CaseResult>& cases);

}  // namespace c2freg
