#include "c2freg/report.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>

namespace c2freg {

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string Table::aligned() const {
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c)
      width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string cell = c < cells.size() ? cells[c] : "";
      if (c) os << "  ";
      os << cell << std::string(width[c] - cell.size(), ' ');
    }
    os << "\n";
  };
  line(header);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  os << std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') << "\n";
  for (const auto& row : rows) line(row);
  return os.str();
}

std::string Table::csv() const {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) os << (c ? "," : "") << cells[c];
    os << "\n";
  };
  line(header);
  for (const auto& row : rows) line(row);
  return os.str();
}

Table case_table(const std::vector<CaseResult>& cases) {
  std::size_t k = 0;
  for (const auto& c : cases) k = std::max(k, c.dice.size());
  Table t;
  t.header = {"case", "mean_dsc"};
  for (std::size_t i = 1; i <= k; ++i) t.header.push_back("dsc_" + std::to_string(i));
  t.header.push_back("mean_hd95");
  for (const auto& c : cases) {
    std::vector<std::string> row{c.id, format_number(c.mean_dice())};
    for (std::size_t i = 0; i < k; ++i) row.push_back(i < c.dice.size() ? format_number(c.dice[i]) : "");
    const auto h = c.mean_hd95();
    row.push_back(h ? format_number(*h) : "nan");
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table summary_table(const std::vector<CaseResult>& cases) {
  std::vector<double> dsc;
  double hd_sum = 0.0;
  std::size_t hd_n = 0;
  for (const auto& c : cases) {
    dsc.push_back(c.mean_dice());
    if (const auto h = c.mean_hd95()) {
      hd_sum += *h;
      ++hd_n;
    }
  }
  Table t;
  t.header = {"cases", "mean_dsc", "dsc30", "mean_hd95"};
  if (dsc.empty()) return t;
  const double mean = std::accumulate(dsc.begin(), dsc.end(), 0.0) / static_cast<double>(dsc.size());
  t.rows.push_back({std::to_string(cases.size()), format_number(mean), format_number(dsc30(dsc)),
                    hd_n ? format_number(hd_sum / static_cast<double>(hd_n)) : "nan"});
  return t;
}

}  // namespace c2freg
