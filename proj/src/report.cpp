#include "skd/errors.hpp"
#include "skd/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace skd {

std::string to_string(ReportLayout layout) {
  return layout == ReportLayout::classification_table ? "classification_table" : "segmentation_table";
}

ReportLayout report_layout_from_string(const std::string& text) {
  if (text == "classification_table" || text == "classification") return ReportLayout::classification_table;
  if (text == "segmentation_table" || text == "segmentation") return ReportLayout::segmentation_table;
  throw ConfigError("unknown report layout '" + text + "'; expected classification_table or segmentation_table");
}

namespace {

// Columns shown when there is nothing to report.
const std::vector<int> kDefaultStudents = {10, 14, 18, 20, 26};

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string fraction_label(double fraction) { return format("%g", fraction * 100.0) + "% Data"; }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Full data first, then the partial fractions ascending.
bool block_before(double a, double b) {
  const bool fa = a >= 1.0, fb = b >= 1.0;
  if (fa != fb) return fa;
  return a < b;
}

}  // namespace

Report render_report(const std::vector<ExperimentRecord>& records, ReportLayout layout) {
  const std::string expected_task =
      layout == ReportLayout::classification_table ? "classification" : "segmentation";
  std::string dataset;
  for (const auto& r : records) {
    if (dataset.empty()) dataset = r.dataset;
    if (r.dataset != dataset) {
      throw ConfigError("cannot tabulate mixed datasets: " + dataset + " and " + r.dataset);
    }
    if (r.task != expected_task) {
      throw ConfigError("record " + r.digest.substr(0, 12) + " is a " + r.task + " run; layout " +
                        to_string(layout) + " needs " + expected_task);
    }
  }

  std::set<int> student_set;
  std::set<double, decltype(&block_before)> fractions(&block_before);
  std::map<std::tuple<std::string, double, int>, std::vector<double>> cells;
  for (const auto& r : records) {
    student_set.insert(r.student_variant);
    fractions.insert(r.fraction);
    cells[{r.method, r.fraction, r.student_variant}].push_back(r.metric);
  }
  std::vector<int> students(student_set.begin(), student_set.end());
  if (students.empty()) students = kDefaultStudents;

  const bool percent = layout == ReportLayout::classification_table;
  auto cell_text = [&](const std::string& method, double fraction, int variant, bool csv) -> std::string {
    auto it = cells.find({method, fraction, variant});
    if (it == cells.end()) return "";
    const double m = median(it->second);
    if (csv) return format("%.6f", m);
    return percent ? format("%.1f", 100.0 * m) : format("%.3f", m);
  };

  struct Row {
    std::string label;
    std::string method;
    double fraction;
  };
  std::vector<std::vector<Row>> blocks;
  for (double f : fractions) {
    std::vector<Row> block;
    for (auto m : all_methods()) {
      auto label = method_display_name(m);
      if (f < 1.0) label += " - " + fraction_label(f);
      block.push_back({label, to_string(m), f});
    }
    blocks.push_back(std::move(block));
  }

  // CSV
  std::ostringstream csv;
  csv << "row,method,fraction";
  for (int v : students) csv << ",ResNet" << v;
  csv << '\n';
  for (const auto& block : blocks) {
    for (const auto& row : block) {
      csv << row.label << ',' << row.method << ',' << format("%g", row.fraction);
      for (int v : students) csv << ',' << cell_text(row.method, row.fraction, v, true);
      csv << '\n';
    }
  }

  // Aligned text
  std::size_t label_width = 0;
  for (const auto& block : blocks) {
    for (const auto& row : block) label_width = std::max(label_width, row.label.size());
  }
  const std::size_t col_width = 10;
  std::ostringstream text;
  text << (percent ? "Validation Accuracy" : "Validation IoU") << " for " << (dataset.empty() ? "-" : dataset)
       << '\n';
  text << (percent ? "(top-1 accuracy in %, median over seeds)" : "(mean IoU, median over seeds)") << '\n';
  text << std::string(label_width, ' ');
  for (int v : students) {
    const auto name = "ResNet" + std::to_string(v);
    text << "  " << std::string(col_width - std::min(col_width, name.size()), ' ') << name;
  }
  text << '\n';
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (b > 0) text << '\n';
    for (const auto& row : blocks[b]) {
      text << row.label << std::string(label_width - row.label.size(), ' ');
      for (int v : students) {
        const auto c = cell_text(row.method, row.fraction, v, false);
        text << "  " << std::string(col_width - std::min(col_width, c.size()), ' ') << c;
      }
      text << '\n';
    }
  }
  return {csv.str(), text.str()};
}

}  // namespace skd
