#include <cmath>
#include <cstdio>

#include "lasium/binio.hpp"
#include "lasium/harness.hpp"

namespace lasium::harness {

EpisodeReport summarize(std::vector<double> accuracies, double wall_ms) {
  if (accuracies.empty()) throw ConfigError("cannot summarize an empty report");
  EpisodeReport r;
  r.n = accuracies.size();
  r.wall_ms = wall_ms;
  double sum = 0.0;
  for (double a : accuracies) {
    if (!(a >= 0.0 && a <= 1.0)) throw NumericsError("accuracy outside [0, 1]");
    sum += a;
  }
  r.mean = sum / static_cast<double>(r.n);
  if (r.n > 1) {
    double ss = 0.0;
    for (double a : accuracies) ss += (a - r.mean) * (a - r.mean);
    const double sd = std::sqrt(ss / static_cast<double>(r.n - 1));
    r.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(r.n));
  }
  r.accuracies = std::move(accuracies);
  return r;
}

void write_report_csv(const std::filesystem::path& path, const EpisodeReport& report) {
  std::string text = "task_id,accuracy\n";
  for (std::size_t i = 0; i < report.accuracies.size(); ++i) {
    text += std::to_string(i) + "," + format_double(report.accuracies[i]) + "\n";
  }
  io::write_text(path, text);
}

std::string format_report(const std::string& label, const EpisodeReport& report) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: %.2f%% +- %.2f%% over %zu tasks", label.c_str(), 100.0 * report.mean,
                100.0 * report.ci95, report.n);
  return buf;
}

int exit_code_for(const Error& e) noexcept {
  switch (e.category()) {
    case Error::Category::config: return 2;
    case Error::Category::numerics: return 3;
    case Error::Category::io: return 4;
  }
  return 1;
}

}  // namespace lasium::harness
