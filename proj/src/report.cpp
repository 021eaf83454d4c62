#include "medqa/report.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <sstream>

#include "medqa/csv.hpp"
#include "medqa/errors.hpp"

namespace medqa {

namespace {

constexpr std::array<MetricKind, 4> kKinds = {MetricKind::Accuracy, MetricKind::Precision, MetricKind::Recall,
                                              MetricKind::F1};

constexpr std::array<const char*, 10> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

// Plot geometry in SVG user units.
constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 60, kRight = 520, kTop = 40, kBottom = 370;

std::string real(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.17g", v);
  return buffer;
}

std::string fixed2(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.2f", v);
  return buffer;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (const char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

double parse_real(const std::string& text, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size())
    throw ParseError(ParseError::Kind::BadValue, line, "not a number: '" + text + "'");
  return v;
}

std::size_t parse_count(const std::string& text, std::size_t line) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (text.empty() || end != text.c_str() + text.size() || text[0] == '-')
    throw ParseError(ParseError::Kind::BadValue, line, "not a count: '" + text + "'");
  return static_cast<std::size_t>(v);
}

struct Series {
  std::string variant;
  std::size_t fold;
  std::vector<std::pair<std::size_t, double>> points;  // (epoch, value) sorted by epoch
};

std::vector<Series> collect_series(std::span<const MetricsRow> rows, MetricKind kind) {
  std::vector<Series> series;
  std::map<std::pair<std::string, std::size_t>, std::size_t> index;
  for (const auto& row : rows) {
    const auto key = std::make_pair(row.variant, row.fold);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, series.size()).first;
      series.push_back(Series{row.variant, row.fold, {}});
    }
    series[it->second].points.emplace_back(row.epoch, metric_value(row.metrics, kind));
  }
  for (auto& s : series) std::stable_sort(s.points.begin(), s.points.end(),
                                          [](const auto& a, const auto& b) { return a.first < b.first; });
  // Variants keep their order of first appearance; folds are ascending within a variant.
  std::map<std::string, std::size_t> variant_rank;
  for (const auto& s : series) variant_rank.emplace(s.variant, variant_rank.size());
  std::stable_sort(series.begin(), series.end(), [&](const Series& a, const Series& b) {
    return std::make_pair(variant_rank.at(a.variant), a.fold) < std::make_pair(variant_rank.at(b.variant), b.fold);
  });
  return series;
}

std::string series_label(const Series& s, bool multi_variant) {
  const std::string fold = "fold_" + std::to_string(s.fold);
  return multi_variant ? s.variant + ":" + fold : fold;
}

bool has_multiple_variants(std::span<const MetricsRow> rows) {
  return std::any_of(rows.begin(), rows.end(), [&](const MetricsRow& r) { return r.variant != rows.front().variant; });
}

}  // namespace

MetricsRow to_metrics_row(const std::string& variant, const EpochMetrics& record) {
  return MetricsRow{variant, record.fold + 1, record.epoch, record.train_loss, record.validation, record.wall_time_s};
}

std::string format_metrics_row(const MetricsRow& row) {
  return csv::format_row({row.variant, std::to_string(row.fold), std::to_string(row.epoch), real(row.train_loss),
                          real(row.metrics.accuracy), real(row.metrics.precision), real(row.metrics.recall),
                          real(row.metrics.f1), real(row.wall_time_s)});
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  auto rows = csv::parse(text);
  if (rows.empty() || csv::format_row(rows.front().fields) != kMetricsHeader)
    throw ParseError(ParseError::Kind::MissingHeader, 1, "expected header \"" + std::string(kMetricsHeader) + "\"");
  std::vector<MetricsRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.fields.size() != 9)
      throw ParseError(ParseError::Kind::ColumnCount, r.line, "expected 9 columns, found " + std::to_string(r.fields.size()));
    MetricsRow row;
    row.variant = r.fields[0];
    row.fold = parse_count(r.fields[1], r.line);
    row.epoch = parse_count(r.fields[2], r.line);
    row.train_loss = parse_real(r.fields[3], r.line);
    row.metrics.accuracy = parse_real(r.fields[4], r.line);
    row.metrics.precision = parse_real(r.fields[5], r.line);
    row.metrics.recall = parse_real(r.fields[6], r.line);
    row.metrics.f1 = parse_real(r.fields[7], r.line);
    row.wall_time_s = parse_real(r.fields[8], r.line);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  return parse_metrics_csv(csv::read_file(path));
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw Error("cannot open " + path.string() + " for writing");
  out_ << kMetricsHeader << '\n';
  out_.flush();
}

void MetricsWriter::append(const MetricsRow& row) {
  out_ << format_metrics_row(row) << '\n';
  out_.flush();
  if (!out_) throw Error("failed writing metrics row");
}

std::span<const MetricKind> all_metric_kinds() { return kKinds; }

std::string_view metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::Accuracy: return "accuracy";
    case MetricKind::Precision: return "precision";
    case MetricKind::Recall: return "recall";
    case MetricKind::F1: return "f1";
  }
  return "?";
}

double metric_value(const MetricSet& m, MetricKind kind) {
  switch (kind) {
    case MetricKind::Accuracy: return m.accuracy;
    case MetricKind::Precision: return m.precision;
    case MetricKind::Recall: return m.recall;
    case MetricKind::F1: return m.f1;
  }
  return 0.0;
}

std::string render_metric_svg(std::span<const MetricsRow> rows, MetricKind kind) {
  const auto series = collect_series(rows, kind);
  const bool multi = has_multiple_variants(rows);
  std::size_t max_epoch = 1;
  for (const auto& row : rows) max_epoch = std::max(max_epoch, row.epoch);
  auto x_of = [&](std::size_t epoch) {
    if (max_epoch == 1) return (kLeft + kRight) / 2;
    return kLeft + (kRight - kLeft) * static_cast<double>(epoch - 1) / static_cast<double>(max_epoch - 1);
  };
  auto y_of = [](double v) { return kTop + (kBottom - kTop) * (1.0 - std::clamp(v, 0.0, 1.0)); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::string title(metric_name(kind));
  if (!rows.empty() && !multi) title = rows.front().variant + " " + title;
  svg << "<text x=\"" << fixed2((kLeft + kRight) / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << xml_escape(title) << "</text>\n";
  for (int g = 0; g <= 4; ++g) {
    const double v = g / 4.0;
    const std::string y = fixed2(y_of(v));
    svg << "<line class=\"grid\" x1=\"" << fixed2(kLeft) << "\" y1=\"" << y << "\" x2=\"" << fixed2(kRight)
        << "\" y2=\"" << y << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << fixed2(kLeft - 8) << "\" y=\"" << y << "\" text-anchor=\"end\" font-size=\"11\">"
        << fixed2(v) << "</text>\n";
  }
  for (std::size_t e = 1; e <= max_epoch; ++e)
    svg << "<text x=\"" << fixed2(x_of(e)) << "\" y=\"" << fixed2(kBottom + 16)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << e << "</text>\n";
  svg << "<text x=\"" << fixed2((kLeft + kRight) / 2) << "\" y=\"" << fixed2(kBottom + 40)
      << "\" text-anchor=\"middle\" font-size=\"12\">epoch</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* colour = kPalette[i % kPalette.size()];
    svg << "<polyline class=\"fold\" data-series=\"" << xml_escape(series_label(s, multi))
        << "\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (std::size_t p = 0; p < s.points.size(); ++p)
      svg << (p ? " " : "") << fixed2(x_of(s.points[p].first)) << ',' << fixed2(y_of(s.points[p].second));
    svg << "\"/>\n";
    const double legend_y = kTop + 16.0 * static_cast<double>(i);
    svg << "<text x=\"" << fixed2(kRight + 16) << "\" y=\"" << fixed2(legend_y) << "\" font-size=\"11\" fill=\""
        << colour << "\">" << xml_escape(series_label(s, multi)) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string pivot_metric_csv(std::span<const MetricsRow> rows, MetricKind kind) {
  const auto series = collect_series(rows, kind);
  const bool multi = has_multiple_variants(rows);
  std::size_t max_epoch = 0;
  for (const auto& row : rows) max_epoch = std::max(max_epoch, row.epoch);
  std::vector<std::string> header{"epoch"};
  for (const auto& s : series) header.push_back(series_label(s, multi));
  std::string out = csv::format_row(header) + "\n";
  for (std::size_t e = 1; e <= max_epoch; ++e) {
    std::vector<std::string> line{std::to_string(e)};
    for (const auto& s : series) {
      const auto it = std::find_if(s.points.begin(), s.points.end(), [&](const auto& p) { return p.first == e; });
      line.push_back(it == s.points.end() ? "" : real(it->second));
    }
    out += csv::format_row(line) + "\n";
  }
  return out;
}

std::vector<SummaryRow> summarize_metrics(std::span<const MetricsRow> rows) {
  std::vector<std::string> variants;
  std::map<std::string, std::map<std::size_t, const MetricsRow*>> final_rows;
  for (const auto& row : rows) {
    if (!final_rows.count(row.variant)) variants.push_back(row.variant);
    const MetricsRow*& slot = final_rows[row.variant][row.fold];
    if (!slot || row.epoch >= slot->epoch) slot = &row;
  }
  std::vector<SummaryRow> out;
  for (const auto& variant : variants) {
    std::vector<MetricSet> per_fold;
    double time_s = 0.0;
    for (const auto& [fold, row] : final_rows[variant]) {
      per_fold.push_back(row->metrics);
      time_s += row->wall_time_s;
    }
    out.push_back(summary_row(variant, mean_metrics(per_fold), time_s));
  }
  return out;
}

std::string render_summary_table(std::span<const SummaryRow> rows) {
  std::string out = "variant, accuracy, precision, recall, f1, time_s\n";
  for (const auto& row : rows) out += row.variant + ", " + format_metrics_cells(row) + ", " + fixed2(row.time_s) + "\n";
  return out;
}

}  // namespace medqa
