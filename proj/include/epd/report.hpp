#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "epd/csv.hpp"
#include "epd/error.hpp"
#include "epd/experiments.hpp"

namespace epd::report {

enum class Marker { Circle, Triangle, Star, Dot };

struct Series {
  std::string name;
  Marker marker = Marker::Dot;
  std::string color = "#1f77b4";
  std::vector<std::pair<double, double>> points;
  bool line = false;
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  bool diagonal = false;  // y = x reference
};

namespace detail {

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Round-number tick spacing giving roughly `target` intervals.
inline double tick_step(double span, int target = 5) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10 * mag;
}

inline std::string marker_svg(Marker m, double x, double y, const std::string& color) {
  std::ostringstream os;
  switch (m) {
    case Marker::Circle:
      os << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"3.5\" fill=\"none\" stroke=\"" << color
         << "\"/>";
      break;
    case Marker::Dot:
      os << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"2\" fill=\"" << color << "\"/>";
      break;
    case Marker::Triangle:
      os << "<polygon points=\"" << num(x) << ',' << num(y - 4) << ' ' << num(x - 3.5) << ',' << num(y + 3) << ' '
         << num(x + 3.5) << ',' << num(y + 3) << "\" fill=\"none\" stroke=\"" << color << "\"/>";
      break;
    case Marker::Star: {
      os << "<polygon points=\"";
      for (int k = 0; k < 10; ++k) {
        const double r = k % 2 == 0 ? 4.5 : 1.9;
        const double a = -M_PI / 2 + k * M_PI / 5;
        os << (k ? " " : "") << num(x + r * std::cos(a)) << ',' << num(y + r * std::sin(a));
      }
      os << "\" fill=\"" << color << "\"/>";
      break;
    }
  }
  return os.str();
}

}  // namespace detail

/// Self-contained SVG rendering of a scatter/line plot.
inline std::string render_svg(const Plot& plot, int width = 640, int height = 480) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : plot.series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (plot.diagonal) {
    x0 = y0 = std::min(x0, y0);
    x1 = y1 = std::max(x1, y1);
  }
  if (x1 == x0) x0 -= 1, x1 += 1;
  if (y1 == y0) y0 -= 1, y1 += 1;
  const double px = (x1 - x0) * 0.05, py = (y1 - y0) * 0.05;
  x0 -= px, x1 += px, y0 -= py, y1 += py;

  const double left = 70, right = 20, top = 40, bottom = 55;
  const double pw = width - left - right, ph = height - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << detail::xml_escape(plot.title) << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  const double xs = detail::tick_step(x1 - x0), ys = detail::tick_step(y1 - y0);
  for (double t = std::ceil(x0 / xs) * xs; t <= x1; t += xs) {
    os << "<line x1=\"" << detail::num(sx(t)) << "\" y1=\"" << top + ph << "\" x2=\"" << detail::num(sx(t))
       << "\" y2=\"" << top + ph + 5 << "\" stroke=\"black\"/>"
       << "<text x=\"" << detail::num(sx(t)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
       << detail::num(std::abs(t) < xs * 1e-9 ? 0 : t) << "</text>\n";
  }
  for (double t = std::ceil(y0 / ys) * ys; t <= y1; t += ys) {
    os << "<line x1=\"" << left - 5 << "\" y1=\"" << detail::num(sy(t)) << "\" x2=\"" << left << "\" y2=\""
       << detail::num(sy(t)) << "\" stroke=\"black\"/>"
       << "<text x=\"" << left - 8 << "\" y=\"" << detail::num(sy(t) + 4) << "\" text-anchor=\"end\">"
       << detail::num(std::abs(t) < ys * 1e-9 ? 0 : t) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
     << detail::xml_escape(plot.x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << detail::xml_escape(plot.y_label) << "</text>\n";

  if (plot.diagonal) {
    os << "<line x1=\"" << detail::num(sx(x0)) << "\" y1=\"" << detail::num(sy(x0)) << "\" x2=\""
       << detail::num(sx(x1)) << "\" y2=\"" << detail::num(sy(x1)) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  }
  for (const auto& s : plot.series) {
    if (s.line && s.points.size() > 1) {
      os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" points=\"";
      for (std::size_t i = 0; i < s.points.size(); ++i) {
        os << (i ? " " : "") << detail::num(sx(s.points[i].first)) << ',' << detail::num(sy(s.points[i].second));
      }
      os << "\"/>\n";
    }
    for (const auto& [x, y] : s.points) os << detail::marker_svg(s.marker, sx(x), sy(y), s.color) << '\n';
  }

  double ly = top + 14;
  for (const auto& s : plot.series) {
    os << detail::marker_svg(s.marker, left + 14, ly - 4, s.color) << "<text x=\"" << left + 24 << "\" y=\"" << ly
       << "\">" << detail::xml_escape(s.name) << "</text>\n";
    ly += 16;
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os.flush()) throw IoError("failed writing " + path.string());
}

/// Writes <stem>.svg and <stem>.csv (series,x,y) carrying the plotted data.
inline void write_plot(const std::filesystem::path& dir, const std::string& stem, const Plot& plot,
                       const std::string& x_col = "x", const std::string& y_col = "y") {
  write_text(dir / (stem + ".svg"), render_svg(plot));
  std::ostringstream csv_out;
  csv_out << "series," << x_col << ',' << y_col << '\n';
  for (const auto& s : plot.series) {
    for (const auto& [x, y] : s.points) {
      csv_out << csv::escape(s.name) << ',' << csv::format_double(x) << ',' << csv::format_double(y) << '\n';
    }
  }
  write_text(dir / (stem + ".csv"), csv_out.str());
}

/// Prediction vs truth; train stars, validation circles, test triangles.
inline Plot prediction_plot(const experiments::ExperimentRecord& r) {
  using experiments::SplitName;
  Plot p;
  p.title = nn::to_string(r.cell.model) + " " + r.cell.dataset + (r.cell.ps ? " PS" : " no-PS") +
            " size " + std::to_string(r.cell.size) + " lr " + csv::format_double(r.cell.lr) + " gamma " +
            csv::format_double(r.cell.gamma);
  p.x_label = "true epicentral distance (km)";
  p.y_label = "predicted epicentral distance (km)";
  p.diagonal = true;
  Series train{"train", Marker::Star, "#1f77b4", {}, false};
  Series val{"val", Marker::Circle, "#2ca02c", {}, false};
  Series test{"test", Marker::Triangle, "#d62728", {}, false};
  for (const auto& q : r.predictions) {
    auto& s = q.split == SplitName::Train ? train : q.split == SplitName::Val ? val : test;
    s.points.emplace_back(q.truth_km, q.pred_km);
  }
  p.series = {std::move(train), std::move(val), std::move(test)};
  return p;
}

inline Plot curve_plot(const experiments::ExperimentRecord& r) {
  Plot p;
  p.title = "learning curve " + r.run_id;
  p.x_label = "epoch";
  p.y_label = "L1 loss (km)";
  Series train{"train", Marker::Dot, "#1f77b4", {}, true};
  Series val{"val", Marker::Dot, "#ff7f0e", {}, true};
  for (const auto& e : r.curve) {
    train.points.emplace_back(e.epoch, e.train_l1_km);
    val.points.emplace_back(e.epoch, e.val_l1_km);
  }
  p.series = {std::move(train), std::move(val)};
  return p;
}

/// Epicentral distance against S-P interval.
inline Plot sp_distance_plot(const std::vector<std::pair<double, double>>& pairs) {
  Plot p;
  p.title = "epicentral distance vs S-P interval";
  p.x_label = "S-P interval (s)";
  p.y_label = "epicentral distance (km)";
  Series s{"traces", Marker::Dot, "#1f77b4", pairs, false};
  p.series = {std::move(s)};
  return p;
}

inline std::string summary_csv(const std::vector<experiments::ExperimentRecord>& records) {
  std::ostringstream os;
  os << "model,dataset,ps,size,gamma,lr,test_l1_km,runtime_min\n";
  for (const auto& r : records) {
    if (r.status != experiments::Status::Done) continue;
    os << nn::to_string(r.cell.model) << ',' << csv::escape(r.cell.dataset) << ',' << (r.cell.ps ? "true" : "false")
       << ',' << r.cell.size << ',' << csv::format_double(r.cell.gamma) << ',' << csv::format_double(r.cell.lr) << ','
       << csv::format_double(r.test_l1_km) << ',' << csv::format_double(r.runtime_min) << '\n';
  }
  return os.str();
}

/// Best cell per (PS, model, dataset) with its train/val/test losses.
inline std::string best_runs_table(const std::vector<experiments::ExperimentRecord>& records) {
  using experiments::Axis;
  const auto groups = experiments::summarize(records, {Axis::Ps, Axis::Model, Axis::Dataset});
  std::ostringstream os;
  os << "signal,model,dataset,train_l1_km,val_l1_km,test_l1_km,runtime_min\n";
  for (const auto& g : groups) {
    const auto& r = records[g.best];
    os << (r.cell.ps ? "ps" : "no-ps") << ',' << nn::to_string(r.cell.model) << ',' << csv::escape(r.cell.dataset)
       << ',' << csv::format_double(r.train_l1_km) << ',' << csv::format_double(r.val_l1_km) << ','
       << csv::format_double(r.test_l1_km) << ',' << csv::format_double(r.runtime_min) << '\n';
  }
  return os.str();
}

/// Summary CSVs, per-(model, dataset) tables, and per-run prediction and
/// learning-curve plots. Returns the files written.
inline std::vector<std::filesystem::path> emit_report(const std::vector<experiments::ExperimentRecord>& records,
                                                      const std::filesystem::path& out_dir) {
  if (records.empty()) throw std::invalid_argument("emit_report: no records");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto note = [&](const std::filesystem::path& p) { written.push_back(p); };

  write_text(out_dir / "summary.csv", summary_csv(records));
  note(out_dir / "summary.csv");

  std::vector<std::pair<nn::Arch, std::string>> tables;
  for (const auto& r : records) {
    const std::pair key{r.cell.model, r.cell.dataset};
    if (std::find(tables.begin(), tables.end(), key) == tables.end()) tables.push_back(key);
  }
  std::string text;
  for (const auto& [m, d] : tables) text += experiments::render_table(records, m, d) + "\n";
  write_text(out_dir / "tables.txt", text);
  note(out_dir / "tables.txt");
  if (std::any_of(records.begin(), records.end(), [](const auto& r) { return r.status == experiments::Status::Done; })) {
    write_text(out_dir / "best_runs.csv", best_runs_table(records));
    note(out_dir / "best_runs.csv");
  }

  const auto plots = out_dir / "plots";
  std::filesystem::create_directories(plots, ec);
  if (ec) throw IoError("cannot create " + plots.string() + ": " + ec.message());
  for (const auto& r : records) {
    if (r.status != experiments::Status::Done) continue;
    if (!r.predictions.empty()) {
      write_plot(plots, "scatter_" + r.run_id, prediction_plot(r), "truth_km", "pred_km");
      note(plots / ("scatter_" + r.run_id + ".svg"));
    }
    if (!r.curve.empty()) {
      write_plot(plots, "curve_" + r.run_id, curve_plot(r), "epoch", "l1_km");
      note(plots / ("curve_" + r.run_id + ".svg"));
    }
  }
  return written;
}

}  // namespace epd::report
