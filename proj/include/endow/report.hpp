#pragma once

// Score and WER tables on disk, the curves and summary statistics derived
// from them, and the report bundle: curves.csv, ntp_auc.csv, ces.csv,
// summary.json and one SVG chart per metric.
//
// Everything here reads the persisted tables, so `endow report` can rebuild
// a report without rerunning any stage.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "endow/analytics.hpp"
#include "endow/corpus.hpp"
#include "endow/error.hpp"
#include "endow/io.hpp"
#include "endow/tournament.hpp"

namespace endow::report {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

inline std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += csv_field(fields[i]);
  }
  out.push_back('\n');
  return out;
}

inline std::vector<std::vector<std::string>> parse_csv(const std::string& content, const std::string& name) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (quoted) {
      if (c == '"' && i + 1 < content.size() && content[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      rows.push_back(std::move(row));
      row.clear();
      field.clear();
      any = false;
    } else if (c != '\r') {
      field.push_back(c);
      any = true;
    }
  }
  if (quoted) throw FormatError(name + ": unterminated quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Shortest round-trippable rendering is not needed; 10 significant digits
/// keep the tables diffable and deterministic.
inline std::string num(double v) {
  if (v == 0.0) return "0";  // no "-0"
  return fmt::format("{:.10g}", v);
}

// ---------------------------------------------------------------------------
// Tables

struct ScoreRow {
  VariantKey variant = VariantKey::ref();
  std::string unit;  // instance id, or transcript id for set-level metrics
  std::string metric;
  double value = 0.0;
};

struct WerRow {
  VariantKey variant = VariantKey::ref();
  double wer = 0.0;
};

inline std::string scores_csv(std::vector<ScoreRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ScoreRow& a, const ScoreRow& b) {
    if (a.variant != b.variant) return a.variant < b.variant;
    if (a.metric != b.metric) return a.metric < b.metric;
    return a.unit < b.unit;
  });
  std::string out = csv_row({"variant", "unit", "metric", "value"});
  for (const auto& r : rows) out += csv_row({r.variant.to_string(), r.unit, r.metric, num(r.value)});
  return out;
}

inline std::vector<ScoreRow> read_scores(const fs::path& p) {
  const auto rows = parse_csv(io::read_file(p), p.string());
  if (rows.empty() || rows[0] != std::vector<std::string>{"variant", "unit", "metric", "value"})
    throw FormatError(p.string() + ": unexpected header");
  std::vector<ScoreRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 4) throw FormatError(p.string() + ":" + std::to_string(i + 1) + ": expected 4 fields");
    out.push_back({VariantKey::parse(rows[i][0]), rows[i][1], rows[i][2], std::stod(rows[i][3])});
  }
  return out;
}

inline std::string wer_csv(std::vector<WerRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const WerRow& a, const WerRow& b) { return a.variant < b.variant; });
  std::string out = csv_row({"variant", "wer"});
  for (const auto& r : rows) out += csv_row({r.variant.to_string(), num(r.wer)});
  return out;
}

inline std::map<VariantKey, double> read_wer(const fs::path& p) {
  const auto rows = parse_csv(io::read_file(p), p.string());
  if (rows.empty() || rows[0] != std::vector<std::string>{"variant", "wer"})
    throw FormatError(p.string() + ": unexpected header");
  std::map<VariantKey, double> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 2) throw FormatError(p.string() + ":" + std::to_string(i + 1) + ": expected 2 fields");
    out[VariantKey::parse(rows[i][0])] = std::stod(rows[i][1]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curves, NTP/AUC, CES

/// What the report needs to know about the run besides the tables.
struct ReportSpec {
  std::string model;                    // task adapter id
  int k = 5;
  std::vector<std::string> techniques;  // technique of cleaning index j = position + 1
  std::vector<std::string> metrics;
  std::uint64_t seed = 0;
};

struct CurveSummary {
  std::string metric;
  std::string curve;  // "noisy", a technique name, or "noisy+1" (shifted pairwise baseline)
  analytics::Curve data;
  std::optional<double> ntp;
  analytics::AucResult auc;
};

/// Per-unit scores of one (variant, metric), in unit order.
using ScoreIndex = std::map<std::pair<VariantKey, std::string>, std::vector<double>>;

inline ScoreIndex index_scores(const std::vector<ScoreRow>& rows) {
  std::map<std::pair<VariantKey, std::string>, std::map<std::string, double>> by_unit;
  for (const auto& r : rows) by_unit[{r.variant, r.metric}][r.unit] = r.value;
  ScoreIndex out;
  for (auto& [k, units] : by_unit)
    for (auto& [u, v] : units) out[k].push_back(v);
  return out;
}

namespace detail {

inline const std::vector<double>& scores_of(const ScoreIndex& idx, const VariantKey& v, const std::string& metric) {
  auto it = idx.find({v, metric});
  if (it == idx.end() || it->second.empty())
    throw NotFoundError("no " + metric + " scores for variant " + v.to_string());
  return it->second;
}

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline std::vector<double> shifted(std::vector<double> v) {
  for (auto& x : v) x += 1.0;
  return v;
}

}  // namespace detail

/// For pairwise scores the tables hold non-cleaned tournament points under
/// ref_0 / i_0 and cleaned tournament points under i_j. Cleaned curves and
/// CES compare against the non-cleaned line shifted up by one point.
inline std::vector<CurveSummary> build_curves(const ReportSpec& spec, const ScoreIndex& scores,
                                              const std::map<VariantKey, double>& wer) {
  std::vector<CurveSummary> out;
  auto wer_of = [&](const VariantKey& v) {
    auto it = wer.find(v);
    if (it == wer.end()) throw NotFoundError("no WER for variant " + v.to_string());
    return it->second;
  };
  auto make = [&](const std::string& metric, const std::string& name, int j, bool shift_baseline) {
    std::vector<analytics::RawPoint> pts;
    for (int i = 0; i <= spec.k; ++i) {
      const VariantKey v(i, j);
      auto s = detail::scores_of(scores, v, metric);
      if (j == 0 && shift_baseline) s = detail::shifted(std::move(s));
      pts.push_back({v.to_string(), wer_of(v), std::move(s)});
    }
    auto ref = detail::scores_of(scores, VariantKey::ref(), metric);
    if (shift_baseline) ref = detail::shifted(std::move(ref));
    CurveSummary c;
    c.metric = metric;
    c.curve = name;
    c.data = analytics::build_curve(pts, ref, metric + "/" + name);
    c.ntp = analytics::ntp(c.data);
    c.auc = analytics::auc(c.data);
    out.push_back(std::move(c));
  };
  for (const auto& metric : spec.metrics) {
    const bool pairwise = metric == "pairwise";
    make(metric, "noisy", 0, false);
    if (pairwise && !spec.techniques.empty()) make(metric, "noisy+1", 0, true);
    for (std::size_t t = 0; t < spec.techniques.size(); ++t)
      make(metric, spec.techniques[t], static_cast<int>(t) + 1, pairwise);
  }
  return out;
}

struct CesCell {
  std::string technique;
  std::string column;  // "<model>/<metric>"
  analytics::CesResult result;
};

inline std::vector<CesCell> compute_ces(const ReportSpec& spec, const ScoreIndex& scores,
                                        const std::map<VariantKey, double>& wer) {
  std::vector<CesCell> out;
  for (const auto& metric : spec.metrics) {
    const bool pairwise = metric == "pairwise";
    const double base = pairwise ? 1.0 : 0.0;
    for (std::size_t t = 0; t < spec.techniques.size(); ++t) {
      const int j = static_cast<int>(t) + 1;
      analytics::CesInputs in;
      in.s = detail::mean(detail::scores_of(scores, VariantKey::ref(), metric)) + base;
      for (int i = 0; i <= spec.k; ++i) {
        in.levels.push_back({wer.at(VariantKey(i, 0)),
                             detail::mean(detail::scores_of(scores, VariantKey(i, 0), metric)) + base,
                             wer.at(VariantKey(i, j)), detail::mean(detail::scores_of(scores, VariantKey(i, j), metric))});
      }
      CesCell cell{spec.techniques[t], spec.model + "/" + metric, {}};
      try {
        cell.result = analytics::ces(in);
      } catch (const Error& e) {
        cell.result.value = std::nan("");
        cell.result.warnings.push_back(e.what());
      }
      out.push_back(std::move(cell));
    }
  }
  return out;
}

/// Technique rows ordered by descending value in `rank_by` (ties keep input
/// order; NaN last), one column per distinct column name in first-seen order.
inline std::string ces_table_csv(const std::vector<CesCell>& cells, const std::string& rank_by = "") {
  std::vector<std::string> rows, cols;
  std::map<std::pair<std::string, std::string>, double> v;
  for (const auto& c : cells) {
    if (std::find(rows.begin(), rows.end(), c.technique) == rows.end()) rows.push_back(c.technique);
    if (std::find(cols.begin(), cols.end(), c.column) == cols.end()) cols.push_back(c.column);
    v[{c.technique, c.column}] = c.result.value;
  }
  const std::string key = rank_by.empty() && !cols.empty() ? cols.front() : rank_by;
  if (!cols.empty() && std::find(cols.begin(), cols.end(), key) == cols.end())
    throw Error("ces table: no column '" + key + "' to rank by");
  auto value = [&](const std::string& r, const std::string& c) {
    auto it = v.find({r, c});
    return it == v.end() ? std::nan("") : it->second;
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const std::string& a, const std::string& b) {
    const double x = value(a, key), y = value(b, key);
    if (std::isnan(x) || std::isnan(y)) return !std::isnan(x) && std::isnan(y);
    return x > y;
  });
  std::vector<std::string> header{"rank", "technique"};
  header.insert(header.end(), cols.begin(), cols.end());
  std::string out = csv_row(header);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<std::string> line{std::to_string(r + 1), rows[r]};
    for (const auto& c : cols) {
      const double x = value(rows[r], c);
      line.push_back(std::isnan(x) ? "-" : num(x));
    }
    out += csv_row(line);
  }
  return out;
}

inline std::string ntp_label(const std::optional<double>& ntp) { return ntp ? num(*ntp) : "-"; }

// ---------------------------------------------------------------------------
// SVG

struct ChartCurve {
  std::string label;
  const analytics::Curve* curve = nullptr;
  std::optional<double> ntp;
  analytics::AucResult auc;
};

namespace detail {

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

/// Score on the polyline at `wer` (clamped to its span).
inline double score_at(const analytics::Curve& c, double wer) {
  const auto& p = c.points;
  if (wer <= p.front().wer) return p.front().score;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    if (wer <= p[i + 1].wer) {
      const double dw = p[i + 1].wer - p[i].wer;
      const double t = dw > 0 ? (wer - p[i].wer) / dw : 0.0;
      return p[i].score + t * (p[i + 1].score - p[i].score);
    }
  }
  return p.back().score;
}

}  // namespace detail

struct Frame {
  double x0, x1, y0, y1;
  double left = 60, right = 250, top = 40, bottom = 50, width = 760, height = 440;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

/// Path data of a curve's score polyline in `frame`. A pure function of the
/// points, so identical curves give identical strings.
inline std::string polyline_path(const analytics::Curve& c, const Frame& f) {
  std::string d;
  for (std::size_t i = 0; i < c.points.size(); ++i)
    d += fmt::format("{}{:.2f},{:.2f}", i ? " L" : "M", f.px(c.points[i].wer), f.py(c.points[i].score));
  return d;
}

inline std::string band_path(const analytics::Curve& c, const Frame& f) {
  std::string d;
  for (std::size_t i = 0; i < c.points.size(); ++i)
    d += fmt::format("{}{:.2f},{:.2f}", i ? " L" : "M", f.px(c.points[i].wer), f.py(c.points[i].upper()));
  for (std::size_t i = c.points.size(); i-- > 0;)
    d += fmt::format(" L{:.2f},{:.2f}", f.px(c.points[i].wer), f.py(c.points[i].lower()));
  return d + " Z";
}

/// Line chart of score vs WER: shaded 95% bands, the polylines, a dot at
/// each curve's NTP, and a legend with NTP ("-" when none) and AUC.
inline std::string render_chart(const std::string& title, const std::string& y_label,
                                const std::vector<ChartCurve>& curves) {
  double x1 = 0.0, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& cc : curves) {
    for (const auto& p : cc.curve->points) {
      x1 = std::max(x1, p.wer);
      y0 = std::min(y0, p.lower());
      y1 = std::max(y1, p.upper());
    }
  }
  if (curves.empty()) y0 = 0, y1 = 1;
  if (x1 <= 0) x1 = 1;
  if (!(y1 > y0)) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  Frame f{0.0, x1 * 1.05, y0 - pad, y1 + pad};

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" font-family=\"sans-serif\" "
      "font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      f.width, f.height);
  s += fmt::format("<text x=\"{:.1f}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
                   (f.left + f.width - f.right) / 2, detail::xml_escape(title));
  // axes and ticks
  const double ax0 = f.px(f.x0), ax1 = f.px(f.x1), ay0 = f.py(f.y0), ay1 = f.py(f.y1);
  s += fmt::format("<path d=\"M{:.2f},{:.2f} L{:.2f},{:.2f} L{:.2f},{:.2f}\" stroke=\"black\" fill=\"none\"/>\n", ax0,
                   ay1, ax0, ay0, ax1, ay0);
  for (int t = 0; t <= 5; ++t) {
    const double xv = f.x0 + (f.x1 - f.x0) * t / 5, yv = f.y0 + (f.y1 - f.y0) * t / 5;
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:.2f}</text>\n", f.px(xv), ay0 + 15, xv);
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.3g}</text>\n", ax0 - 5, f.py(yv) + 4, yv);
  }
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">WER</text>\n", (ax0 + ax1) / 2,
                   f.height - 12);
  s += fmt::format("<text x=\"14\" y=\"{:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1f})\">{}</text>\n",
                   (ay0 + ay1) / 2, (ay0 + ay1) / 2, detail::xml_escape(y_label));

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& cc = curves[i];
    const char* color = detail::palette(i);
    s += fmt::format("<path class=\"band\" d=\"{}\" fill=\"{}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
                     band_path(*cc.curve, f), color);
    s += fmt::format("<path class=\"curve\" d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                     polyline_path(*cc.curve, f), color);
    for (const auto& p : cc.curve->points)
      s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2\" fill=\"{}\"/>\n", f.px(p.wer), f.py(p.score), color);
    if (cc.ntp)
      s += fmt::format(
          "<circle class=\"ntp\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"5\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
          f.px(*cc.ntp), f.py(detail::score_at(*cc.curve, *cc.ntp)), color);
    const double ly = f.top + 14.0 * static_cast<double>(i);
    const double lx = f.width - f.right + 15;
    s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n", lx, ly - 9, color);
    s += fmt::format("<text class=\"legend\" x=\"{:.1f}\" y=\"{:.1f}\">{} NTP={} AUC={:.3f}±{:.3f}</text>\n",
                     lx + 14, ly, detail::xml_escape(cc.label), ntp_label(cc.ntp), cc.auc.value, cc.auc.moe);
  }
  return s + "</svg>\n";
}

// ---------------------------------------------------------------------------
// Bundle

struct ReportBundle {
  std::vector<CurveSummary> curves;
  std::vector<CesCell> ces;
  json summary;
};

/// Reads <run_dir>/tables and writes <run_dir>/report.
inline ReportBundle emit_report(const ReportSpec& spec, const fs::path& run_dir, json extra_summary = json::object()) {
  const auto scores = index_scores(read_scores(run_dir / "tables" / "scores.csv"));
  const auto wer = read_wer(run_dir / "tables" / "wer.csv");
  ReportBundle b;
  b.curves = build_curves(spec, scores, wer);
  b.ces = compute_ces(spec, scores, wer);
  const fs::path out = run_dir / "report";

  std::string curves_csv = csv_row({"model", "metric", "curve", "point", "variants", "wer", "score", "moe", "n"});
  std::string ntp_csv = csv_row({"model", "metric", "curve", "ntp", "auc", "auc_moe"});
  json warnings = json::array();
  for (const auto& c : b.curves) {
    for (std::size_t i = 0; i < c.data.points.size(); ++i) {
      const auto& p = c.data.points[i];
      std::string labels;
      for (const auto& l : p.labels) labels += (labels.empty() ? "" : " ") + l;
      curves_csv += csv_row({spec.model, c.metric, c.curve, std::to_string(i), labels, num(p.wer), num(p.score),
                             num(p.moe), std::to_string(p.n)});
    }
    ntp_csv += csv_row({spec.model, c.metric, c.curve, ntp_label(c.ntp), num(c.auc.value), num(c.auc.moe)});
    for (const auto& w : c.data.warnings) warnings.push_back(w);
  }
  io::write_file_atomic(out / "curves.csv", curves_csv);
  io::write_file_atomic(out / "ntp_auc.csv", ntp_csv);
  io::write_file_atomic(out / "ces.csv", spec.techniques.empty() ? csv_row({"rank", "technique"}) : ces_table_csv(b.ces));

  for (const auto& metric : spec.metrics) {
    std::vector<ChartCurve> main, cleaned;
    for (const auto& c : b.curves) {
      if (c.metric != metric) continue;
      ChartCurve cc{c.curve, &c.data, c.ntp, c.auc};
      if (metric != "pairwise") main.push_back(cc);
      else if (c.curve == "noisy") main.push_back(cc);
      else cleaned.push_back(cc);
    }
    if (metric == "pairwise") {
      io::write_file_atomic(out / "pairwise_noncleaned.svg",
                            render_chart(spec.model + ": pairwise (non-cleaned)", "points", main));
      if (!cleaned.empty())
        io::write_file_atomic(out / "pairwise_cleaned.svg",
                              render_chart(spec.model + ": pairwise (cleaned, baseline +1)", "points", cleaned));
    } else {
      io::write_file_atomic(out / (metric + ".svg"), render_chart(spec.model + ": " + metric, metric, main));
    }
  }

  json curves = json::array();
  for (const auto& c : b.curves) {
    curves.push_back({{"metric", c.metric},
                      {"curve", c.curve},
                      {"ntp", c.ntp ? json(*c.ntp) : json(nullptr)},
                      {"auc", c.auc.value},
                      {"auc_moe", c.auc.moe}});
  }
  json ces = json::array();
  for (const auto& c : b.ces) {
    ces.push_back({{"technique", c.technique},
                   {"column", c.column},
                   {"ces", std::isnan(c.result.value) ? json(nullptr) : json(c.result.value)},
                   {"per_level", c.result.per_level}});
    for (const auto& w : c.result.warnings) warnings.push_back(c.technique + " " + c.column + ": " + w);
  }
  json wers = json::object();
  for (const auto& [k, w] : wer) wers[k.to_string()] = w;
  b.summary = {{"model", spec.model}, {"seed", spec.seed}, {"k", spec.k},   {"techniques", spec.techniques},
               {"metrics", spec.metrics}, {"set_wer", wers},  {"curves", curves}, {"ces", ces},
               {"warnings", warnings}};
  for (const auto& [key, v] : extra_summary.items()) b.summary[key] = v;
  io::write_file_atomic(out / "summary.json", b.summary.dump(2) + "\n");
  return b;
}

}  // namespace endow::report
