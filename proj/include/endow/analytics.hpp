#pragma once

// Score-vs-WER curves with 95% margins of error, and the summary statistics
// computed from them: noise-toleration point, area under the curve, and
// cleaning-effectiveness score.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "endow/error.hpp"

namespace endow::analytics {

inline constexpr double kZ95 = 1.96;

struct CurvePoint {
  double wer = 0.0;
  double score = 0.0;
  double moe = 0.0;
  std::size_t n = 0;
  std::vector<std::string> labels;  // variant keys pooled into this point

  double upper() const { return score + moe; }
  double lower() const { return score - moe; }
};

struct Curve {
  std::string label;
  std::vector<CurvePoint> points;  // wer ascending, points[0] is the reference
  std::vector<std::string> warnings;
};

struct MeanMoe {
  double mean = 0.0;
  double moe = 0.0;
  std::size_t n = 0;
};

/// Mean and 1.96 * s / sqrt(n) with the sample standard deviation. A single
/// score has no spread estimate; its moe is 0 and a warning is recorded.
inline MeanMoe mean_moe(std::span<const double> scores, std::vector<std::string>* warnings = nullptr,
                        const std::string& what = "") {
  if (scores.empty()) throw Error("mean_moe: no scores" + (what.empty() ? "" : " for " + what));
  MeanMoe m;
  m.n = scores.size();
  for (double s : scores) m.mean += s;
  m.mean /= static_cast<double>(m.n);
  if (m.n == 1) {
    if (warnings) warnings->push_back("single sample" + (what.empty() ? "" : " at " + what) + ": margin of error set to 0");
    return m;
  }
  double ss = 0.0;
  for (double s : scores) ss += (s - m.mean) * (s - m.mean);
  m.moe = kZ95 * std::sqrt(ss / static_cast<double>(m.n - 1)) / std::sqrt(static_cast<double>(m.n));
  return m;
}

struct RawPoint {
  std::string label;
  double wer = 0.0;
  std::vector<double> scores;  // one per instance (or per transcript)
};

/// Sorts noisy points by WER and prepends the reference at WER 0. Points
/// with exactly equal WER (including noisy points at WER 0 and the
/// reference) are merged by pooling their scores.
inline Curve build_curve(std::span<const RawPoint> noisy, std::span<const double> reference_scores,
                         std::string label = "") {
  if (reference_scores.empty()) throw Error("build_curve: empty reference scores");
  if (noisy.empty()) throw Error("build_curve: no noisy points");
  Curve c;
  c.label = std::move(label);
  std::vector<RawPoint> pts;
  pts.push_back({"ref_0", 0.0, std::vector<double>(reference_scores.begin(), reference_scores.end())});
  for (const auto& p : noisy) {
    if (!(p.wer >= 0.0) || !std::isfinite(p.wer)) throw Error("build_curve: invalid WER for " + p.label);
    pts.push_back(p);
  }
  std::stable_sort(pts.begin() + 1, pts.end(), [](const RawPoint& a, const RawPoint& b) { return a.wer < b.wer; });

  std::vector<RawPoint> merged;
  std::vector<std::vector<std::string>> labels;
  for (auto& p : pts) {
    if (!merged.empty() && merged.back().wer == p.wer) {
      merged.back().scores.insert(merged.back().scores.end(), p.scores.begin(), p.scores.end());
      labels.back().push_back(p.label);
    } else {
      labels.push_back({p.label});
      merged.push_back(std::move(p));
    }
  }
  for (std::size_t i = 0; i < merged.size(); ++i) {
    std::string where = c.label.empty() ? "" : c.label + " ";
    where += "wer=" + std::to_string(merged[i].wer);
    const auto m = mean_moe(merged[i].scores, &c.warnings, where);
    c.points.push_back({merged[i].wer, m.mean, m.moe, m.n, labels[i]});
  }
  return c;
}

/// The WER at which the curve's upper bound first falls below the
/// reference point's lower bound, by linear interpolation between the two
/// points straddling it. None when it never does.
inline std::optional<double> ntp(const Curve& curve) {
  if (curve.points.empty()) return std::nullopt;
  const double floor = curve.points[0].lower();
  for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
    const auto& a = curve.points[i];
    const auto& b = curve.points[i + 1];
    if (a.upper() >= floor && b.upper() < floor) {
      const double t = (a.upper() - floor) / (a.upper() - b.upper());
      return a.wer + t * (b.wer - a.wer);
    }
  }
  return std::nullopt;
}

struct AucResult {
  double value = 0.0;
  double moe = 0.0;
};

/// Trapezoidal area under the score polyline; the moe is half the gap
/// between the areas under the upper and lower bound polylines.
inline AucResult auc(const Curve& curve) {
  if (curve.points.size() < 2) throw Error("auc: curve '" + curve.label + "' has fewer than 2 points");
  AucResult r;
  double up = 0.0, lo = 0.0;
  for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
    const auto& a = curve.points[i];
    const auto& b = curve.points[i + 1];
    const double dw = b.wer - a.wer;
    r.value += dw * (a.score + b.score) / 2;
    up += dw * (a.upper() + b.upper()) / 2;
    lo += dw * (a.lower() + b.lower()) / 2;
  }
  r.moe = (up - lo) / 2;
  return r;
}

struct CesLevel {
  double w_noisy = 0.0;    // WER of the non-cleaned variant at this level
  double s_noisy = 0.0;    // its score
  double w_cleaned = 0.0;  // WER after cleaning
  double s_cleaned = 0.0;
};

struct CesInputs {
  double s = 0.0;  // reference score
  std::vector<CesLevel> levels;
  double epsilon = 1e-9;
};

struct CesResult {
  double value = 0.0;
  std::vector<double> per_level;
  std::vector<std::string> warnings;
};

/// e_i = ((s_cleaned - s_noisy) / s) / sqrt(w_noisy - w_cleaned + epsilon),
/// averaged over levels; positive when cleaning helps the score.
inline CesResult ces(const CesInputs& in) {
  if (in.levels.empty()) throw Error("ces: no levels");
  if (in.s == 0.0) throw Error("ces: reference score is 0");
  if (!(in.epsilon > 0)) throw Error("ces: epsilon must be positive");
  CesResult r;
  for (std::size_t i = 0; i < in.levels.size(); ++i) {
    const auto& l = in.levels[i];
    const double ds = (l.s_cleaned - l.s_noisy) / in.s;
    double dw = l.w_noisy - l.w_cleaned;
    if (dw < 0.0) {
      r.warnings.push_back("level " + std::to_string(i) + ": cleaning raised WER by " + std::to_string(-dw) +
                           "; WER decrease clamped to 0");
      dw = 0.0;
    }
    if (dw < 1e-6 && ds != 0.0) {
      r.warnings.push_back("level " + std::to_string(i) + ": score changed with near-zero WER decrease; e unstable");
    }
    const double e = ds / std::sqrt(dw + in.epsilon);
    r.per_level.push_back(e);
    r.value += e;
  }
  r.value /= static_cast<double>(in.levels.size());
  return r;
}

}  // namespace endow::analytics
