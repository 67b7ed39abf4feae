#pragma once

// Generalized zero-shot evaluation. A calibration bias is added to the
// scores of seen compositions; sweeping it from "everything unseen" to
// "everything seen" traces the seen/unseen accuracy curve from which the
// best Seen, best Unseen, best harmonic mean and the area under the curve
// are read.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2c/error.hpp"
#include "c2c/fileutil.hpp"

namespace c2c {

/// rows = evaluated samples, cols = feasible compositions.
struct ScoreMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> scores;      // rows * cols, row-major
  std::vector<std::size_t> truth;  // per row, column index
  std::vector<std::uint8_t> seen;  // per column, nonzero = in A_train

  double at(std::size_t r, std::size_t c) const { return scores[r * cols + c]; }

  void validate() const {
    if (scores.size() != rows * cols || truth.size() != rows || seen.size() != cols) {
      throw InvalidInput("ScoreMatrix: inconsistent sizes");
    }
    bool seen_row = false, unseen_row = false;
    for (std::size_t t : truth) {
      if (t >= cols) throw InvalidInput("ScoreMatrix: ground truth outside the feasible set");
      (seen[t] ? seen_row : unseen_row) = true;
    }
    if (!seen_row) throw InvalidInput("ScoreMatrix: no sample with a seen ground truth");
    if (!unseen_row) throw InvalidInput("ScoreMatrix: no sample with an unseen ground truth");
    for (double s : scores) {
      if (!std::isfinite(s)) throw InvalidInput("ScoreMatrix: non-finite score");
    }
  }
};

struct SweepPoint {
  double bias = 0.0;
  double seen = 0.0;
  double unseen = 0.0;
  friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

using SweepCurve = std::vector<SweepPoint>;

/// Per-row facts the sweep needs: the best seen and best unseen column
/// (lowest index on ties) and the bias at which the row flips from the
/// unseen winner to the seen winner.
struct RowFlip {
  double flip = 0.0;  // max unseen score - max seen score
  bool seen_truth = false;
  bool correct_if_seen = false;
  bool correct_if_unseen = false;
};

inline std::vector<RowFlip> row_flips(const ScoreMatrix& m) {
  std::vector<RowFlip> out(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) {
    std::size_t best_s = m.cols, best_u = m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) {
      std::size_t& best = m.seen[c] ? best_s : best_u;
      if (best == m.cols || m.at(r, c) > m.at(r, best)) best = c;
    }
    out[r].flip = m.at(r, best_u) - m.at(r, best_s);
    out[r].seen_truth = m.seen[m.truth[r]] != 0;
    out[r].correct_if_seen = best_s == m.truth[r];
    out[r].correct_if_unseen = best_u == m.truth[r];
  }
  return out;
}

/// Sweep over every distinct flip bias plus two sentinels beyond the score
/// span. Each point describes the predictions on [bias, next bias): a row is
/// predicted from the seen columns iff its flip value is <= bias.
inline SweepCurve bias_sweep(const ScoreMatrix& m) {
  m.validate();
  const std::vector<RowFlip> flips = row_flips(m);
  const auto [lo, hi] = std::minmax_element(m.scores.begin(), m.scores.end());
  const double sentinel = (*hi - *lo) + 1.0;

  std::vector<double> biases;
  biases.reserve(flips.size() + 2);
  biases.push_back(-sentinel);
  for (const auto& f : flips) biases.push_back(f.flip);
  biases.push_back(sentinel);
  std::sort(biases.begin(), biases.end());
  biases.erase(std::unique(biases.begin(), biases.end()), biases.end());

  std::vector<std::size_t> order(flips.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return flips[a].flip < flips[b].flip; });

  double n_seen = 0, n_unseen = 0, unseen_correct = 0;
  for (const auto& f : flips) {
    if (f.seen_truth) {
      n_seen += 1;
    } else {
      n_unseen += 1;
      unseen_correct += f.correct_if_unseen;
    }
  }
  // Start fully unseen-biased and move rows to the seen side in flip order.
  double seen_correct = 0;
  std::size_t next = 0;
  SweepCurve curve;
  curve.reserve(biases.size());
  for (double b : biases) {
    while (next < order.size() && flips[order[next]].flip <= b) {
      const RowFlip& f = flips[order[next++]];
      if (f.seen_truth) {
        seen_correct += f.correct_if_seen;
      } else {
        unseen_correct -= f.correct_if_unseen;
      }
    }
    curve.push_back({b, seen_correct / n_seen, unseen_correct / n_unseen});
  }
  return curve;
}

inline double harmonic_mean(double seen, double unseen) {
  return seen + unseen > 0.0 ? 2.0 * seen * unseen / (seen + unseen) : 0.0;
}

/// Trapezoidal area under the unseen-vs-seen polyline, points in bias order.
inline double curve_auc(const SweepCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].seen - curve[i - 1].seen) * (curve[i].unseen + curve[i - 1].unseen) / 2.0;
  }
  return area;
}

/// Per-sample component scores for Verb/Object accuracy.
struct ComponentScores {
  std::size_t num_verbs = 0;
  std::size_t num_objects = 0;
  std::vector<double> verb_scores;    // rows * num_verbs
  std::vector<double> object_scores;  // rows * num_objects
  std::vector<std::size_t> truth_verb;
  std::vector<std::size_t> truth_object;
  std::vector<std::size_t> column_verb;    // composition column -> verb
  std::vector<std::size_t> column_object;  // composition column -> object
};

struct EvalReport {
  double verb_acc = NAN;
  double object_acc = NAN;
  double best_seen = 0.0;
  double best_unseen = 0.0;
  double best_hm = 0.0;
  double auc = 0.0;
  double best_hm_bias = 0.0;
  double seen_at_best_hm = 0.0;
  double unseen_at_best_hm = 0.0;
  // Verb/Object accuracy read off the top composition at zero bias.
  double comp_verb_acc = NAN;
  double comp_object_acc = NAN;
};

namespace detail {

inline std::size_t argmax_row(const double* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

}  // namespace detail

inline EvalReport metrics(const SweepCurve& curve, const ScoreMatrix& m,
                          const std::optional<ComponentScores>& components = std::nullopt) {
  if (curve.empty()) throw InvalidInput("metrics: empty curve");
  EvalReport r;
  r.best_hm = -1.0;
  for (const SweepPoint& p : curve) {
    r.best_seen = std::max(r.best_seen, p.seen);
    r.best_unseen = std::max(r.best_unseen, p.unseen);
    const double hm = harmonic_mean(p.seen, p.unseen);
    if (hm > r.best_hm) {
      r.best_hm = hm;
      r.best_hm_bias = p.bias;
      r.seen_at_best_hm = p.seen;
      r.unseen_at_best_hm = p.unseen;
    }
  }
  r.auc = curve_auc(curve);
  if (components) {
    const ComponentScores& cs = *components;
    if (cs.verb_scores.size() != m.rows * cs.num_verbs || cs.object_scores.size() != m.rows * cs.num_objects ||
        cs.truth_verb.size() != m.rows || cs.truth_object.size() != m.rows || cs.column_verb.size() != m.cols ||
        cs.column_object.size() != m.cols) {
      throw InvalidInput("metrics: component scores do not match the score matrix");
    }
    double v = 0, o = 0, cv = 0, co = 0;
    for (std::size_t i = 0; i < m.rows; ++i) {
      v += detail::argmax_row(cs.verb_scores.data() + i * cs.num_verbs, cs.num_verbs) == cs.truth_verb[i];
      o += detail::argmax_row(cs.object_scores.data() + i * cs.num_objects, cs.num_objects) == cs.truth_object[i];
      const std::size_t top = detail::argmax_row(m.scores.data() + i * m.cols, m.cols);
      cv += cs.column_verb[top] == cs.truth_verb[i];
      co += cs.column_object[top] == cs.truth_object[i];
    }
    const double n = static_cast<double>(m.rows);
    r.verb_acc = v / n;
    r.object_acc = o / n;
    r.comp_verb_acc = cv / n;
    r.comp_object_acc = co / n;
  }
  return r;
}

inline EvalReport evaluate(const ScoreMatrix& m, const std::optional<ComponentScores>& components = std::nullopt) {
  return metrics(bias_sweep(m), m, components);
}

// ---------------------------------------------------------------------------
// Export

inline nlohmann::json to_json(const EvalReport& r) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return {{"verb_acc", num(r.verb_acc)},
          {"object_acc", num(r.object_acc)},
          {"best_seen", r.best_seen},
          {"best_unseen", r.best_unseen},
          {"best_hm", r.best_hm},
          {"auc", r.auc},
          {"best_hm_bias", r.best_hm_bias},
          {"seen_at_best_hm", r.seen_at_best_hm},
          {"unseen_at_best_hm", r.unseen_at_best_hm},
          {"comp_verb_acc", num(r.comp_verb_acc)},
          {"comp_object_acc", num(r.comp_object_acc)}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  auto num = [&](const char* k) { return j.at(k).is_null() ? NAN : j.at(k).get<double>(); };
  EvalReport r;
  r.verb_acc = num("verb_acc");
  r.object_acc = num("object_acc");
  r.best_seen = num("best_seen");
  r.best_unseen = num("best_unseen");
  r.best_hm = num("best_hm");
  r.auc = num("auc");
  r.best_hm_bias = num("best_hm_bias");
  r.seen_at_best_hm = num("seen_at_best_hm");
  r.unseen_at_best_hm = num("unseen_at_best_hm");
  r.comp_verb_acc = num("comp_verb_acc");
  r.comp_object_acc = num("comp_object_acc");
  return r;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string curve_to_csv(const SweepCurve& curve) {
  std::string out = "bias,seen,unseen\n";
  for (const auto& p : curve) {
    out += format_double(p.bias) + "," + format_double(p.seen) + "," + format_double(p.unseen) + "\n";
  }
  return out;
}

inline SweepCurve curve_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "bias,seen,unseen") throw FormatError("curve CSV: bad header");
  SweepCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    SweepPoint p;
    double* fields[3] = {&p.bias, &p.seen, &p.unseen};
    const char* s = line.data();
    const char* end = s + line.size();
    for (int i = 0; i < 3; ++i) {
      auto [ptr, ec] = std::from_chars(s, end, *fields[i]);
      if (ec != std::errc()) throw FormatError("curve CSV: bad number in line: " + line);
      s = ptr;
      if (i < 2) {
        if (s == end || *s != ',') throw FormatError("curve CSV: expected ',' in line: " + line);
        ++s;
      }
    }
    if (s != end) throw FormatError("curve CSV: trailing characters in line: " + line);
    curve.push_back(p);
  }
  return curve;
}

/// Sidecar path of a curve CSV: same stem, ".json" extension.
inline std::filesystem::path metrics_sidecar_path(std::filesystem::path csv_path) {
  return csv_path.replace_extension(".json");
}

/// Writes the curve as CSV (bias, seen, unseen) and the report as a JSON
/// sidecar next to it.
inline void export_curve(const SweepCurve& curve, const EvalReport& report, const std::filesystem::path& csv_path) {
  write_file_atomic(csv_path, curve_to_csv(curve));
  write_file_atomic(metrics_sidecar_path(csv_path), to_json(report).dump(2) + "\n");
}

}  // namespace c2c
