#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rda/align.hpp"

namespace rda::diag {

using data::json;
using data::ojson;

// ---- greedy predictions -------------------------------------------------------------

struct Prediction {
  std::string sample_id;
  align::ScoredCandidate candidate;
  double score = 0.0;  // token-average log-probability of the generated turns
};

// Stand-in plan for unparseable output: the ego holds its position.
inline Trajectory fallback_plan() { return Trajectory{std::vector<Waypoint>(kWaypoints)}; }

inline Prediction predict(const model::Model& m, const SceneSample& s, const tok::Vocab& v,
                          const cot::CotOptions& o) {
  model::GenerateOptions g;
  g.greedy = true;
  g.turn_end = align::turn_end_ids(v);
  const auto prompts = align::prompt_ids(s.ego_status, o, v);
  const nn::Array visual = align::visual_of(s);
  const auto gen = model::generate(m, visual, prompts, g).front();
  Prediction p{s.sample_id(), align::score_generation(gen, 0, s.gt_trajectory, v), 0.0};
  p.score = loss::score_value(m, visual, model::candidate_stream(prompts, gen));
  return p;
}

inline std::vector<Prediction> predict_all(const model::Model& m, const std::vector<SceneSample>& samples,
                                           const tok::Vocab& v, const cot::CotOptions& o) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(predict(m, s, v, o));
  return out;
}

inline std::vector<Trajectory> plans(const std::vector<Prediction>& preds) {
  std::vector<Trajectory> out;
  for (const auto& p : preds) out.push_back(p.candidate.trajectory.value_or(fallback_plan()));
  return out;
}

inline std::size_t parse_failures(const std::vector<Prediction>& preds) {
  return static_cast<std::size_t>(
      std::count_if(preds.begin(), preds.end(), [](const auto& p) { return !p.candidate.trajectory; }));
}

// ---- correlation ---------------------------------------------------------------------

inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

// 1-based ranks, ties share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

// ---- misalignment report ---------------------------------------------------------------

struct MisalignmentPoint {
  std::string sample_id;
  double cot_score = 0.0;
  double decision_error = 0.0;
};

struct MisalignmentStats {
  std::size_t n = 0;
  std::size_t failures = 0;
  std::optional<double> pearson;
  std::optional<double> spearman;
};

inline std::vector<MisalignmentPoint> points_of(const std::vector<Prediction>& preds) {
  std::vector<MisalignmentPoint> pts;
  for (const auto& p : preds) {
    if (!p.candidate.trajectory) continue;
    pts.push_back({p.sample_id, p.score, p.candidate.l2_to_gt});
  }
  return pts;
}

// Correlation between the score and the negated decision error.
inline MisalignmentStats misalignment_stats(const std::vector<MisalignmentPoint>& pts, std::size_t failures = 0) {
  std::vector<double> s, e;
  for (const auto& p : pts) {
    s.push_back(p.cot_score);
    e.push_back(-p.decision_error);
  }
  return {pts.size(), failures, pearson(s, e), spearman(s, e)};
}

inline std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline ojson stat_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson("n/a"); }

inline ojson stats_json(const MisalignmentStats& s) {
  return {{"pearson", stat_json(s.pearson)}, {"spearman", stat_json(s.spearman)}, {"n", s.n},
          {"failures", s.failures}};
}

inline std::string points_csv(const std::vector<MisalignmentPoint>& pts) {
  std::string out = "sample_id,cot_score,decision_error_m\n";
  for (const auto& p : pts) out += p.sample_id + "," + fmt(p.cot_score) + "," + fmt(p.decision_error) + "\n";
  return out;
}

// Self-contained scatter plot: score on x, decision error on y.
inline std::string scatter_svg(const std::vector<MisalignmentPoint>& pts) {
  const double W = 480, H = 360, L = 60, R = 20, T = 20, B = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!pts.empty()) {
    x0 = x1 = pts[0].cot_score;
    y0 = 0.0;
    y1 = pts[0].decision_error;
    for (const auto& p : pts) {
      x0 = std::min(x0, p.cot_score);
      x1 = std::max(x1, p.cot_score);
      y1 = std::max(y1, p.decision_error);
    }
  }
  if (x1 - x0 < 1e-9) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 - y0 < 1e-9) y1 = y0 + 1.0;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
     << "\" font-size=\"12\" text-anchor=\"middle\">CoT score (mean token log-prob)</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">decision error (m)</text>\n";
  os << "<text x=\"" << L << "\" y=\"" << H - B + 16 << "\" font-size=\"10\">" << fmt(x0, "%.3f") << "</text>\n";
  os << "<text x=\"" << W - R << "\" y=\"" << H - B + 16 << "\" font-size=\"10\" text-anchor=\"end\">"
     << fmt(x1, "%.3f") << "</text>\n";
  os << "<text x=\"" << L - 4 << "\" y=\"" << T + 4 << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(y1, "%.2f")
     << "</text>\n";
  os << "<text x=\"" << L - 4 << "\" y=\"" << H - B << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(y0, "%.2f")
     << "</text>\n";
  for (const auto& p : pts) {
    os << "<circle cx=\"" << fmt(px(p.cot_score), "%.2f") << "\" cy=\"" << fmt(py(p.decision_error), "%.2f")
       << "\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw data::IoError("cannot write " + path.string());
  os << text;
  if (!os) throw data::IoError("write failed for " + path.string());
}

inline MisalignmentStats misalignment_report(const std::vector<Prediction>& preds,
                                             const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto pts = points_of(preds);
  const auto stats = misalignment_stats(pts, parse_failures(preds));
  write_text(out_dir / "points.csv", points_csv(pts));
  write_text(out_dir / "scatter.svg", scatter_svg(pts));
  write_text(out_dir / "stats.json", stats_json(stats).dump(2) + "\n");
  return stats;
}

// ---- CoT judging ---------------------------------------------------------------------------

class JudgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  // Score in [0, 100] for one reasoning round.
  virtual double score(const std::string& prediction, const std::string& ground_truth) = 0;
};

inline std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

// Token-overlap F1 scaled to 0..100.
inline double overlap_f1(const std::string& prediction, const std::string& ground_truth) {
  const auto p = words(prediction), g = words(ground_truth);
  if (p.empty() && g.empty()) return 100.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, int> count;
  for (const auto& w : g) ++count[w];
  std::size_t common = 0;
  for (const auto& w : p) {
    auto it = count.find(w);
    if (it != count.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

class MockJudge : public JudgeClient {
 public:
  double score(const std::string& prediction, const std::string& ground_truth) override {
    return overlap_f1(prediction, ground_truth);
  }
};

struct JudgeRound {
  std::string sample_id;
  std::size_t round = 0;
  double raw_score = 0.0;  // as returned by the client
  double score = 0.0;      // clamped to [0, 100]
  std::string error;
};

struct JudgeResult {
  double s_cot = 0.0;
  std::vector<JudgeRound> rounds;
  std::size_t clamped = 0;
  std::size_t failed_samples = 0;
};

struct JudgeItem {
  std::string sample_id;
  std::vector<std::string> predictions;  // one per round
  std::vector<std::string> ground_truths;
};

// s_cot = mean over samples of the mean round score. Samples whose rounds
// fail after the client's retries are recorded and left out of the mean.
inline JudgeResult judge_cot(JudgeClient& client, const std::vector<JudgeItem>& items) {
  JudgeResult r;
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& it : items) {
    if (it.predictions.size() != it.ground_truths.size() || it.predictions.empty()) {
      throw std::invalid_argument("judge item " + it.sample_id + ": round count mismatch");
    }
    double sum = 0.0;
    bool failed = false;
    std::vector<JudgeRound> rounds;
    for (std::size_t j = 0; j < it.predictions.size(); ++j) {
      JudgeRound jr{it.sample_id, j, 0.0, 0.0, {}};
      try {
        double s = client.score(it.predictions[j], it.ground_truths[j]);
        if (!std::isfinite(s)) throw JudgeError("non-finite score");
        jr.raw_score = s;
        if (s < 0.0 || s > 100.0) {
          std::fprintf(stderr, "warning: judge score %g for %s round %zu clamped to [0,100]\n", s,
                       it.sample_id.c_str(), j);
          s = std::clamp(s, 0.0, 100.0);
          ++r.clamped;
        }
        jr.score = s;
        sum += s;
      } catch (const std::exception& e) {
        jr.error = e.what();
        failed = true;
      }
      rounds.push_back(std::move(jr));
    }
    r.rounds.insert(r.rounds.end(), rounds.begin(), rounds.end());
    if (failed) {
      ++r.failed_samples;
      continue;
    }
    total += sum / static_cast<double>(it.predictions.size());
    ++counted;
  }
  r.s_cot = counted ? total / static_cast<double>(counted) : 0.0;
  return r;
}

// Reasoning rounds of a conversation: every turn except the final planning turn.
inline std::vector<std::size_t> reasoning_rounds(std::size_t turns) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i + 1 < turns; ++i) out.push_back(i);
  if (out.empty()) out.push_back(0);
  return out;
}

inline std::vector<JudgeItem> judge_items(const std::vector<Prediction>& preds, const std::vector<SceneSample>& samples,
                                          const cot::CotOptions& o) {
  if (preds.size() != samples.size()) throw std::invalid_argument("predictions and samples differ in count");
  std::vector<JudgeItem> out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto gt = cot::sample_conversation(samples[i], o);
    JudgeItem it{samples[i].sample_id(), {}, {}};
    for (std::size_t r : reasoning_rounds(gt.size())) {
      it.predictions.push_back(preds[i].candidate.responses.at(r));
      it.ground_truths.push_back(gt[r].second);
    }
    out.push_back(std::move(it));
  }
  return out;
}

inline std::string judge_jsonl(const JudgeResult& r) {
  std::string out;
  for (const auto& jr : r.rounds) {
    ojson j{{"sample_id", jr.sample_id}, {"round", jr.round}, {"raw_score", jr.raw_score}, {"score", jr.score}};
    if (!jr.error.empty()) j["error"] = jr.error;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace rda::diag
