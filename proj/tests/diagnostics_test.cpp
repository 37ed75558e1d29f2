#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rda/diagnostics.hpp"

using namespace rda;
using namespace rda::diag;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("rda_diag_" + name);
  std::filesystem::remove_all(p);
  return p;
}

Prediction pred(const std::string& id, double score, std::optional<double> l2) {
  Prediction p;
  p.sample_id = id;
  p.score = score;
  if (l2) {
    p.candidate.trajectory = Trajectory{std::vector<Waypoint>(kWaypoints)};
    p.candidate.l2_to_gt = *l2;
  } else {
    p.candidate.parse_error = "MissingMarker: no <SOT>";
  }
  return p;
}

// Returns scripted scores in call order.
class ScriptedJudge : public JudgeClient {
 public:
  explicit ScriptedJudge(std::vector<double> s) : scores_(std::move(s)) {}
  double score(const std::string&, const std::string&) override {
    if (next_ >= scores_.size()) throw JudgeError("script exhausted");
    return scores_[next_++];
  }

 private:
  std::vector<double> scores_;
  std::size_t next_ = 0;
};

class FailingJudge : public JudgeClient {
 public:
  double score(const std::string& p, const std::string&) override {
    if (p == "boom") throw JudgeError("HTTP 503");
    return 50.0;
  }
};

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Correlation, PerfectlyAlignedScoresGiveOne) {
  std::vector<MisalignmentPoint> pts;
  for (double e : {0.3, 2.5, 1.1, 0.9, 4.0, 0.0}) pts.push_back({"s", -e, e});
  const auto st = misalignment_stats(pts);
  ASSERT_TRUE(st.spearman && st.pearson);
  EXPECT_NEAR(*st.spearman, 1.0, 1e-12);
  EXPECT_NEAR(*st.pearson, 1.0, 1e-12);
  EXPECT_EQ(st.n, pts.size());
}

TEST(Correlation, MonotoneButNonlinearMapKeepsSpearman) {
  std::vector<MisalignmentPoint> pts;
  for (double e : {0.5, 1.0, 2.0, 4.0, 8.0}) pts.push_back({"s", -std::exp(e), e});
  const auto st = misalignment_stats(pts);
  EXPECT_NEAR(*st.spearman, 1.0, 1e-12);
  EXPECT_LT(*st.pearson, 1.0);
}

TEST(Correlation, ConstantScoresAreNotAvailable) {
  std::vector<MisalignmentPoint> pts;
  for (double e : {0.3, 2.5, 1.1}) pts.push_back({"s", -1.0, e});
  const auto st = misalignment_stats(pts);
  EXPECT_FALSE(st.pearson.has_value());
  EXPECT_FALSE(st.spearman.has_value());
  const auto j = stats_json(st);
  EXPECT_EQ(j.at("pearson"), "n/a");
  EXPECT_EQ(j.at("spearman"), "n/a");
  EXPECT_FALSE(misalignment_stats({}).spearman.has_value());
  EXPECT_FALSE(misalignment_stats({{"a", 1.0, 1.0}}).pearson.has_value());
}

TEST(Correlation, MatchesHandComputedValues) {
  // x = 1..4, y = 1,3,2,4: pearson 0.8, ranks identical to values
  const std::vector<double> x = {1, 2, 3, 4}, y = {1, 3, 2, 4};
  EXPECT_NEAR(*pearson(x, y), 0.8, 1e-12);
  EXPECT_NEAR(*spearman(x, y), 0.8, 1e-12);
  EXPECT_EQ(average_ranks({10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
  EXPECT_THROW(pearson({1, 2}, {1}), std::invalid_argument);
}

TEST(Report, FilesAndRowAccounting) {
  const std::vector<Prediction> preds = {pred("a", -0.5, 1.0), pred("b", -0.7, std::nullopt), pred("c", -0.2, 0.4),
                                         pred("d", -1.5, 3.0), pred("e", -0.9, std::nullopt)};
  const auto dir = temp_dir("report");
  const auto st = misalignment_report(preds, dir);
  EXPECT_EQ(st.n, 3u);
  EXPECT_EQ(st.failures, 2u);

  const auto csv = slurp(dir / "points.csv");
  EXPECT_EQ(count_lines(csv), 1 + preds.size() - 2);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sample_id,cot_score,decision_error_m");
  EXPECT_NE(csv.find("\nc,-0.200000,0.400000\n"), std::string::npos);

  const auto stats = data::json::parse(slurp(dir / "stats.json"));
  for (const char* k : {"pearson", "spearman", "n"}) EXPECT_TRUE(stats.contains(k)) << k;
  EXPECT_EQ(stats.at("n"), 3);
  EXPECT_NEAR(stats.at("spearman").get<double>(), 1.0, 1e-12);

  const auto svg = slurp(dir / "scatter.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  std::size_t circles = 0;
  for (auto at = svg.find("<circle"); at != std::string::npos; at = svg.find("<circle", at + 1)) ++circles;
  EXPECT_EQ(circles, 3u);
  EXPECT_EQ(svg.find("href"), std::string::npos);

  const auto again = temp_dir("report2");
  misalignment_report(preds, again);
  for (const char* f : {"points.csv", "scatter.svg", "stats.json"}) EXPECT_EQ(slurp(dir / f), slurp(again / f)) << f;
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(again);
}

TEST(Report, PredictionsAreDeterministic) {
  const auto world = data::gen_world(7, 256);
  const auto v = cot::default_vocab();
  model::ModelConfig c;
  c.vocab_size = v.size();
  c.width = 32;
  const auto m = model::init_model(c);
  const std::vector<SceneSample> samples(world.begin(), world.begin() + 3);
  const auto a = predict_all(m, samples, v, {});
  const auto b = predict_all(m, samples, v, {});
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].candidate, b[i].candidate);
    EXPECT_EQ(a[i].score, b[i].score);
    EXPECT_LT(a[i].score, 0.0);
    EXPECT_EQ(a[i].candidate.responses.size(), cot::kTurns);
  }
  const auto pl = plans(a);
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!a[i].candidate.trajectory) EXPECT_EQ(pl[i], fallback_plan());
}

TEST(Judge, RoundArithmetic) {
  ScriptedJudge j({80, 60});
  const auto r = judge_cot(j, {{"s0", {"x", "y"}, {"x", "y"}}});
  EXPECT_DOUBLE_EQ(r.s_cot, 70.0);
  ASSERT_EQ(r.rounds.size(), 2u);
  EXPECT_EQ(r.rounds[0].raw_score, 80.0);
  EXPECT_EQ(r.rounds[1].round, 1u);
}

TEST(Judge, AllPerfectGivesHundred) {
  ScriptedJudge j(std::vector<double>(6, 100.0));
  const auto r = judge_cot(j, {{"a", {"1", "2"}, {"1", "2"}}, {"b", {"1", "2", "3", "4"}, {"1", "2", "3", "4"}}});
  EXPECT_DOUBLE_EQ(r.s_cot, 100.0);
}

TEST(Judge, SampleMeansAreAveraged) {
  // sample a: mean(100, 50) = 75; sample b: mean(10) = 10 → 42.5
  ScriptedJudge j({100, 50, 10});
  EXPECT_DOUBLE_EQ(judge_cot(j, {{"a", {"p", "q"}, {"p", "q"}}, {"b", {"r"}, {"r"}}}).s_cot, 42.5);
}

TEST(Judge, MockIdenticalIsHundredAndOverlapIsF1) {
  MockJudge j;
  EXPECT_DOUBLE_EQ(j.score("the ego vehicle should stop.", "the ego vehicle should stop."), 100.0);
  EXPECT_NEAR(overlap_f1("a b c", "a b d"), 100.0 * 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(overlap_f1("a a", "a b c d"), 100.0 * 2 * 0.5 * 0.25 / 0.75, 1e-12);
  EXPECT_EQ(overlap_f1("x", "y"), 0.0);
  EXPECT_EQ(overlap_f1("", "y"), 0.0);
}

TEST(Judge, OutOfRangeScoresAreClamped) {
  ScriptedJudge j({130, -5});
  const auto r = judge_cot(j, {{"s", {"p", "q"}, {"p", "q"}}});
  EXPECT_EQ(r.clamped, 2u);
  EXPECT_DOUBLE_EQ(r.s_cot, 50.0);
  EXPECT_EQ(r.rounds[0].raw_score, 130.0);
  EXPECT_EQ(r.rounds[0].score, 100.0);
  EXPECT_EQ(r.rounds[1].score, 0.0);
}

TEST(Judge, FailuresAreRecordedPerSample) {
  FailingJudge j;
  const auto r = judge_cot(j, {{"ok", {"fine"}, {"g"}}, {"bad", {"fine", "boom"}, {"g", "g"}}});
  EXPECT_EQ(r.failed_samples, 1u);
  EXPECT_DOUBLE_EQ(r.s_cot, 50.0);
  ASSERT_EQ(r.rounds.size(), 3u);
  EXPECT_EQ(r.rounds[2].error, "HTTP 503");
  const auto lines = judge_jsonl(r);
  EXPECT_EQ(count_lines(lines), 3u);
  EXPECT_NE(lines.find("\"error\":\"HTTP 503\""), std::string::npos);
  EXPECT_THROW(judge_cot(j, {{"x", {"a"}, {}}}), std::invalid_argument);
}

TEST(Judge, OrderInvariant) {
  const std::vector<JudgeItem> items = {{"a", {"a b c", "x"}, {"a b", "x y"}},
                                        {"b", {"stop now"}, {"stop"}},
                                        {"c", {"go", "left turn", "q"}, {"go", "right turn", "q"}}};
  auto reversed = items;
  std::reverse(reversed.begin(), reversed.end());
  for (auto& it : reversed) {
    std::reverse(it.predictions.begin(), it.predictions.end());
    std::reverse(it.ground_truths.begin(), it.ground_truths.end());
  }
  MockJudge j;
  const double a = judge_cot(j, items).s_cot, b = judge_cot(j, reversed).s_cot;
  EXPECT_NEAR(a, b, 1e-12);
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 100.0);
}

TEST(Judge, ItemsCoverReasoningTurnsOnly) {
  const auto world = data::gen_world(7, 256);
  Prediction p = pred(world[0].sample_id(), -1.0, 0.0);
  p.candidate.responses = cot::gt_responses(world[0]);
  const auto items = judge_items({p}, {world[0]}, {});
  ASSERT_EQ(items.size(), 1u);
  EXPECT_EQ(items[0].predictions.size(), cot::kTurns - 1);
  MockJudge j;
  EXPECT_DOUBLE_EQ(judge_cot(j, items).s_cot, 100.0);
}
