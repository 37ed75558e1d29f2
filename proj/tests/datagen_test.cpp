#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "rda/datagen.hpp"

using namespace rda;
using namespace rda::data;

namespace {

const std::vector<SceneSample>& world() {
  static const auto w = gen_world(7, 256);
  return w;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(World, CountAndDeterminism) {
  ASSERT_EQ(world().size(), 256u);
  EXPECT_EQ(gen_world(7, 256), world());
  EXPECT_NE(gen_world(8, 256), world());
  EXPECT_EQ(gen_world(7, 1).size(), 1u);
  EXPECT_THROW(gen_world(7, 0), std::invalid_argument);
}

TEST(World, GroundTruthIsCollisionFree) {
  for (const auto& s : world()) {
    ASSERT_EQ(s.gt_trajectory.size(), kWaypoints);
    for (auto c : plan::kConventions) {
      for (int h : plan::kHorizons) {
        EXPECT_FALSE(plan::collision_rate(s.gt_trajectory, s.objects, h, c)) << s.sample_id();
      }
    }
  }
}

TEST(World, EnoughScenesChangeDecision) { EXPECT_GE(differing_scene_fraction(world()), 0.2); }

TEST(World, AllScenariosAppear) {
  std::set<Scenario> seen;
  for (const auto& s : world()) seen.insert(s.annotation->scenario);
  EXPECT_EQ(seen.size(), kScenarios.size());
}

TEST(World, RuleTable) {
  for (const auto& s : world()) {
    const auto& a = *s.annotation;
    const auto& d = a.decision;
    switch (a.scenario) {
      case Scenario::stopped_lead: {
        const double dist = s.objects[0].x;
        EXPECT_EQ(d.speed, dist <= kLeadStopRange ? Speed::stop : Speed::decelerate) << s.sample_id();
        EXPECT_NE(s.cot[4].second.find(dist <= kLeadStopRange ? "stop" : "decelerate"), std::string::npos);
        break;
      }
      case Scenario::cruise:
        EXPECT_EQ(d.direction, Direction::forward);
        EXPECT_NE(s.cot[4].second.find("forward"), std::string::npos);
        EXPECT_EQ(d.speed, s.ego_status.velocity < 5.0 ? Speed::accelerate : Speed::keep);
        break;
      case Scenario::signal:
        EXPECT_EQ(d.speed, s.objects[0].cls == ObjectClass::red_light ? Speed::stop : Speed::keep);
        break;
      case Scenario::left_turn:
        EXPECT_EQ(d.direction, Direction::left_turn);
        EXPECT_GT(s.gt_trajectory[5].y, 0.0);
        break;
      case Scenario::right_turn:
        EXPECT_EQ(d.direction, Direction::right_turn);
        EXPECT_LT(s.gt_trajectory[5].y, 0.0);
        break;
      default:
        break;
    }
    if (d.speed == Speed::stop) {
      // comes to rest: the last two waypoints coincide
      EXPECT_NEAR(s.gt_trajectory[5].x, s.gt_trajectory[4].x, 0.3) << s.sample_id();
    }
  }
}

TEST(World, TextEncodesAndMatchesAnnotations) {
  const auto v = cot::default_vocab();
  for (const auto& s : world()) {
    EXPECT_EQ(cot::gt_responses(s), responses_of(s));
    EXPECT_EQ(tok::parse_trajectory(s.cot[5].second), s.gt_trajectory);
    const auto stream = tok::encode_conversation(cot::sample_conversation(s, {}), v);
    EXPECT_LT(stream.size() + 64, 512u);
  }
}

TEST(World, SplitKeepsScenesTogether) {
  const auto train = split(world(), false), val = split(world(), true);
  EXPECT_EQ(train.size() + val.size(), world().size());
  std::set<int> train_ids;
  for (const auto& s : train) train_ids.insert(s.scene_id);
  for (const auto& s : val) EXPECT_FALSE(train_ids.count(s.scene_id));
  const double frac = static_cast<double>(val.size()) / static_cast<double>(world().size());
  EXPECT_GT(frac, 0.1);
  EXPECT_LT(frac, 0.3);
}

TEST(Jsonl, WorldRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "rda_world_test.jsonl").string();
  save_world(path, world());
  EXPECT_EQ(load_world(path), world());
  const std::string first = slurp(path);
  save_world(path, gen_world(7, 256));
  EXPECT_EQ(slurp(path), first);
  std::size_t lines = 0;
  for (char c : first) lines += c == '\n';
  EXPECT_EQ(lines, 256u);
  const auto j = nlohmann::json::parse(first.substr(0, first.find('\n')));
  for (const char* key : {"scene_id", "t", "ego_status", "objects", "cot", "gt_traj"}) EXPECT_TRUE(j.contains(key));
  std::filesystem::remove(path);
}

TEST(Jsonl, BadInputsReportPath) {
  EXPECT_THROW(load_world("/nonexistent/dir/world.jsonl"), IoError);
  const auto path = (std::filesystem::temp_directory_path() / "rda_bad.jsonl").string();
  std::ofstream(path) << "{not json\n";
  try {
    load_world(path);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
  }
  std::filesystem::remove(path);
}

namespace {

std::pair<SceneSample, SceneSample> differing_pair() {
  for (std::size_t i = 0; i < world().size(); ++i) {
    const auto p = partners(world(), i);
    if (!p.empty()) return {world()[i], world()[p[0]]};
  }
  throw std::runtime_error("no differing pair");
}

}  // namespace

TEST(Permute, ThreeDistinctNegatives) {
  const auto [u, v] = differing_pair();
  const auto set = permute_negatives(u, v);
  EXPECT_EQ(set.positive.responses, responses_of(u));
  ASSERT_EQ(set.negatives.size(), 3u);
  for (const auto& n : set.negatives) EXPECT_NE(n.responses, set.positive.responses);
  EXPECT_EQ(set.negatives[0].provenance, Provenance::negative_cot);
  EXPECT_EQ(set.negatives[1].provenance, Provenance::negative_answer);
  EXPECT_EQ(set.negatives[2].provenance, Provenance::negative_both);
  // perturbed CoT keeps u's plan, perturbed answer keeps u's reasoning
  EXPECT_EQ(set.negatives[0].responses[5], responses_of(u)[5]);
  EXPECT_EQ(set.negatives[1].responses[4], responses_of(u)[4]);
  EXPECT_EQ(set.negatives[2].responses, responses_of(v));
}

TEST(Permute, SwapMirrors) {
  const auto [u, v] = differing_pair();
  const auto a = permute_negatives(u, v), b = permute_negatives(v, u);
  EXPECT_EQ(b.positive.responses, responses_of(v));
  EXPECT_EQ(b.negatives[2].responses, a.positive.responses);
  EXPECT_EQ(a.negatives[2].responses, b.positive.responses);
}

TEST(Permute, Preconditions) {
  const auto [u, v] = differing_pair();
  SceneSample other = v;
  other.scene_id += 1000;
  EXPECT_THROW(permute_negatives(u, other), PairError);
  SceneSample same = v;
  same.annotation->decision = u.annotation->decision;
  EXPECT_THROW(permute_negatives(u, same), PairError);
}

TEST(Permute, OracleScorerRanksPositiveFirst) {
  // An oracle that scores exact ground-truth text highest: fraction of stage
  // responses equal to the base sample's.
  for (std::size_t i = 0; i < world().size(); ++i) {
    for (std::size_t j : partners(world(), i)) {
      const auto set = permute_negatives(world()[i], world()[j]);
      const auto truth = responses_of(world()[i]);
      auto score = [&](const DataTuple& t) {
        double s = 0;
        for (std::size_t k = 0; k < truth.size(); ++k) s += t.responses[k] == truth[k];
        return s;
      };
      for (const auto& n : set.negatives) EXPECT_GT(score(set.positive), score(n));
    }
  }
}
