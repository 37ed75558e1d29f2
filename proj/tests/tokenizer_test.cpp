#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "rda/cot.hpp"
#include "rda/tokenizer.hpp"

using namespace rda;
using namespace rda::tok;

namespace {

const Vocab& vocab() {
  static const Vocab v = cot::default_vocab();
  return v;
}

Trajectory random_trajectory(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-40.0, 40.0);
  Trajectory t;
  for (std::size_t i = 0; i < kWaypoints; ++i) t.points.push_back({d(rng), d(rng)});
  return t;
}

}  // namespace

TEST(Vocab, ReservedIdsAreFixed) {
  for (std::size_t i = 0; i < kReserved.size(); ++i) {
    EXPECT_EQ(vocab().id(std::string(kReserved[i])), static_cast<int>(i));
  }
  EXPECT_EQ(vocab().id("<SOT>"), kSot);
  EXPECT_EQ(vocab().id("<EOT>"), kEot);
}

TEST(Vocab, ContainsPromptWords) {
  for (const char* w : {"ego", "vehicle", "notice"}) {
    EXPECT_TRUE(vocab().find(std::string(kSpace) + w).has_value()) << w;
  }
  for (const char* d : {"0", "9", ".", ",", "(", ")", "-"}) EXPECT_TRUE(vocab().find(d).has_value()) << d;
}

TEST(Vocab, DeterministicAndBijective) {
  const Vocab a = cot::default_vocab();
  const Vocab b = cot::default_vocab();
  EXPECT_EQ(a, b);
  EXPECT_LE(a.size(), kMaxVocab);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.id(a.token(static_cast<int>(i))), static_cast<int>(i));
}

TEST(Vocab, RejectsEmptyAndOversizedCorpus) {
  EXPECT_THROW(build_vocab({}), VocabError);
  std::vector<std::string> big;
  std::string word;
  for (int i = 0; i < 1100; ++i) {
    word.clear();
    for (int n = i; n >= 0; n = n / 26 - 1) word += static_cast<char>('a' + n % 26);
    big.push_back(word);
  }
  EXPECT_THROW(build_vocab(big), VocabError);
}

TEST(Vocab, JsonRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "rda_vocab_test.json";
  save_vocab(vocab(), path.string());
  EXPECT_EQ(load_vocab(path.string()), vocab());
  std::filesystem::remove(path);
}

TEST(Vocab, JsonRejectsMovedReservedId) {
  nlohmann::json j = vocab().to_json();
  j["<PAD>"] = 5;
  j[vocab().token(5)] = 0;
  EXPECT_THROW(Vocab::from_json(j), VocabError);
}

TEST(Trajectory, SerializeZeros) {
  Trajectory t{std::vector<Waypoint>(6)};
  EXPECT_EQ(serialize_trajectory(t),
            "<SOT>(0.00,0.00),(0.00,0.00),(0.00,0.00),(0.00,0.00),(0.00,0.00),(0.00,0.00)<EOT>");
}

TEST(Trajectory, NegativeSignKept) {
  Trajectory t{std::vector<Waypoint>(6)};
  t[0] = {-1.25, 3.0};
  EXPECT_TRUE(serialize_trajectory(t).starts_with("<SOT>(-1.25,3.00),"));
}

TEST(Trajectory, WrongCountRejected) {
  EXPECT_THROW(serialize_trajectory(Trajectory{std::vector<Waypoint>(5)}), TrajectoryFormatError);
}

TEST(Trajectory, ParseWellFormed) {
  const auto t = parse_trajectory(serialize_trajectory(Trajectory{std::vector<Waypoint>(6)}));
  ASSERT_EQ(t.size(), 6u);
  for (const auto& p : t.points) EXPECT_EQ(p, Waypoint{});
}

TEST(Trajectory, ParseErrorKinds) {
  auto kind = [](std::string_view s) { return std::get<TrajectoryParseError>(try_parse_trajectory(s)).kind; };
  EXPECT_EQ(kind("<SOT>(0.00,0.00)"), ParseErrorKind::missing_marker);
  EXPECT_EQ(kind("(0.00,0.00)<EOT>"), ParseErrorKind::missing_marker);
  const auto five = std::get<TrajectoryParseError>(
      try_parse_trajectory("<SOT>(1.00,0.00),(2.00,0.00),(3.00,0.00),(4.00,0.00),(5.00,0.00)<EOT>"));
  EXPECT_EQ(five.kind, ParseErrorKind::waypoint_count);
  EXPECT_EQ(five.waypoint_count, 5u);
  EXPECT_EQ(five.message(), "WaypointCount(5)");
  EXPECT_EQ(kind("<SOT>(1.0.0,0.00),(2.00,0.00)<EOT>"), ParseErrorKind::bad_number);
  EXPECT_EQ(kind("<SOT>(1.00 0.00)<EOT>"), ParseErrorKind::bad_number);
  EXPECT_THROW(parse_trajectory("nothing"), TrajectoryParseException);
}

TEST(Trajectory, ParseUsesFirstSpan) {
  Trajectory a{std::vector<Waypoint>(6, Waypoint{1.0, 2.0})};
  Trajectory b{std::vector<Waypoint>(6, Waypoint{3.0, 4.0})};
  EXPECT_EQ(parse_trajectory("x " + serialize_trajectory(a) + " y " + serialize_trajectory(b)), a);
}

TEST(Trajectory, RoundTripAfterQuantization) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const Trajectory t = random_trajectory(rng);
    EXPECT_EQ(parse_trajectory(serialize_trajectory(t)), quantized(t));
  }
}

TEST(Trajectory, SerializeParseFixedPoint) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 100; ++i) {
    const std::string s = serialize_trajectory(random_trajectory(rng));
    EXPECT_EQ(serialize_trajectory(parse_trajectory(s)), s);
  }
}

TEST(Encode, SingleTurnMaskCount) {
  Vocab v = build_vocab({"a b c", "d e"});
  const auto s = encode_conversation({{"a b c", "d e"}}, v);
  EXPECT_EQ(s.supervised_count(), 3u);
  EXPECT_EQ(s.ids.front(), kBos);
  EXPECT_EQ(s.ids.back(), kEos);
  EXPECT_TRUE(s.loss_mask.back());
}

TEST(Encode, UnknownWordNamed) {
  try {
    encode_conversation({{"What are the zebras", "None."}}, vocab());
    FAIL();
  } catch (const EncodeError& e) {
    EXPECT_EQ(e.word(), std::string(kSpace) + "zebras");
  }
}

TEST(Encode, DigitsAreSingleTokens) {
  const auto ids = encode_text("(12.50,-3.00)", vocab());
  EXPECT_EQ(ids.size(), 13u);
}

namespace {

cot::CotOptions all_stages;

SceneSample demo_sample() {
  SceneSample s;
  s.scene_id = 3;
  s.timestamp_index = 1;
  s.objects = {ObjectBox{12.0, 0.0, 4.5, 1.9, 0.0, 0.0, 0.0, ObjectClass::car},
               ObjectBox{8.0, 6.0, 0.6, 0.6, 0.0, 0.0, -1.0, ObjectClass::pedestrian}};
  s.ego_status.velocity = 6.2;
  s.ego_status.history = {Waypoint{-6.0, 0.0}, Waypoint{-4.0, 0.0}, Waypoint{-2.0, 0.1}};
  for (std::size_t i = 0; i < kWaypoints; ++i) s.gt_trajectory.points.push_back({1.5 * (i + 1), 0.0});
  s.annotation = Annotation{Scenario::stopped_lead, Decision{Direction::forward, Speed::stop},
                            {KeyObject{0, ObjectState::stopped_in_lane, ObjectAdvice::stop},
                             KeyObject{1, ObjectState::leaving_pedestrian, ObjectAdvice::keep_going}}};
  const auto prompts = cot::build_prompt_turns();
  const auto responses = cot::gt_responses(s);
  for (std::size_t i = 0; i < cot::kTurns; ++i) s.cot.emplace_back(prompts[i], responses[i]);
  return s;
}

// Span oracle: rescans ids using the per-segment lengths, independent of
// assemble_stream's bookkeeping.
std::vector<TurnSpan> scan_spans(const std::vector<Turn>& turns, const Vocab& v) {
  std::vector<TurnSpan> out;
  std::size_t pos = 1;
  for (std::size_t t = 0; t < turns.size(); ++t) {
    const std::size_t np = encode_text(turns[t].first, v).size();
    const std::size_t nr = encode_text(turns[t].second, v).size() + (t + 1 == turns.size() ? 1 : 0);
    TurnSpan s;
    s.prompt = {t == 0 ? 0 : pos, pos + np};
    s.response = {pos + np, pos + np + nr};
    pos += np + nr;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(Encode, SixTurnSpansMatchOracle) {
  const auto turns = cot::sample_conversation(demo_sample(), all_stages);
  ASSERT_EQ(turns.size(), 6u);
  const auto s = encode_conversation(turns, vocab());
  EXPECT_EQ(s.turn_spans, scan_spans(turns, vocab()));
  for (std::size_t i = 0; i < s.turn_spans.size(); ++i) {
    const auto& sp = s.turn_spans[i];
    EXPECT_LT(sp.prompt.begin, sp.prompt.end);
    EXPECT_EQ(sp.prompt.end, sp.response.begin);
    EXPECT_LT(sp.response.begin, sp.response.end);
    if (i > 0) {
      EXPECT_EQ(s.turn_spans[i - 1].response.end, sp.prompt.begin);
    }
  }
  EXPECT_EQ(s.turn_spans.front().prompt.begin, 0u);
  EXPECT_EQ(s.turn_spans.back().response.end, s.size());
}

TEST(Encode, MaskExactlyOnResponses) {
  const auto turns = cot::sample_conversation(demo_sample(), all_stages);
  const auto s = encode_conversation(turns, vocab());
  std::size_t responses = 0;
  for (const auto& [p, r] : turns) responses += encode_text(r, vocab()).size();
  EXPECT_EQ(s.supervised_count(), responses + 1);
  for (const auto& sp : s.turn_spans) {
    for (std::size_t i = sp.prompt.begin; i < sp.prompt.end; ++i) EXPECT_FALSE(s.loss_mask[i]);
    for (std::size_t i = sp.response.begin; i < sp.response.end; ++i) EXPECT_TRUE(s.loss_mask[i]);
  }
}

TEST(Encode, DecodeRoundTrip) {
  const auto turns = cot::sample_conversation(demo_sample(), all_stages);
  const auto s = encode_conversation(turns, vocab());
  EXPECT_EQ(decode_turns(s, vocab()), turns);
  EXPECT_EQ(decode(s, vocab()), conversation_text(turns));
}

TEST(Encode, PaddingIsUnsupervised) {
  const auto s = encode_conversation({{"None.", "None."}}, vocab());
  const auto p = padded(s, s.size() + 7);
  EXPECT_EQ(p.size(), s.size() + 7);
  EXPECT_EQ(p.supervised_count(), s.supervised_count());
  EXPECT_EQ(decode_turns(p, vocab()), decode_turns(s, vocab()));
}

TEST(Encode, RandomConversationsRoundTrip) {
  // Unspaced letter runs would merge with their neighbour, so draw only
  // spaced pieces and single symbols.
  std::vector<int> pool;
  for (std::size_t i = kReserved.size(); i < vocab().size(); ++i) {
    const std::string& t = vocab().token(static_cast<int>(i));
    if (t.starts_with(kSpace) || !std::isalpha(static_cast<unsigned char>(t[0]))) pool.push_back(static_cast<int>(i));
  }
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Turn> turns;
    for (int t = 0; t < 2; ++t) {
      std::vector<int> p{vocab().id("Ego")}, r{vocab().id("Ego")};
      for (int n = 0; n < 8; ++n) {
        p.push_back(pool[pick(rng)]);
        r.push_back(pool[pick(rng)]);
      }
      turns.emplace_back(decode(p, vocab()), decode(r, vocab()));
    }
    const auto s = encode_conversation(turns, vocab());
    EXPECT_EQ(decode_turns(s, vocab()), turns);
  }
}
