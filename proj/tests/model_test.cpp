#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "rda/cot.hpp"
#include "rda/model.hpp"
#include "rda/numeric/gradcheck.hpp"

using namespace rda;
using namespace rda::model;

namespace {

ModelConfig small_config(std::size_t vocab, std::uint64_t seed = 1) {
  ModelConfig c;
  c.width = 32;
  c.n_heads = 4;
  c.vocab_size = vocab;
  c.visual_token_dim = 12;
  c.n_visual_tokens = 4;
  c.max_seq_len = 64;
  c.seed = seed;
  return c;
}

nn::Array random_visual(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  nn::Array a(nn::Shape{c.n_visual_tokens, c.visual_token_dim});
  for (auto& x : a.storage()) x = d(rng);
  return a;
}

tok::TokenStream small_stream() {
  return tok::assemble_stream({{{5, 6, 7}, {8, 9}}, {{10, 11}, {12, 5, 6}}});
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(Init, ClosedFormCount) {
  ModelConfig c;
  c.vocab_size = 141;
  const Model m = init_model(c);
  EXPECT_EQ(m.params.total_count(), closed_form_param_count(c));
  // 9024 + 32768 + 64 + 20608 + 2 * 49600 + 9229
  EXPECT_EQ(m.params.total_count(), 170893u);
  const Model s = init_model(small_config(20));
  EXPECT_EQ(s.params.total_count(), closed_form_param_count(small_config(20)));
}

TEST(Init, DeterministicInSeed) {
  const Model a = init_model(small_config(20, 3)), b = init_model(small_config(20, 3));
  const Model c = init_model(small_config(20, 4));
  bool differs = false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_EQ(a.params[i].value(), b.params[i].value());
    differs |= a.params[i].value() != c.params[i].value();
  }
  EXPECT_TRUE(differs);
}

TEST(Init, InvalidConfigRejected) {
  auto c = small_config(20);
  c.n_heads = 5;
  EXPECT_THROW(init_model(c), ConfigError);
  c = small_config(3);
  EXPECT_THROW(init_model(c), ConfigError);
  c = small_config(20);
  c.max_seq_len = c.n_visual_tokens;
  EXPECT_THROW(init_model(c), ConfigError);
}

TEST(Forward, RowsAreDistributions) {
  const auto c = small_config(20);
  const Model m = init_model(c);
  const auto s = small_stream();
  const auto lp = forward(m, random_visual(c, 1), s.ids).value();
  ASSERT_EQ(lp.rows(), s.size());
  for (std::size_t r = 0; r < lp.rows(); ++r) {
    double z = 0.0;
    for (std::size_t v = 0; v < lp.cols(); ++v) z += std::exp(lp[r * lp.cols() + v]);
    EXPECT_NEAR(z, 1.0, 1e-10);
  }
}

TEST(Forward, Causality) {
  const auto c = small_config(20);
  const Model m = init_model(c);
  const auto vis = random_visual(c, 2);
  const auto s = small_stream();
  const auto base = forward(m, vis, s.ids).value();
  const std::size_t V = base.cols();
  for (std::size_t t = 1; t < s.size(); ++t) {
    auto ids = s.ids;
    ids[t] = (ids[t] + 7) % 20;
    const auto pert = forward(m, vis, ids).value();
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t v = 0; v < V; ++v) ASSERT_NEAR(pert[r * V + v], base[r * V + v], 1e-12) << t << " " << r;
    }
    double diff = 0.0;
    for (std::size_t v = 0; v < V; ++v) diff += std::abs(pert[t * V + v] - base[t * V + v]);
    EXPECT_GT(diff, 0.0);
  }
}

TEST(Forward, EveryTextRowSeesVisualPrefix) {
  const auto c = small_config(20);
  const Model m = init_model(c);
  const auto s = small_stream();
  auto vis = random_visual(c, 3);
  const auto a = forward(m, vis, s.ids).value();
  vis[vis.size() - 1] += 1.0;  // last visual token
  const auto b = forward(m, vis, s.ids).value();
  const std::size_t V = a.cols();
  for (std::size_t r = 0; r < s.size(); ++r) {
    double diff = 0.0;
    for (std::size_t v = 0; v < V; ++v) diff += std::abs(a[r * V + v] - b[r * V + v]);
    EXPECT_GT(diff, 0.0) << r;
  }
}

TEST(Forward, OverlongSequenceRejected) {
  const auto c = small_config(20);
  const Model m = init_model(c);
  std::vector<int> ids(c.max_seq_len - c.n_visual_tokens + 1, 5);
  EXPECT_THROW(forward(m, random_visual(c, 1), ids), SequenceError);
  ids.pop_back();
  EXPECT_NO_THROW(forward(m, random_visual(c, 1), ids));
  EXPECT_THROW(forward(m, nn::Array(nn::Shape{3, 12}), ids), nn::ShapeError);
}

TEST(Score, UniformHeadGivesMinusLogV) {
  auto c = small_config(64);
  Model m = init_model(c);
  for (auto& x : m.params.get("head.w").mutable_value().storage()) x = 0.0;
  for (auto& x : m.params.get("head.b").mutable_value().storage()) x = 0.0;
  for (const auto& s : {small_stream(), tok::assemble_stream({{{40, 41}, {63, 62, 61, 60}}})}) {
    EXPECT_NEAR(score(m, random_visual(c, 5), s).value()[0], -std::log(64.0), 1e-12);
  }
}

TEST(Score, PaddingInvariantAndPure) {
  const auto c = small_config(20);
  const Model m = init_model(c);
  const auto vis = random_visual(c, 6);
  const auto s = small_stream();
  const double a = score(m, vis, s).value()[0];
  EXPECT_EQ(score(m, vis, s).value()[0], a);
  EXPECT_EQ(score(m, vis, tok::padded(s, s.size() + 9)).value()[0], a);
  EXPECT_LT(a, 0.0);
}

TEST(Score, AveragesExactlyTheMaskedPositions) {
  const auto c = small_config(20);
  const Model m = init_model(c);
  const auto vis = random_visual(c, 7);
  const auto s = small_stream();
  const auto lp = forward(m, vis, s.ids).value();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 1; j < s.size(); ++j) {
    if (!s.loss_mask[j]) continue;
    sum += lp[(j - 1) * lp.cols() + static_cast<std::size_t>(s.ids[j])];
    ++n;
  }
  EXPECT_EQ(n, s.supervised_count());
  EXPECT_NEAR(score(m, vis, s).value()[0], sum / static_cast<double>(n), 1e-12);
  tok::TokenStream empty = s;
  std::fill(empty.loss_mask.begin(), empty.loss_mask.end(), false);
  EXPECT_THROW(score(m, vis, empty), std::invalid_argument);
}

TEST(Gradient, MatchesFiniteDifferencesOnWidth32) {
  const auto c = small_config(20, 11);
  Model m = init_model(c);
  const auto vis = random_visual(c, 8);
  const auto s = small_stream();
  auto loss = [&] { return nn::scale(nn::sum(masked_logprobs(m, vis, s)), -1.0); };
  const auto analytic = nn::backward(loss(), m.params);
  std::mt19937_64 rng(4);
  nn::CoordinateSelection sel;
  for (std::size_t p = 0; p < m.params.size(); ++p) {
    std::uniform_int_distribution<std::size_t> pick(0, m.params[p].value().size() - 1);
    std::vector<std::size_t> idx;
    for (int i = 0; i < 6; ++i) idx.push_back(pick(rng));
    sel.indices.push_back(idx);
  }
  const auto numeric = nn::finite_diff_grad([&](const nn::ParamStore&) { return loss().value()[0]; }, m.params,
                                            1e-6, &sel);
  const auto d = nn::compare_gradients(analytic, numeric, m.params, &sel);
  EXPECT_LE(d.max_relative_error, 1e-4) << d.where;
}

TEST(Session, MatchesGraphForward) {
  const auto c = small_config(20);
  const Model m = init_model(c);
  const auto vis = random_visual(c, 9);
  const auto s = small_stream();
  const auto full = forward(m, vis, s.ids).value();
  Session sess(m, vis);
  std::size_t fed = 0;
  for (std::size_t chunk : {3u, 1u, 2u, 1u, 5u}) {
    const auto lp = sess.feed(std::span<const int>(s.ids.data() + fed, chunk));
    fed += chunk;
    for (std::size_t v = 0; v < lp.size(); ++v) EXPECT_NEAR(lp[v], full[(fed - 1) * full.cols() + v], 1e-10);
  }
  EXPECT_EQ(fed, s.size());
  EXPECT_EQ(sess.length(), c.n_visual_tokens + s.size());
}

TEST(Generate, DeterministicInSeed) {
  const auto c = small_config(20);
  const Model m = init_model(c);
  const auto vis = random_visual(c, 10);
  const std::vector<std::vector<int>> prompts = {{5, 6}, {10, 11}};
  GenerateOptions o;
  o.k = 4;
  o.seed = 3;
  o.cap = 12;
  const auto a = generate(m, vis, prompts, o), b = generate(m, vis, prompts, o);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 4u);
  for (const auto& g : a) {
    ASSERT_EQ(g.responses.size(), 2u);
    for (const auto& r : g.responses) EXPECT_LE(r.size(), 12u);
    EXPECT_TRUE(std::find(g.responses[0].begin(), g.responses[0].end(), 10) == g.responses[0].end());
    for (const auto& r : g.responses) EXPECT_TRUE(std::find(r.begin(), r.end(), tok::kEos) == r.end());
  }
  o.seed = 4;
  EXPECT_NE(generate(m, vis, prompts, o), a);
}

TEST(Generate, ColdTemperatureEqualsGreedy) {
  const auto c = small_config(20);
  const Model m = init_model(c);
  const auto vis = random_visual(c, 12);
  const std::vector<std::vector<int>> prompts = {{5, 6}, {10, 11}};
  GenerateOptions greedy;
  greedy.greedy = true;
  greedy.cap = 10;
  GenerateOptions cold = greedy;
  cold.greedy = false;
  cold.temperature = 1e-9;
  cold.k = 3;
  const auto g = generate(m, vis, prompts, greedy).front();
  for (const auto& x : generate(m, vis, prompts, cold)) EXPECT_EQ(x, g);
}

TEST(Generate, TurnEndClosesNonFinalTurns) {
  const auto c = small_config(20);
  const Model m = init_model(c);
  const auto vis = random_visual(c, 13);
  const std::vector<std::vector<int>> prompts = {{5, 6}, {10, 11}, {12}};
  GenerateOptions o;
  o.greedy = true;
  o.cap = 12;
  for (int id = 5; id < 20; ++id) o.turn_end.push_back(id);
  const auto g = generate(m, vis, prompts, o).front();
  for (std::size_t t = 0; t + 1 < prompts.size(); ++t) EXPECT_LE(g.responses[t].size(), 1u);

  // every greedy token is the graph argmax at its position in the assembled stream
  const auto s = candidate_stream(prompts, g);
  const nn::Array lp = forward(m, vis, s.ids).value();
  const std::size_t V = c.vocab_size;
  std::size_t checked = 0;
  for (std::size_t j = 1; j < s.size(); ++j) {
    if (!s.loss_mask[j] || s.ids[j] == tok::kEos) continue;
    const std::vector<double> row(lp.data() + (j - 1) * V, lp.data() + j * V);
    EXPECT_EQ(argmax(row), s.ids[j]) << "position " << j;
    ++checked;
  }
  EXPECT_GT(checked, 0u);
}

TEST(Generate, CandidateStreamMatchesAssembly) {
  Generation g{{{8, 9}, {12}}, {false, false}};
  const std::vector<std::vector<int>> prompts = {{5, 6, 7}, {10, 11}};
  const auto s = candidate_stream(prompts, g);
  EXPECT_EQ(s.ids, (std::vector<int>{tok::kBos, 5, 6, 7, 8, 9, 10, 11, 12, tok::kEos}));
  EXPECT_EQ(s.supervised_count(), 4u);
}

TEST(Generate, StreamsAlwaysFit) {
  auto c = small_config(20);
  c.max_seq_len = 16;  // 12 text positions
  const Model m = init_model(c);
  const std::vector<std::vector<int>> prompts = {{5, 6}, {10, 11, 12}};
  GenerateOptions o;
  o.k = 6;
  o.temperature = 3.0;
  for (const auto& g : generate(m, random_visual(c, 2), prompts, o)) {
    const auto s = candidate_stream(prompts, g);
    EXPECT_LE(s.size() + c.n_visual_tokens, c.max_seq_len);
    EXPECT_NO_THROW(score(m, random_visual(c, 2), s));
  }
  EXPECT_THROW(generate(m, random_visual(c, 2), {{5, 6, 7, 8, 9, 10, 11}, {5, 6, 7, 8}}, o), SequenceError);
}

TEST(Generate, BadArguments) {
  const auto c = small_config(20);
  const Model m = init_model(c);
  GenerateOptions o;
  o.k = 0;
  EXPECT_THROW(generate(m, random_visual(c, 1), {{5}}, o), std::invalid_argument);
  o.k = 1;
  o.temperature = 0.0;
  EXPECT_THROW(generate(m, random_visual(c, 1), {{5}}, o), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto c = small_config(20, 21);
  const Model m = init_model(c);
  const auto path = temp_path("rda_ckpt_test.bin");
  save_checkpoint(m, path);
  const Model r = load_checkpoint(path);
  EXPECT_EQ(r.config, m.config);
  ASSERT_EQ(r.params.size(), m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) EXPECT_EQ(r.params[i].value(), m.params[i].value());
  const auto vis = random_visual(c, 2);
  EXPECT_EQ(forward(r, vis, small_stream().ids).value(), forward(m, vis, small_stream().ids).value());
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(nlohmann::json::parse(header).at("version"), "1");
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsReported) {
  const Model m = init_model(small_config(20, 22));
  const auto path = temp_path("rda_ckpt_bad.bin");
  save_checkpoint(m, path);
  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  is.close();
  auto write = [&](const std::string& b) { std::ofstream(path, std::ios::binary | std::ios::trunc) << b; };

  write(bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  write(bytes + "x");
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  std::string v2 = bytes;
  v2.replace(v2.find("\"version\":\"1\""), 13, "\"version\":\"2\"");
  write(v2);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  std::string shape = bytes;
  shape.replace(shape.find("[20,32]"), 7, "[32,20]");
  write(shape);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  write("{garbage\n");
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  EXPECT_THROW(load_checkpoint(temp_path("rda_no_such_ckpt.bin")), CheckpointError);
  std::filesystem::remove(path);
}
