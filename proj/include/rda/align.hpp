#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rda/bev_adapter.hpp"
#include "rda/cot.hpp"
#include "rda/datagen.hpp"
#include "rda/losses.hpp"
#include "rda/model.hpp"
#include "rda/planeval.hpp"

namespace rda::align {

using data::json;
using data::ojson;

inline constexpr double kFailedL2 = std::numeric_limits<double>::infinity();

struct ScoredCandidate {
  std::size_t generation_index = 0;
  std::vector<std::vector<int>> tokens;  // response ids per turn
  std::vector<std::string> responses;
  std::optional<Trajectory> trajectory;
  std::string parse_error;
  double l2_to_gt = kFailedL2;
  std::size_t rank = 0;
  friend bool operator==(const ScoredCandidate&, const ScoredCandidate&) = default;
};

inline nn::Array visual_of(const SceneSample& s) { return bev::scene_tokens(s.objects).tokens; }

inline std::vector<std::vector<int>> prompt_ids(const EgoStatus& ego, const cot::CotOptions& o, const tok::Vocab& v) {
  std::vector<std::vector<int>> out;
  for (const auto& p : cot::conversation_prompts(ego, o)) out.push_back(tok::encode_text(p, v));
  return out;
}

// Reasoning responses are single sentences: a bare "." closes a non-final turn.
inline std::vector<int> turn_end_ids(const tok::Vocab& v) {
  const auto id = v.find(".");
  return id ? std::vector<int>{*id} : std::vector<int>{};
}

inline tok::TokenStream gt_stream(const SceneSample& s, const cot::CotOptions& o, const tok::Vocab& v) {
  return tok::encode_conversation(cot::sample_conversation(s, o), v);
}

// Decodes a generation and measures its plan against the ground truth.
inline ScoredCandidate score_generation(const model::Generation& g, std::size_t index, const Trajectory& gt,
                                        const tok::Vocab& v) {
  ScoredCandidate c;
  c.generation_index = index;
  c.tokens = g.responses;
  for (const auto& r : g.responses) c.responses.push_back(tok::decode(r, v));
  const auto parsed = tok::try_parse_trajectory(c.responses.back());
  if (const auto* t = std::get_if<Trajectory>(&parsed)) {
    c.trajectory = *t;
    c.l2_to_gt = plan::average_l2(*t, gt);
  } else {
    c.parse_error = std::get<tok::TrajectoryParseError>(parsed).message();
  }
  return c;
}

// Drops repeated token sequences (first kept), then orders by l2 with ties
// broken by generation index. Failures carry +inf and land last.
inline std::vector<ScoredCandidate> rank_candidates(std::vector<ScoredCandidate> cands) {
  std::vector<ScoredCandidate> unique;
  for (auto& c : cands) {
    const bool seen = std::any_of(unique.begin(), unique.end(), [&](const auto& u) { return u.tokens == c.tokens; });
    if (!seen) unique.push_back(std::move(c));
  }
  std::stable_sort(unique.begin(), unique.end(), [](const auto& a, const auto& b) {
    if (a.l2_to_gt != b.l2_to_gt) return a.l2_to_gt < b.l2_to_gt;
    return a.generation_index < b.generation_index;
  });
  for (std::size_t i = 0; i < unique.size(); ++i) unique[i].rank = i;
  return unique;
}

inline bool valid_ranking(const std::vector<ScoredCandidate>& cands) {
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (cands[i].rank != i) return false;
    if (cands[i].trajectory.has_value() == (cands[i].l2_to_gt == kFailedL2)) return false;
    if (i > 0 && cands[i - 1].l2_to_gt > cands[i].l2_to_gt) return false;
  }
  return true;
}

inline std::uint64_t sample_seed(std::uint64_t seed, const SceneSample& s) {
  return data::splitmix64(seed ^ data::splitmix64(static_cast<std::uint64_t>(s.scene_id) * 2 +
                                                   static_cast<std::uint64_t>(s.timestamp_index)));
}

struct SamplingOptions {
  std::size_t k = 4;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  cot::CotOptions cot;
};

inline std::vector<ScoredCandidate> sample_candidates(const model::Model& m, const SceneSample& s,
                                                      const tok::Vocab& v, const SamplingOptions& o) {
  model::GenerateOptions g;
  g.k = o.k;
  g.temperature = o.temperature;
  g.seed = sample_seed(o.seed, s);
  g.turn_end = turn_end_ids(v);
  const auto gens = model::generate(m, visual_of(s), prompt_ids(s.ego_status, o.cot, v), g);
  std::vector<ScoredCandidate> cands;
  for (std::size_t i = 0; i < gens.size(); ++i) cands.push_back(score_generation(gens[i], i, s.gt_trajectory, v));
  return rank_candidates(std::move(cands));
}

// ---- records ------------------------------------------------------------------------

struct AlignmentRecord {
  SceneSample sample;
  std::vector<ScoredCandidate> model_based;
  std::optional<data::DataBasedSet> data_based;
  friend bool operator==(const AlignmentRecord&, const AlignmentRecord&) = default;
};

inline ojson candidate_json(const ScoredCandidate& c) {
  ojson j;
  j["rank"] = c.rank;
  j["generation_index"] = c.generation_index;
  j["provenance"] = std::string(data::to_string(data::Provenance::model_based));
  j["l2"] = c.trajectory ? ojson(c.l2_to_gt) : ojson(nullptr);
  j["trajectory"] = c.trajectory ? data::trajectory_json(*c.trajectory) : ojson(nullptr);
  j["parse_error"] = c.trajectory ? ojson(nullptr) : ojson(c.parse_error);
  j["responses"] = c.responses;
  j["tokens"] = c.tokens;
  return j;
}

inline ScoredCandidate candidate_from(const json& j) {
  ScoredCandidate c;
  c.rank = j.at("rank").get<std::size_t>();
  c.generation_index = j.at("generation_index").get<std::size_t>();
  if (!j.at("trajectory").is_null()) {
    c.trajectory = data::trajectory_from(j.at("trajectory"));
    c.l2_to_gt = j.at("l2").get<double>();
  } else {
    c.parse_error = j.at("parse_error").get<std::string>();
  }
  c.responses = j.at("responses").get<std::vector<std::string>>();
  c.tokens = j.at("tokens").get<std::vector<std::vector<int>>>();
  return c;
}

inline ojson record_json(const AlignmentRecord& r) {
  ojson j = data::sample_json(r.sample);
  j["model_based"] = ojson::array();
  for (const auto& c : r.model_based) j["model_based"].push_back(candidate_json(c));
  if (r.data_based) {
    ojson negs = ojson::array();
    for (const auto& n : r.data_based->negatives) negs.push_back(data::tuple_json(n));
    j["data_based"] = {{"positive", data::tuple_json(r.data_based->positive)}, {"negatives", negs}};
  } else {
    j["data_based"] = nullptr;
  }
  return j;
}

class RecordError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline AlignmentRecord record_from(const json& j) {
  AlignmentRecord r;
  r.sample = data::sample_from(j);
  for (const auto& c : j.at("model_based")) r.model_based.push_back(candidate_from(c));
  if (!valid_ranking(r.model_based)) throw RecordError("record " + r.sample.sample_id() + ": invalid ranking");
  if (!j.at("data_based").is_null()) {
    data::DataBasedSet set;
    set.positive = data::tuple_from(j.at("data_based").at("positive"));
    for (const auto& n : j.at("data_based").at("negatives")) set.negatives.push_back(data::tuple_from(n));
    r.data_based = std::move(set);
  }
  return r;
}

struct AlignSummary {
  std::size_t records = 0;
  std::size_t model_based_sets = 0;  // sets with at least two distinct candidates
  std::size_t candidates = 0;
  std::size_t parse_failures = 0;
  std::size_t data_based_pairs = 0;
};

inline ojson summary_json(const AlignSummary& s) {
  return {{"records", s.records},
          {"model_based_sets", s.model_based_sets},
          {"candidates", s.candidates},
          {"parse_failures", s.parse_failures},
          {"data_based_pairs", s.data_based_pairs}};
}

inline AlignSummary summarize(const std::vector<AlignmentRecord>& records) {
  AlignSummary s;
  for (const auto& r : records) {
    ++s.records;
    s.model_based_sets += r.model_based.size() >= 2;
    s.candidates += r.model_based.size();
    for (const auto& c : r.model_based) s.parse_failures += !c.trajectory;
    s.data_based_pairs += r.data_based.has_value();
  }
  return s;
}

// One record per base sample: ranked samples from the model plus, when the
// scene has a partner timestamp with a different decision, permuted negatives.
inline std::vector<AlignmentRecord> build_alignment_records(const model::Model& m,
                                                            const std::vector<SceneSample>& samples,
                                                            const tok::Vocab& v, const SamplingOptions& o) {
  std::vector<AlignmentRecord> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    AlignmentRecord r;
    r.sample = samples[i];
    r.model_based = sample_candidates(m, samples[i], v, o);
    const auto p = data::partners(samples, i);
    if (!p.empty()) r.data_based = data::permute_negatives(samples[i], samples[p.front()]);
    out.push_back(std::move(r));
  }
  return out;
}

inline void save_records(const std::string& path, const std::vector<AlignmentRecord>& records) {
  std::vector<ojson> lines;
  for (const auto& r : records) lines.push_back(record_json(r));
  data::write_jsonl(path, lines);
}

inline std::vector<AlignmentRecord> load_records(const std::string& path) {
  std::vector<AlignmentRecord> out;
  std::size_t line = 0;
  for (const auto& j : data::read_jsonl(path)) {
    ++line;
    try {
      out.push_back(record_from(j));
    } catch (const std::exception& e) {
      throw data::IoError(path + ":" + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

inline AlignSummary build_alignment_dataset(const model::Model& m, const std::vector<SceneSample>& samples,
                                            const tok::Vocab& v, const SamplingOptions& o,
                                            const std::string& out_path) {
  const auto records = build_alignment_records(m, samples, v, o);
  save_records(out_path, records);
  return summarize(records);
}

// ---- training items ---------------------------------------------------------------

inline loss::AlignedItem vanilla_item(const SceneSample& s, const tok::Vocab& v, const cot::CotOptions& o) {
  loss::AlignedItem it;
  it.sample_id = s.sample_id();
  it.visual = visual_of(s);
  it.vanilla = gt_stream(s, o, v);
  return it;
}

inline tok::TokenStream tuple_stream(const SceneSample& base, const data::DataTuple& t, const tok::Vocab& v,
                                     const cot::CotOptions& o) {
  return tok::encode_conversation(cot::assemble_conversation(base.ego_status, t.responses, o), v);
}

inline loss::AlignedItem aligned_item(const AlignmentRecord& r, const tok::Vocab& v, const cot::CotOptions& o) {
  loss::AlignedItem it = vanilla_item(r.sample, v, o);
  const auto prompts = prompt_ids(r.sample.ego_status, o, v);
  for (const auto& c : r.model_based) {
    if (c.tokens.size() != prompts.size()) throw RecordError("candidate turn count does not match the CoT options");
    it.ranked.push_back(model::candidate_stream(prompts, model::Generation{c.tokens, {}}));
  }
  if (r.data_based) {
    it.positive = tuple_stream(r.sample, r.data_based->positive, v, o);
    for (const auto& n : r.data_based->negatives) it.negatives.push_back(tuple_stream(r.sample, n, v, o));
  }
  return it;
}

}  // namespace rda::align
