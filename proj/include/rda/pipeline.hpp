#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rda/config.hpp"
#include "rda/diagnostics.hpp"

namespace rda::pipeline {

using data::ojson;

inline std::vector<SceneSample> select_split(const std::vector<SceneSample>& world, const std::string& split) {
  if (split == "train") return data::split(world, false);
  if (split == "val") return data::split(world, true);
  if (split == "all") return world;
  throw std::invalid_argument("unknown split '" + split + "' (expected train, val or all)");
}

inline ojson world_summary(const std::vector<SceneSample>& world) {
  std::map<std::string, std::size_t> scenarios;
  std::map<int, int> scenes;
  for (const auto& s : world) {
    ++scenes[s.scene_id];
    if (s.annotation) ++scenarios[std::string(to_string(s.annotation->scenario))];
  }
  ojson j;
  j["samples"] = world.size();
  j["scenes"] = scenes.size();
  j["train"] = data::split(world, false).size();
  j["val"] = data::split(world, true).size();
  j["differing_scene_fraction"] = data::differing_scene_fraction(world);
  j["scenarios"] = ojson::object();
  for (const auto& [k, v] : scenarios) j["scenarios"][k] = v;
  return j;
}

inline model::Model fresh_model(const config::RunConfig& c, const tok::Vocab& v) {
  return model::init_model(c.model_config(v.size()));
}

inline loss::TrainHistory train_vanilla(model::Model& m, const std::vector<SceneSample>& train,
                                        const tok::Vocab& v, const config::RunConfig& c,
                                        const loss::EpochCallback& on_epoch = {}) {
  std::vector<loss::AlignedItem> items;
  for (const auto& s : train) items.push_back(align::vanilla_item(s, v, c.cot));
  return loss::train(m, items, c.schedule(false), on_epoch);
}

inline loss::TrainHistory train_aligned(model::Model& m, const std::vector<align::AlignmentRecord>& records,
                                        const tok::Vocab& v, const config::RunConfig& c,
                                        const loss::EpochCallback& on_epoch = {}) {
  std::vector<loss::AlignedItem> items;
  for (const auto& r : records) items.push_back(align::aligned_item(r, v, c.cot));
  return loss::train(m, items, c.schedule(true), on_epoch);
}

inline align::SamplingOptions sampling_options(const config::RunConfig& c) {
  align::SamplingOptions o;
  o.k = c.align.k;
  o.temperature = c.align.temperature;
  o.seed = c.align.seed;
  o.cot = c.cot;
  return o;
}

struct EvalResult {
  std::string split;
  plan::PlanReport report;
  std::size_t parse_failures = 0;
  double failure_rate() const { return report.n ? static_cast<double>(parse_failures) / static_cast<double>(report.n) : 0.0; }
};

inline EvalResult evaluate_predictions(const std::vector<diag::Prediction>& preds, const std::vector<SceneSample>& samples,
                                       const config::RunConfig& c, const std::string& split) {
  return {split, plan::evaluate(diag::plans(preds), samples, c.eval_options()), diag::parse_failures(preds)};
}

inline EvalResult evaluate_oracle(const std::vector<SceneSample>& samples, const config::RunConfig& c,
                                  const std::string& split) {
  std::vector<Trajectory> gt;
  for (const auto& s : samples) gt.push_back(s.gt_trajectory);
  return {split, plan::evaluate(gt, samples, c.eval_options()), 0};
}

inline ojson eval_json(const EvalResult& r) {
  ojson j;
  j["split"] = r.split;
  j["parse_failures"] = r.parse_failures;
  j["failure_rate"] = r.failure_rate();
  j["metrics"] = plan::to_json(r.report);
  return j;
}

struct Diagnosis {
  diag::MisalignmentStats stats;
  diag::JudgeResult judge;
  ojson summary;  // contents of stats.json
};

// Writes points.csv, scatter.svg, stats.json and judge.jsonl into out_dir.
inline Diagnosis diagnose(const std::vector<diag::Prediction>& preds, const std::vector<SceneSample>& samples,
                          const config::RunConfig& c, diag::JudgeClient& judge, const std::filesystem::path& out_dir) {
  Diagnosis d;
  d.stats = diag::misalignment_report(preds, out_dir);
  d.judge = diag::judge_cot(judge, diag::judge_items(preds, samples, c.cot));
  diag::write_text(out_dir / "judge.jsonl", diag::judge_jsonl(d.judge));
  d.summary = diag::stats_json(d.stats);
  d.summary["s_cot"] = d.judge.s_cot;
  d.summary["judge_failed_samples"] = d.judge.failed_samples;
  diag::write_text(out_dir / "stats.json", d.summary.dump(2) + "\n");
  return d;
}

}  // namespace rda::pipeline
