#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include "rda/pipeline.hpp"
#include "rda/judge_http.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using namespace rda;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kQuality = 3 };

// Usage and prerequisite problems.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw data::IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path);
}

config::RunConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  return config::load(path);
}

std::vector<SceneSample> load_world(const config::RunConfig& c, const std::string& override_path) {
  const std::string path = override_path.empty() ? c.paths.world : override_path;
  require_file(path, "world file");
  return data::load_world(path);
}

model::Model load_model(const std::string& path, const tok::Vocab& v) {
  require_file(path, "checkpoint");
  auto m = model::load_checkpoint(path);
  if (m.config.vocab_size != v.size()) {
    throw model::CheckpointError(path + ": vocab_size " + std::to_string(m.config.vocab_size) + " does not match " +
                                 std::to_string(v.size()));
  }
  return m;
}

void log_epoch(std::size_t e, double loss) { std::fprintf(stderr, "epoch %zu mean loss %.6f\n", e, loss); }

struct Common {
  std::string config_path;
  std::string world;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "TOML run config (defaults apply when omitted)");
  sub->add_option("--world", c.world, "world JSONL (default: paths.world)");
}

int gen_data(const Common& opt, const std::string& out_flag) {
  const auto c = load_config(opt.config_path);
  const std::string out = out_flag.empty() ? c.paths.world : out_flag;
  const auto world = data::gen_world(c.world.seed, c.world.n_scenes);
  ensure_parent(out);
  data::save_world(out, world);
  const auto summary = pipeline::world_summary(world).dump(2) + "\n";
  diag::write_text(out + ".summary.json", summary);
  std::cout << summary;
  return kOk;
}

int train(const Common& opt, const std::string& mode, const std::string& out_flag, const std::string& ckpt_flag,
          const std::string& align_flag, const std::string& history_flag) {
  const auto c = load_config(opt.config_path);
  const auto v = cot::default_vocab();
  const bool aligned = mode == "aligned";
  const std::string out = out_flag.empty() ? (aligned ? c.paths.aligned_checkpoint : c.paths.vanilla_checkpoint) : out_flag;
  const std::string history = history_flag.empty() ? out + ".history.csv" : history_flag;

  model::Model m;
  loss::TrainHistory h;
  if (aligned) {
    const std::string ckpt = ckpt_flag.empty() ? c.paths.vanilla_checkpoint : ckpt_flag;
    const std::string align_path = align_flag.empty() ? c.paths.align : align_flag;
    require_file(ckpt, "vanilla checkpoint");
    require_file(align_path, "alignment dataset");
    m = load_model(ckpt, v);
    const auto records = align::load_records(align_path);
    ensure_parent(out);
    h = pipeline::train_aligned(m, records, v, c, log_epoch);
  } else {
    const auto world = load_world(c, opt.world);
    m = pipeline::fresh_model(c, v);
    ensure_parent(out);
    h = pipeline::train_vanilla(m, data::split(world, false), v, c, log_epoch);
  }
  model::save_checkpoint(m, out);
  ensure_parent(history);
  loss::write_history_csv(h, history);
  return kOk;
}

int build_align(const Common& opt, const std::string& ckpt_flag, const std::string& out_flag) {
  const auto c = load_config(opt.config_path);
  const auto v = cot::default_vocab();
  const auto m = load_model(ckpt_flag.empty() ? c.paths.vanilla_checkpoint : ckpt_flag, v);
  const auto world = load_world(c, opt.world);
  const std::string out = out_flag.empty() ? c.paths.align : out_flag;
  ensure_parent(out);
  const auto summary = align::build_alignment_dataset(m, data::split(world, false), v, pipeline::sampling_options(c), out);
  const auto text = align::summary_json(summary).dump(2) + "\n";
  diag::write_text(out + ".summary.json", text);
  std::cout << text;
  return kOk;
}

int eval(const Common& opt, const std::string& ckpt_flag, const std::string& split, const std::string& report,
         bool oracle) {
  const auto c = load_config(opt.config_path);
  const auto world = load_world(c, opt.world);
  const auto samples = pipeline::select_split(world, split);
  pipeline::EvalResult r;
  if (oracle) {
    r = pipeline::evaluate_oracle(samples, c, split);
  } else {
    const auto v = cot::default_vocab();
    const auto m = load_model(ckpt_flag.empty() ? c.paths.aligned_checkpoint : ckpt_flag, v);
    r = pipeline::evaluate_predictions(diag::predict_all(m, samples, v, c.cot), samples, c, split);
  }
  ensure_parent(report);
  diag::write_text(report, pipeline::eval_json(r).dump(2) + "\n");
  diag::write_text(fs::path(report).replace_extension(".csv"), plan::to_csv(r.report));
  std::cout << pipeline::eval_json(r).dump(2) << "\n";
  if (r.failure_rate() > c.eval.max_failure_rate) {
    std::fprintf(stderr, "error: %zu of %zu trajectories failed to parse (limit %.0f%%)\n", r.parse_failures, r.report.n,
                 100.0 * c.eval.max_failure_rate);
    return kQuality;
  }
  return kOk;
}

int diagnose(const Common& opt, const std::string& ckpt_flag, const std::string& out_dir, const std::string& split,
             const std::string& judge_flag) {
  const auto c = load_config(opt.config_path);
  const std::string judge_kind = judge_flag.empty() ? (c.judge.kind == config::JudgeKind::real ? "real" : "mock") : judge_flag;
  std::unique_ptr<diag::JudgeClient> judge;
  if (judge_kind == "real") {
    diag::HttpJudgeOptions o;
    o.endpoint = c.judge.endpoint;
    o.model = c.judge.model;
    o.timeout_s = c.judge.timeout_s;
    o.retries = c.judge.retries;
    try {
      o.api_key = diag::api_key_from_env(c.judge.api_key_env);
      judge = std::make_unique<diag::HttpJudge>(o);
    } catch (const diag::JudgeError& e) {
      throw UsageError(e.what());
    }
  } else {
    judge = std::make_unique<diag::MockJudge>();
  }
  const auto v = cot::default_vocab();
  const auto m = load_model(ckpt_flag.empty() ? c.paths.aligned_checkpoint : ckpt_flag, v);
  const auto world = load_world(c, opt.world);
  const auto samples = pipeline::select_split(world, split);
  const auto preds = diag::predict_all(m, samples, v, c.cot);
  const auto d = pipeline::diagnose(preds, samples, c, *judge, out_dir);
  std::cout << d.summary.dump(2) << "\n";
  if (d.judge.failed_samples) std::fprintf(stderr, "warning: judge failed on %zu samples\n", d.judge.failed_samples);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reasoning-decision alignment toolkit for a synthetic driving world"};
  app.require_subcommand(1);

  Common common;
  std::string out, ckpt, align_path, history, mode = "vanilla", split = "val", report, out_dir, judge;
  bool oracle = false;

  auto* g = app.add_subcommand("gen-data", "generate the synthetic world");
  add_common(g, common);
  g->add_option("--out", out, "world JSONL (default: paths.world)");

  auto* t = app.add_subcommand("train", "train a checkpoint");
  add_common(t, common);
  t->add_option("--mode", mode, "vanilla or aligned")->check(CLI::IsMember({"vanilla", "aligned"}));
  t->add_option("--out-checkpoint", out, "output checkpoint");
  t->add_option("--checkpoint", ckpt, "vanilla checkpoint to continue from (aligned mode)");
  t->add_option("--align", align_path, "alignment dataset JSONL (aligned mode)");
  t->add_option("--history", history, "loss history CSV (default: <out-checkpoint>.history.csv)");

  auto* b = app.add_subcommand("build-align", "sample, rank and pair candidates over the training split");
  add_common(b, common);
  b->add_option("--checkpoint", ckpt, "vanilla checkpoint");
  b->add_option("--out", out, "alignment dataset JSONL");

  auto* e = app.add_subcommand("eval", "open-loop planning evaluation");
  add_common(e, common);
  e->add_option("--checkpoint", ckpt, "checkpoint to evaluate");
  e->add_option("--split", split, "train, val or all")->check(CLI::IsMember({"train", "val", "all"}));
  e->add_option("--report", report, "report JSON; a CSV table is written next to it")->required();
  e->add_flag("--oracle", oracle, "score the ground-truth trajectories instead of a model");

  auto* d = app.add_subcommand("diagnose", "misalignment report and CoT judging");
  add_common(d, common);
  d->add_option("--checkpoint", ckpt, "checkpoint to diagnose");
  d->add_option("--out-dir", out_dir, "output directory")->required();
  d->add_option("--split", split, "train, val or all")->check(CLI::IsMember({"train", "val", "all"}));
  d->add_option("--judge", judge, "mock or real (default: judge.kind)")->check(CLI::IsMember({"mock", "real"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return gen_data(common, out);
    if (*t) return train(common, mode, out, ckpt, align_path, history);
    if (*b) return build_align(common, ckpt, out);
    if (*e) return eval(common, ckpt, split, report, oracle);
    if (*d) return diagnose(common, ckpt, out_dir, split, judge);
  } catch (const config::ConfigFileError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsage;
  } catch (const UsageError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsage;
  } catch (const data::IoError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsage;
  } catch (const model::CheckpointError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsage;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kFailure;
  }
  return kUsage;
}
