#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include <toml.hpp>

#include "rda/cot.hpp"
#include "rda/losses.hpp"
#include "rda/model.hpp"
#include "rda/planeval.hpp"

namespace rda::config {

class ConfigFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WorldSection {
  std::uint64_t seed = 7;
  std::size_t n_scenes = 256;
};

struct ModelSection {
  std::size_t n_layers = 2;
  std::size_t width = 64;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 512;
  std::uint64_t seed = 1;
};

struct TrainSection {
  double lr = 1e-3;
  double min_lr = 1e-4;
  std::size_t epochs = 20;          // vanilla stage
  std::size_t aligned_epochs = 3;   // alignment stage, continuing from the vanilla checkpoint
  std::size_t batch_size = 1;
  double weight_decay = 0.01;
  double clip_norm = 0.0;
  std::uint64_t seed = 1;
  double lambda_rank = 1.0;
  double lambda_binary = 1.0;
  bool detach = true;
};

struct AlignSection {
  std::size_t k = 4;
  double temperature = 1.0;
  std::uint64_t seed = 1;
};

struct EvalSection {
  double ego_length = 4.084;
  double ego_width = 1.730;
  bool mask_gt_collisions = false;
  double max_failure_rate = 0.5;
};

enum class JudgeKind { mock, real };

struct JudgeSection {
  JudgeKind kind = JudgeKind::mock;
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-3.5-turbo";
  double timeout_s = 30.0;
  std::size_t retries = 3;
  std::string api_key_env = "RDA_JUDGE_API_KEY";
};

struct PathsSection {
  std::string world = "run/world.jsonl";
  std::string vanilla_checkpoint = "run/vanilla.ckpt";
  std::string align = "run/align.jsonl";
  std::string aligned_checkpoint = "run/aligned.ckpt";
};

struct RunConfig {
  WorldSection world;
  ModelSection model;
  TrainSection train;
  cot::CotOptions cot;
  AlignSection align;
  EvalSection eval;
  JudgeSection judge;
  PathsSection paths;

  model::ModelConfig model_config(std::size_t vocab_size) const {
    model::ModelConfig c;
    c.n_layers = model.n_layers;
    c.width = model.width;
    c.n_heads = model.n_heads;
    c.max_seq_len = model.max_seq_len;
    c.vocab_size = vocab_size;
    c.seed = model.seed;
    return c;
  }

  loss::Schedule schedule(bool aligned) const {
    loss::Schedule s;
    s.epochs = aligned ? train.aligned_epochs : train.epochs;
    s.batch_size = train.batch_size;
    s.lr = train.lr;
    s.min_lr = train.min_lr;
    s.weight_decay = train.weight_decay;
    s.clip_norm = train.clip_norm;
    s.seed = train.seed;
    s.weights = aligned ? loss::LossWeights{train.lambda_rank, train.lambda_binary, train.detach}
                        : loss::LossWeights{0.0, 0.0, train.detach};
    return s;
  }

  plan::EvalOptions eval_options() const {
    plan::EvalOptions o;
    o.ego.length = eval.ego_length;
    o.ego.width = eval.ego_width;
    o.mask_gt_collisions = eval.mask_gt_collisions;
    return o;
  }
};

namespace detail {

// Reads a table, rejecting keys it does not know.
class Reader {
 public:
  Reader(const toml::table& t, std::string prefix) : t_(t), prefix_(std::move(prefix)) {}

  template <class T>
  Reader& num(const char* key, T& out) {
    seen_.insert(key);
    const toml::node* n = t_.get(key);
    if (!n) return *this;
    if constexpr (std::is_floating_point_v<T>) {
      if (auto v = n->value_exact<double>()) {
        out = *v;
      } else if (auto i = n->value_exact<std::int64_t>()) {
        out = static_cast<T>(*i);
      } else {
        fail(key, "a number");
      }
    } else {
      auto i = n->value_exact<std::int64_t>();
      if (!i) fail(key, "an integer");
      if (*i < 0) throw ConfigFileError("config key '" + name(key) + "' must be non-negative");
      out = static_cast<T>(*i);
    }
    return *this;
  }

  Reader& flag(const char* key, bool& out) {
    seen_.insert(key);
    if (const toml::node* n = t_.get(key)) {
      auto b = n->value_exact<bool>();
      if (!b) fail(key, "a boolean");
      out = *b;
    }
    return *this;
  }

  Reader& text(const char* key, std::string& out) {
    seen_.insert(key);
    if (const toml::node* n = t_.get(key)) {
      auto s = n->value_exact<std::string>();
      if (!s) fail(key, "a string");
      out = *s;
    }
    return *this;
  }

  void finish() const {
    for (const auto& [k, v] : t_) {
      if (!seen_.count(std::string(k.str()))) throw ConfigFileError("unknown config key '" + name(k.str()) + "'");
    }
  }

 private:
  std::string name(std::string_view key) const { return prefix_.empty() ? std::string(key) : prefix_ + "." + std::string(key); }
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigFileError("config key '" + name(key) + "' must be " + what);
  }

  const toml::table& t_;
  std::string prefix_;
  std::set<std::string, std::less<>> seen_;
};

inline const toml::table& section(const toml::table& root, const char* key) {
  static const toml::table empty;
  const toml::node* n = root.get(key);
  if (!n) return empty;
  if (!n->is_table()) throw ConfigFileError("config key '" + std::string(key) + "' must be a table");
  return *n->as_table();
}

}  // namespace detail

inline RunConfig from_table(const toml::table& root) {
  static const std::set<std::string> kSections = {"world", "model", "train", "cot", "align", "eval", "judge", "paths"};
  for (const auto& [k, v] : root) {
    if (!kSections.count(std::string(k.str()))) throw ConfigFileError("unknown config key '" + std::string(k.str()) + "'");
  }
  RunConfig c;
  using detail::Reader;
  using detail::section;
  Reader(section(root, "world"), "world").num("seed", c.world.seed).num("n_scenes", c.world.n_scenes).finish();
  Reader(section(root, "model"), "model")
      .num("n_layers", c.model.n_layers)
      .num("width", c.model.width)
      .num("n_heads", c.model.n_heads)
      .num("max_seq_len", c.model.max_seq_len)
      .num("seed", c.model.seed)
      .finish();
  Reader(section(root, "train"), "train")
      .num("lr", c.train.lr)
      .num("min_lr", c.train.min_lr)
      .num("epochs", c.train.epochs)
      .num("aligned_epochs", c.train.aligned_epochs)
      .num("batch_size", c.train.batch_size)
      .num("weight_decay", c.train.weight_decay)
      .num("clip_norm", c.train.clip_norm)
      .num("seed", c.train.seed)
      .num("lambda_rank", c.train.lambda_rank)
      .num("lambda_binary", c.train.lambda_binary)
      .flag("detach", c.train.detach)
      .finish();
  Reader(section(root, "cot"), "cot")
      .flag("perception", c.cot.perception)
      .flag("prediction", c.cot.prediction)
      .flag("decision", c.cot.decision)
      .flag("multi_turn", c.cot.multi_turn)
      .finish();
  Reader(section(root, "align"), "align")
      .num("k", c.align.k)
      .num("temperature", c.align.temperature)
      .num("seed", c.align.seed)
      .finish();
  Reader(section(root, "eval"), "eval")
      .num("ego_length", c.eval.ego_length)
      .num("ego_width", c.eval.ego_width)
      .flag("mask_gt_collisions", c.eval.mask_gt_collisions)
      .num("max_failure_rate", c.eval.max_failure_rate)
      .finish();
  std::string kind = "mock";
  Reader(section(root, "judge"), "judge")
      .text("kind", kind)
      .text("endpoint", c.judge.endpoint)
      .text("model", c.judge.model)
      .num("timeout_s", c.judge.timeout_s)
      .num("retries", c.judge.retries)
      .text("api_key_env", c.judge.api_key_env)
      .finish();
  if (kind == "mock") {
    c.judge.kind = JudgeKind::mock;
  } else if (kind == "real") {
    c.judge.kind = JudgeKind::real;
  } else {
    throw ConfigFileError("config key 'judge.kind' must be \"mock\" or \"real\", got \"" + kind + "\"");
  }
  Reader(section(root, "paths"), "paths")
      .text("world", c.paths.world)
      .text("vanilla_checkpoint", c.paths.vanilla_checkpoint)
      .text("align", c.paths.align)
      .text("aligned_checkpoint", c.paths.aligned_checkpoint)
      .finish();

  if (c.world.n_scenes == 0) throw ConfigFileError("world.n_scenes must be at least 1");
  if (c.train.batch_size == 0) throw ConfigFileError("train.batch_size must be at least 1");
  if (!(c.train.lr > 0.0) || c.train.min_lr < 0.0) throw ConfigFileError("train.lr must be positive and train.min_lr non-negative");
  if (c.align.k == 0) throw ConfigFileError("align.k must be at least 1");
  if (!(c.align.temperature > 0.0)) throw ConfigFileError("align.temperature must be positive");
  if (c.eval.max_failure_rate < 0.0 || c.eval.max_failure_rate > 1.0)
    throw ConfigFileError("eval.max_failure_rate must lie in [0, 1]");
  if (!(c.judge.timeout_s > 0.0)) throw ConfigFileError("judge.timeout_s must be positive");
  try {
    c.model_config(5).validate();
  } catch (const model::ConfigError& e) {
    throw ConfigFileError(std::string("model: ") + e.what());
  }
  return c;
}

inline RunConfig parse(std::string_view text, std::string_view source = "config") {
  try {
    return from_table(toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigFileError(os.str());
  }
}

inline RunConfig load(const std::string& path) {
  try {
    return from_table(toml::parse_file(path));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << path << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigFileError(os.str());
  }
}

}  // namespace rda::config
