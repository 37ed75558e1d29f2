#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <json.hpp>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rda/numeric/node.hpp"
#include "rda/numeric/ops.hpp"
#include "rda/tokenizer.hpp"

namespace rda::model {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SequenceError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMlpRatio = 4;
inline constexpr std::size_t kGenerationCap = 160;
inline constexpr double kNormEps = 1e-6;

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t width = 64;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 512;
  std::size_t vocab_size = 0;
  std::size_t visual_token_dim = 256;
  std::size_t n_visual_tokens = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_layers == 0 || width == 0 || n_heads == 0) throw ConfigError("layers, width and heads must be positive");
    if (width % n_heads != 0) throw ConfigError("width must be divisible by n_heads");
    if (vocab_size < 5) throw ConfigError("vocab_size must cover the reserved tokens");
    if (visual_token_dim == 0) throw ConfigError("visual_token_dim must be positive");
    if (max_seq_len <= n_visual_tokens) throw ConfigError("max_seq_len must exceed n_visual_tokens");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},   {"width", c.width},
          {"n_heads", c.n_heads},     {"max_seq_len", c.max_seq_len},
          {"vocab_size", c.vocab_size}, {"visual_token_dim", c.visual_token_dim},
          {"n_visual_tokens", c.n_visual_tokens}, {"seed", c.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.visual_token_dim = j.at("visual_token_dim").get<std::size_t>();
  c.n_visual_tokens = j.at("n_visual_tokens").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

// Hand-derived parameter count.
inline std::size_t closed_form_param_count(const ModelConfig& c) {
  const std::size_t w = c.width, v = c.vocab_size, d = c.visual_token_dim;
  const std::size_t embeddings = v * w + c.max_seq_len * w + w;
  const std::size_t adapter = d * w + w + w * w + w;
  const std::size_t per_layer = 12 * w * w + 7 * w;
  const std::size_t head = w + w * v + v;
  return embeddings + adapter + c.n_layers * per_layer + head;
}

struct Model {
  ModelConfig config;
  nn::ParamStore params;

  const nn::Node& p(const std::string& name) const { return params.get(name); }
};

inline std::string layer_param(std::size_t l, const char* name) {
  return "layer" + std::to_string(l) + "." + name;
}

inline Model init_model(const ModelConfig& config) {
  config.validate();
  Model m{config, {}};
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t w = config.width;
  auto randn = [&](nn::Shape shape, double stdev) {
    nn::Array a(std::move(shape));
    for (auto& x : a.storage()) x = normal(rng) * stdev;
    return a;
  };
  auto ones = [](std::size_t n) { return nn::Array(nn::Shape{n}, 1.0); };
  auto zeros = [](std::size_t n) { return nn::Array(nn::Shape{n}, 0.0); };
  auto fan_in = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));

  m.params.add("tok_emb", randn({config.vocab_size, w}, 0.02));
  m.params.add("pos_emb", randn({config.max_seq_len, w}, 0.02));
  m.params.add("vis_seg", randn({w}, 0.02));
  m.params.add("vis.w1", randn({config.visual_token_dim, w}, fan_in(config.visual_token_dim)));
  m.params.add("vis.b1", zeros(w));
  m.params.add("vis.w2", randn({w, w}, fan_in(w)));
  m.params.add("vis.b2", zeros(w));
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    m.params.add(layer_param(l, "norm1"), ones(w));
    for (const char* n : {"wq", "wk", "wv"}) m.params.add(layer_param(l, n), randn({w, w}, fan_in(w)));
    m.params.add(layer_param(l, "wo"), randn({w, w}, fan_in(w) * resid));
    m.params.add(layer_param(l, "norm2"), ones(w));
    m.params.add(layer_param(l, "mlp.w1"), randn({w, kMlpRatio * w}, fan_in(w)));
    m.params.add(layer_param(l, "mlp.b1"), zeros(kMlpRatio * w));
    m.params.add(layer_param(l, "mlp.w2"), randn({kMlpRatio * w, w}, fan_in(kMlpRatio * w) * resid));
    m.params.add(layer_param(l, "mlp.b2"), zeros(w));
  }
  m.params.add("final_norm", ones(w));
  m.params.add("head.w", randn({w, config.vocab_size}, fan_in(w)));
  m.params.add("head.b", zeros(config.vocab_size));
  return m;
}

// ---- differentiable forward -------------------------------------------------

inline void check_inputs(const Model& m, const nn::Array& visual, std::span<const int> ids) {
  const auto& c = m.config;
  if (visual.rank() != 2 || visual.rows() != c.n_visual_tokens || visual.cols() != c.visual_token_dim) {
    throw nn::ShapeError("visual tokens must have shape [" + std::to_string(c.n_visual_tokens) + "," +
                         std::to_string(c.visual_token_dim) + "], got " + nn::shape_str(visual.shape()));
  }
  if (ids.empty()) throw SequenceError("empty token sequence");
  if (c.n_visual_tokens + ids.size() > c.max_seq_len) {
    throw SequenceError("sequence of " + std::to_string(c.n_visual_tokens + ids.size()) +
                        " positions exceeds max_seq_len " + std::to_string(c.max_seq_len));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    }
  }
}

// Log-probabilities [rows.size(), V]; row r is the next-token distribution
// after text position rows[r].
inline nn::Node forward_rows(const Model& m, const nn::Array& visual, std::span<const int> ids,
                             std::span<const int> rows) {
  check_inputs(m, visual, ids);
  const auto& c = m.config;
  const std::size_t P = c.n_visual_tokens;
  for (int r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= ids.size()) throw std::out_of_range("output row out of range");
  }

  nn::Node v = nn::constant(visual);
  v = nn::gelu(nn::add(nn::matmul(v, m.p("vis.w1")), m.p("vis.b1")));
  v = nn::add(nn::add(nn::matmul(v, m.p("vis.w2")), m.p("vis.b2")), m.p("vis_seg"));
  nn::Node t = nn::gather_rows(m.p("tok_emb"), ids);
  std::vector<int> positions(P + ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  nn::Node x = nn::add(nn::concat_rows({v, t}), nn::gather_rows(m.p("pos_emb"), positions));

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto lp = [&](const char* n) -> const nn::Node& { return m.p(layer_param(l, n)); };
    nn::Node h = nn::mul(nn::rms_norm(x, kNormEps), lp("norm1"));
    nn::Node a = nn::attention(nn::matmul(h, lp("wq")), nn::matmul(h, lp("wk")), nn::matmul(h, lp("wv")),
                               c.n_heads, P);
    x = nn::add(x, nn::matmul(a, lp("wo")));
    h = nn::mul(nn::rms_norm(x, kNormEps), lp("norm2"));
    h = nn::gelu(nn::add(nn::matmul(h, lp("mlp.w1")), lp("mlp.b1")));
    x = nn::add(x, nn::add(nn::matmul(h, lp("mlp.w2")), lp("mlp.b2")));
  }

  std::vector<int> picked(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) picked[i] = static_cast<int>(P) + rows[i];
  nn::Node y = nn::gather_rows(x, picked);
  y = nn::mul(nn::rms_norm(y, kNormEps), m.p("final_norm"));
  return nn::log_softmax(nn::add(nn::matmul(y, m.p("head.w")), m.p("head.b")));
}

// Log-probabilities for every text position [T, V].
inline nn::Node forward(const Model& m, const nn::Array& visual, std::span<const int> ids) {
  std::vector<int> rows(ids.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  return forward_rows(m, visual, ids, rows);
}

// log P(c_j | c_<j) at every masked position, in stream order.
inline nn::Node masked_logprobs(const Model& m, const nn::Array& visual, const tok::TokenStream& s) {
  std::vector<int> rows;
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!s.loss_mask[j]) continue;
    if (j == 0) throw std::invalid_argument("the first position cannot be supervised");
    rows.push_back(static_cast<int>(j - 1));
    cols.push_back(static_cast<std::size_t>(s.ids[j]));
  }
  if (rows.empty()) throw std::invalid_argument("empty loss mask");
  // Trailing positions past the last supervised token cannot influence it.
  const std::size_t used = static_cast<std::size_t>(rows.back()) + 1;
  nn::Node lp = forward_rows(m, visual, std::span<const int>(s.ids.data(), used), rows);
  std::vector<std::size_t> r(rows.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
  return nn::gather_elements(lp, std::move(r), std::move(cols));
}

// Token-average log-probability over supervised positions.
inline nn::Node score(const Model& m, const nn::Array& visual, const tok::TokenStream& s) {
  return nn::mean(masked_logprobs(m, visual, s));
}

// ---- cached inference -------------------------------------------------------

namespace detail {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const Mat>;
using CVec = Eigen::Map<const Eigen::RowVectorXd>;

inline CMap mat(const nn::Node& n) { return CMap(n.value().data(), n.value().rows(), n.value().cols()); }
inline CVec vec(const nn::Node& n) { return CVec(n.value().data(), static_cast<Eigen::Index>(n.value().size())); }

inline void rms_rows(Mat& x, const CVec& gain) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double ms = x.row(r).squaredNorm() / static_cast<double>(x.cols());
    x.row(r) = (x.row(r) / std::sqrt(ms + kNormEps)).cwiseProduct(gain);
  }
}

inline void gelu_inplace(Mat& x) {
  constexpr double k = 0.7978845608028654;
  constexpr double c = 0.044715;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    x.data()[i] = 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v)));
  }
}

}  // namespace detail

// Incremental decoder over a fixed visual prefix with per-layer key/value caches.
class Session {
 public:
  Session(const Model& m, const nn::Array& visual) : m_(&m) {
    const auto& c = m.config;
    check_inputs(m, visual, std::span<const int>(&tok::kBos, 1));
    keys_.assign(c.n_layers, detail::Mat(c.max_seq_len, c.width));
    values_.assign(c.n_layers, detail::Mat(c.max_seq_len, c.width));
    detail::Mat v = detail::CMap(visual.data(), visual.rows(), visual.cols()) * detail::mat(m.p("vis.w1"));
    v.rowwise() += detail::vec(m.p("vis.b1"));
    detail::gelu_inplace(v);
    detail::Mat x = v * detail::mat(m.p("vis.w2"));
    x.rowwise() += detail::vec(m.p("vis.b2")) + detail::vec(m.p("vis_seg"));
    run_block(x);
  }

  std::size_t length() const { return len_; }

  // Appends tokens and returns the next-token log-probabilities.
  std::vector<double> feed(std::span<const int> ids) {
    const auto& c = m_->config;
    if (ids.empty()) throw SequenceError("feed needs at least one token");
    if (len_ + ids.size() > c.max_seq_len) throw SequenceError("sequence exceeds max_seq_len");
    detail::Mat x(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(c.width));
    const auto emb = detail::mat(m_->p("tok_emb"));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= c.vocab_size) throw std::out_of_range("token id");
      x.row(static_cast<Eigen::Index>(i)) = emb.row(ids[i]);
    }
    const detail::Mat last = run_block(x);
    detail::Mat h = last.bottomRows(1);
    detail::rms_rows(h, detail::vec(m_->p("final_norm")));
    Eigen::RowVectorXd logits = h * detail::mat(m_->p("head.w"));
    logits += detail::vec(m_->p("head.b"));
    return nn::log_softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
  }

 private:
  // Runs rows at positions len_.. through all layers; returns the final residual stream.
  detail::Mat run_block(detail::Mat x) {
    const auto& c = m_->config;
    const std::size_t n = static_cast<std::size_t>(x.rows());
    const std::size_t P = c.n_visual_tokens, dh = c.width / c.n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    x += detail::mat(m_->p("pos_emb")).middleRows(static_cast<Eigen::Index>(len_), static_cast<Eigen::Index>(n));
    const auto W = static_cast<Eigen::Index>(c.width);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      auto lp = [&](const char* name) -> const nn::Node& { return m_->p(layer_param(l, name)); };
      detail::Mat h = x;
      detail::rms_rows(h, detail::vec(lp("norm1")));
      const detail::Mat q = h * detail::mat(lp("wq"));
      const auto at = static_cast<Eigen::Index>(len_), rows = static_cast<Eigen::Index>(n);
      keys_[l].middleRows(at, rows).noalias() = h * detail::mat(lp("wk"));
      values_[l].middleRows(at, rows).noalias() = h * detail::mat(lp("wv"));
      detail::Mat a(rows, W);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pos = len_ + i;
        const auto limit = static_cast<Eigen::Index>(pos < P ? P : pos + 1);
        for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
          const auto off = static_cast<Eigen::Index>(hd * dh), d = static_cast<Eigen::Index>(dh);
          Eigen::VectorXd s = keys_[l].block(0, off, limit, d) *
                              q.row(static_cast<Eigen::Index>(i)).segment(off, d).transpose() * inv_sqrt;
          s = (s.array() - s.maxCoeff()).exp();
          s /= s.sum();
          a.row(static_cast<Eigen::Index>(i)).segment(off, d) = s.transpose() * values_[l].block(0, off, limit, d);
        }
      }
      x += a * detail::mat(lp("wo"));
      h = x;
      detail::rms_rows(h, detail::vec(lp("norm2")));
      detail::Mat u = h * detail::mat(lp("mlp.w1"));
      u.rowwise() += detail::vec(lp("mlp.b1"));
      detail::gelu_inplace(u);
      x += u * detail::mat(lp("mlp.w2"));
      x.rowwise() += detail::vec(lp("mlp.b2"));
    }
    len_ += n;
    return x;
  }

  const Model* m_;
  std::vector<detail::Mat> keys_, values_;
  std::size_t len_ = 0;
};

// ---- sampling -----------------------------------------------------------------

struct GenerateOptions {
  std::size_t k = 1;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  bool greedy = false;
  std::size_t cap = kGenerationCap;
  std::vector<int> turn_end;  // ids that close a non-final turn; kept in the response
};

// Response ids per turn; stop tokens are not included.
struct Generation {
  std::vector<std::vector<int>> responses;
  std::vector<bool> capped;

  friend bool operator==(const Generation&, const Generation&) = default;
};

inline int argmax(const std::vector<double>& lp) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < lp.size(); ++i) {
    if (lp[i] > lp[best]) best = i;
  }
  return static_cast<int>(best);
}

// Draws from softmax(lp / temperature) with a 53-bit uniform.
inline int sample_token(const std::vector<double>& lp, double temperature, std::mt19937_64& rng) {
  std::vector<double> w(lp.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : lp) mx = std::max(mx, v / temperature);
  double z = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) z += w[i] = std::exp(lp[i] / temperature - mx);
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * z;
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return static_cast<int>(i);
  }
  return argmax(lp);
}

// prompts: token ids per turn (without <BOS>). A turn's response ends on
// <EOS>, on the first token of the next prompt, after a turn_end id (non-final
// turns only), or at the length cap.
inline std::vector<Generation> generate(const Model& m, const nn::Array& visual,
                                        const std::vector<std::vector<int>>& prompts, const GenerateOptions& o) {
  if (o.k == 0) throw std::invalid_argument("k must be at least 1");
  if (!o.greedy && !(o.temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (prompts.empty()) throw std::invalid_argument("no prompts");
  for (const auto& p : prompts) {
    if (p.empty()) throw std::invalid_argument("empty prompt");
  }
  const std::size_t total = m.config.max_seq_len - m.config.n_visual_tokens;
  std::size_t prompt_total = 2;  // <BOS> and <EOS>
  for (const auto& p : prompts) prompt_total += p.size();
  if (prompt_total > total) throw SequenceError("prompts alone exceed max_seq_len");
  std::mt19937_64 rng(o.seed);

  Session root(m, visual);
  std::vector<int> first = {tok::kBos};
  first.insert(first.end(), prompts[0].begin(), prompts[0].end());
  const std::vector<double> first_lp = root.feed(first);

  std::vector<Generation> out;
  for (std::size_t c = 0; c < o.k; ++c) {
    Session s = root;
    std::vector<double> lp = first_lp;
    std::size_t used = first.size();
    Generation g;
    for (std::size_t t = 0; t < prompts.size(); ++t) {
      if (t > 0) {
        lp = s.feed(prompts[t]);
        used += prompts[t].size();
      }
      const int stop_next = t + 1 < prompts.size() ? prompts[t + 1].front() : -1;
      // room for the remaining prompts and the closing <EOS>
      std::size_t rest = 1;
      for (std::size_t u = t + 1; u < prompts.size(); ++u) rest += prompts[u].size();
      std::vector<int> resp;
      bool capped = true;
      while (resp.size() < o.cap && used + 1 + rest <= total) {
        const int id = o.greedy ? argmax(lp) : sample_token(lp, o.temperature, rng);
        if (id == tok::kEos || id == stop_next) {
          capped = false;
          break;
        }
        resp.push_back(id);
        ++used;
        lp = s.feed(std::span<const int>(&resp.back(), 1));
        if (stop_next >= 0 && std::find(o.turn_end.begin(), o.turn_end.end(), id) != o.turn_end.end()) {
          capped = false;
          break;
        }
      }
      g.responses.push_back(std::move(resp));
      g.capped.push_back(capped);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// Stream for a prompt/response exchange as training sees it.
inline tok::TokenStream candidate_stream(const std::vector<std::vector<int>>& prompts, const Generation& g) {
  if (prompts.size() != g.responses.size()) throw std::invalid_argument("prompt/response turn mismatch");
  std::vector<std::pair<std::vector<int>, std::vector<int>>> seg;
  for (std::size_t t = 0; t < prompts.size(); ++t) seg.emplace_back(prompts[t], g.responses[t]);
  return tok::assemble_stream(seg);
}

// ---- checkpoints --------------------------------------------------------------

inline constexpr const char* kCheckpointVersion = "1";

inline void save_checkpoint(const Model& m, const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");
  nlohmann::ordered_json header;
  header["version"] = kCheckpointVersion;
  header["config"] = to_json(m.config);
  header["params"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    header["params"].push_back({{"name", m.params.name(i)}, {"shape", m.params[i].value().shape()}});
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
  os << header.dump() << '\n';
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& v = m.params[i].value();
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("failed writing checkpoint: " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError(path + ": missing header");
  nlohmann::json header;
  ModelConfig config;
  try {
    header = nlohmann::json::parse(line);
    if (!header.contains("version") || header.at("version") != kCheckpointVersion) {
      throw CheckpointError(path + ": unsupported checkpoint version");
    }
    config = config_from_json(header.at("config"));
    config.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(path + ": bad header: " + e.what());
  }
  Model m = init_model(config);
  const auto& specs = header.at("params");
  if (!specs.is_array() || specs.size() != m.params.size()) throw CheckpointError(path + ": parameter list mismatch");
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& spec = specs[i];
    try {
      if (spec.at("name").get<std::string>() != m.params.name(i) ||
          spec.at("shape").get<nn::Shape>() != m.params[i].value().shape()) {
        throw CheckpointError(path + ": parameter " + m.params.name(i) + " name or shape mismatch");
      }
    } catch (const CheckpointError&) {
      throw;
    } catch (const std::exception& e) {
      throw CheckpointError(path + ": bad parameter entry: " + e.what());
    }
    auto& v = m.params[i].mutable_value();
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (static_cast<std::size_t>(is.gcount()) != v.size() * sizeof(double)) {
      throw CheckpointError(path + ": truncated payload at " + m.params.name(i));
    }
    for (double x : v.values()) {
      if (!std::isfinite(x)) throw CheckpointError(path + ": non-finite value in " + m.params.name(i));
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError(path + ": trailing bytes after payload");
  return m;
}

}  // namespace rda::model
