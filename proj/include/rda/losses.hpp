#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "rda/model.hpp"
#include "rda/numeric/node.hpp"
#include "rda/numeric/ops.hpp"

namespace rda::loss {

// Negative summed log-likelihood over the supervised positions.
inline nn::Node vanilla_loss(const model::Model& m, const nn::Array& visual, const tok::TokenStream& s) {
  return nn::scale(nn::sum(model::masked_logprobs(m, visual, s)), -1.0);
}

inline nn::Node zero() { return nn::constant(0.0); }

// log(1 + sum_{i<j} exp(D(s_j) - s_i)); scores are ordered best first.
inline nn::Node rank_loss(const std::vector<nn::Node>& scores, bool use_detach = true) {
  if (scores.size() < 2) return zero();
  std::vector<nn::Node> terms;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = i + 1; j < scores.size(); ++j) {
      const nn::Node worse = use_detach ? nn::detach(scores[j]) : scores[j];
      terms.push_back(nn::exp(nn::sub(worse, scores[i])));
    }
  }
  return nn::log1p(nn::sum(nn::concat_rows(terms)));
}

// log(1 + sum_n exp(D(s_n) - s_p)).
inline nn::Node binary_loss(const nn::Node& positive, const std::vector<nn::Node>& negatives,
                            bool use_detach = true) {
  if (negatives.empty()) return zero();
  std::vector<nn::Node> terms;
  for (const auto& n : negatives) terms.push_back(nn::exp(nn::sub(use_detach ? nn::detach(n) : n, positive)));
  return nn::log1p(nn::sum(nn::concat_rows(terms)));
}

// One training sample with its optional alignment sets.
struct AlignedItem {
  std::string sample_id;
  nn::Array visual;
  tok::TokenStream vanilla;
  std::vector<tok::TokenStream> ranked;  // model-based candidates, best first
  std::optional<tok::TokenStream> positive;
  std::vector<tok::TokenStream> negatives;
};

struct LossWeights {
  double rank = 1.0;
  double binary = 1.0;
  bool detach = true;
};

// Scores of the slots that only ever enter through D(.), evaluated once and
// held fixed; lets finite differences see the same function backward does.
struct FrozenScores {
  std::vector<std::vector<double>> ranked;
  std::vector<std::vector<double>> negatives;
};

struct LossTerms {
  nn::Node total;
  double vanilla = 0.0;
  double rank = 0.0;
  double binary = 0.0;
};

inline double score_value(const model::Model& m, const nn::Array& visual, const tok::TokenStream& s) {
  nn::NoGradGuard guard;
  return model::score(m, visual, s).value()[0];
}

inline FrozenScores freeze_scores(const model::Model& m, const std::vector<AlignedItem>& batch) {
  FrozenScores f;
  for (const auto& it : batch) {
    std::vector<double> r, n;
    for (const auto& s : it.ranked) r.push_back(score_value(m, it.visual, s));
    for (const auto& s : it.negatives) n.push_back(score_value(m, it.visual, s));
    f.ranked.push_back(std::move(r));
    f.negatives.push_back(std::move(n));
  }
  return f;
}

// L = L_van + w_r L_rank + w_b L_binary per item, averaged over the batch.
inline LossTerms total_loss(const model::Model& m, const std::vector<AlignedItem>& batch, const LossWeights& w = {},
                            const FrozenScores* frozen = nullptr) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::vector<nn::Node> per_item;
  LossTerms out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& it = batch[b];
    nn::Node masked = model::masked_logprobs(m, it.visual, it.vanilla);
    nn::Node van = nn::scale(nn::sum(masked), -1.0);
    nn::Node item = van;
    out.vanilla += van.value()[0];

    if (w.rank != 0.0 && it.ranked.size() >= 2) {
      std::vector<nn::Node> scores;
      for (std::size_t i = 0; i < it.ranked.size(); ++i) {
        const bool last = i + 1 == it.ranked.size();
        if (w.detach && last) {
          const double v = frozen ? frozen->ranked.at(b).at(i) : score_value(m, it.visual, it.ranked[i]);
          scores.push_back(nn::constant(v));
        } else {
          scores.push_back(model::score(m, it.visual, it.ranked[i]));
        }
      }
      nn::Node lr;
      if (w.detach && frozen) {
        // detached slots read the frozen values
        std::vector<nn::Node> terms;
        for (std::size_t i = 0; i < scores.size(); ++i) {
          for (std::size_t j = i + 1; j < scores.size(); ++j) {
            terms.push_back(nn::exp(nn::sub(nn::constant(frozen->ranked.at(b).at(j)), scores[i])));
          }
        }
        lr = nn::log1p(nn::sum(nn::concat_rows(terms)));
      } else {
        lr = rank_loss(scores, w.detach);
      }
      out.rank += lr.value()[0];
      item = nn::add(item, nn::scale(lr, w.rank));
    }

    if (w.binary != 0.0 && it.positive && !it.negatives.empty()) {
      nn::Node sp = *it.positive == it.vanilla ? nn::mean(masked) : model::score(m, it.visual, *it.positive);
      std::vector<nn::Node> negs;
      for (std::size_t n = 0; n < it.negatives.size(); ++n) {
        if (w.detach) {
          const double v = frozen ? frozen->negatives.at(b).at(n) : score_value(m, it.visual, it.negatives[n]);
          negs.push_back(nn::constant(v));
        } else {
          negs.push_back(model::score(m, it.visual, it.negatives[n]));
        }
      }
      nn::Node lb = binary_loss(sp, negs, w.detach);
      out.binary += lb.value()[0];
      item = nn::add(item, nn::scale(lb, w.binary));
    }
    per_item.push_back(item);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.vanilla *= inv;
  out.rank *= inv;
  out.binary *= inv;
  out.total = nn::scale(nn::sum(nn::concat_rows(per_item)), inv);
  return out;
}

// ---- optimisation ---------------------------------------------------------------

struct Schedule {
  std::size_t epochs = 10;
  std::size_t batch_size = 1;
  double lr = 3e-4;
  double min_lr = 1e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables
  std::uint64_t seed = 0;
  LossWeights weights;
};

// Cosine annealing from lr at step 0 to min_lr at the last step.
inline double cosine_lr(const Schedule& s, std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return s.lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return s.min_lr + 0.5 * (s.lr - s.min_lr) * (1.0 + std::cos(kPi * t));
}

// Decoupled weight decay Adam; matrices decay, vectors do not.
class AdamW {
 public:
  explicit AdamW(const nn::ParamStore& params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.push_back(nn::Array::zeros_like(params[i].value()));
      v_.push_back(nn::Array::zeros_like(params[i].value()));
    }
  }

  void step(nn::ParamStore& params, const nn::Gradients& g, double lr, const Schedule& s) {
    ++t_;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].mutable_value();
      const bool decay = p.rank() == 2;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = g[i][k];
        m_[i][k] = s.beta1 * m_[i][k] + (1.0 - s.beta1) * gk;
        v_[i][k] = s.beta2 * v_[i][k] + (1.0 - s.beta2) * gk * gk;
        const double upd = (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + s.eps);
        p[k] -= lr * (upd + (decay ? s.weight_decay * p[k] : 0.0));
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  std::vector<nn::Array> m_, v_;
  std::size_t t_ = 0;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double vanilla = 0.0;
  double rank = 0.0;
  double binary = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

inline TrainHistory train(model::Model& m, const std::vector<AlignedItem>& data, const Schedule& s,
                          const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw std::invalid_argument("training set is empty");
  if (s.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  const std::size_t per_epoch = (data.size() + s.batch_size - 1) / s.batch_size;
  const std::size_t total_steps = per_epoch * s.epochs;
  std::mt19937_64 rng(s.seed);
  AdamW opt(m.params);
  TrainHistory h;
  std::size_t step = 0;
  for (std::size_t e = 0; e < s.epochs; ++e) {
    const auto order = shuffled(data.size(), rng);
    double sum = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<AlignedItem> batch;
      for (std::size_t i = b * s.batch_size; i < std::min(data.size(), (b + 1) * s.batch_size); ++i) {
        batch.push_back(data[order[i]]);
      }
      const std::string where = "epoch " + std::to_string(e) + " step " + std::to_string(step);
      LossTerms terms;
      nn::Gradients g;
      try {
        terms = total_loss(m, batch, s.weights);
        if (!std::isfinite(terms.total.value()[0])) throw TrainingError("non-finite loss at " + where);
        g = nn::backward(terms.total, m.params);
      } catch (const nn::NonFiniteError& err) {
        throw TrainingError("non-finite loss at " + where + ": " + err.what());
      }
      const double value = terms.total.value()[0];
      double sq = 0.0;
      for (const auto& a : g.values) {
        for (double x : a.values()) sq += x * x;
      }
      if (!std::isfinite(sq)) {
        throw TrainingError("non-finite gradient at " + where);
      }
      if (s.clip_norm > 0.0 && std::sqrt(sq) > s.clip_norm) {
        const double f = s.clip_norm / std::sqrt(sq);
        for (auto& a : g.values) {
          for (auto& x : a.storage()) x *= f;
        }
      }
      const double lr = cosine_lr(s, step, total_steps);
      opt.step(m.params, g, lr, s);
      h.steps.push_back({e, step, terms.vanilla, terms.rank, terms.binary, value, lr});
      sum += value;
      ++step;
    }
    h.epoch_mean.push_back(sum / static_cast<double>(per_epoch));
    if (on_epoch) on_epoch(e, h.epoch_mean.back());
  }
  return h;
}

inline void write_history_csv(const TrainHistory& h, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "epoch,step,L_van,L_rank,L_binary,total,lr\n";
  char buf[256];
  for (const auto& r : h.steps) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.step, r.vanilla, r.rank,
                  r.binary, r.total, r.lr);
    os << buf;
  }
}

}  // namespace rda::loss
