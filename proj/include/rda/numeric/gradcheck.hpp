#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rda/numeric/node.hpp"

namespace rda::nn {

// Coordinates to probe: per parameter, a list of flat indices. An empty
// selection means every coordinate of every parameter.
struct CoordinateSelection {
  std::vector<std::vector<std::size_t>> indices;
};

// Central differences (f(p+eps) - f(p-eps)) / (2 eps). Unprobed coordinates
// are left at zero. Parameters are restored bit-exactly afterwards.
inline Gradients finite_diff_grad(const std::function<double(const ParamStore&)>& f,
                                  ParamStore& params, double eps,
                                  const CoordinateSelection* selection = nullptr) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  Gradients out;
  for (std::size_t p = 0; p < params.size(); ++p) out.values.push_back(Array::zeros_like(params[p].value()));

  auto probe = [&](std::size_t p, std::size_t i) {
    Array& v = params[p].mutable_value();
    const double orig = v[i];
    v[i] = orig + eps;
    const double up = f(params);
    v[i] = orig - eps;
    const double down = f(params);
    v[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteError("finite_diff_grad: non-finite objective at " + params.name(p) + "[" +
                           std::to_string(i) + "]");
    }
    out.values[p][i] = (up - down) / (2.0 * eps);
  };

  for (std::size_t p = 0; p < params.size(); ++p) {
    if (selection && !selection->indices.empty()) {
      for (std::size_t i : selection->indices.at(p)) probe(p, i);
    } else {
      for (std::size_t i = 0; i < params[p].value().size(); ++i) probe(p, i);
    }
  }
  return out;
}

struct GradientDiscrepancy {
  double max_relative_error = 0.0;
  std::string where;
};

// |a - b| / max(|a|, |b|, floor) over the probed coordinates.
inline GradientDiscrepancy compare_gradients(const Gradients& analytic, const Gradients& numeric,
                                             const ParamStore& params,
                                             const CoordinateSelection* selection = nullptr,
                                             double floor = 1e-4) {
  GradientDiscrepancy d;
  auto visit = [&](std::size_t p, std::size_t i) {
    const double a = analytic[p][i], b = numeric[p][i];
    const double denom = std::max({std::abs(a), std::abs(b), floor});
    const double rel = std::abs(a - b) / denom;
    if (rel > d.max_relative_error) {
      d.max_relative_error = rel;
      d.where = params.name(p) + "[" + std::to_string(i) + "]";
    }
  };
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (selection && !selection->indices.empty()) {
      for (std::size_t i : selection->indices.at(p)) visit(p, i);
    } else {
      for (std::size_t i = 0; i < analytic[p].size(); ++i) visit(p, i);
    }
  }
  return d;
}

}  // namespace rda::nn
