#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "rtsdoa/graph.hpp"

namespace rtsdoa::core {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central finite differences against the analytic gradients of `loss_fn`,
// which builds a fresh scalar loss from (graph, params). 64-bit only: float
// would drown the comparison in rounding noise. Relative error uses a small
// absolute floor so true-zero gradients are not flagged by difference noise.
template <class LossFn>
GradCheckReport grad_check(ParameterStore<double>& params, LossFn loss_fn,
                           double step = 1e-5, double tolerance = 1e-4) {
  GradCheckReport report;
  report.tolerance = tolerance;

  Graph<double> g;
  Var<double> loss = loss_fn(g, params);
  g.backward(loss);

  auto eval = [&]() {
    Graph<double> g2;
    return g2.val(loss_fn(g2, params)).data[0];
  };

  for (const auto& [name, grad] : g.param_grads()) {
    Tensor<double>& value = params.at(name);
    GradCheckEntry entry{name, 0.0};
    for (size_t i = 0; i < value.data.size(); ++i) {
      const double saved = value.data[i];
      value.data[i] = saved + step;
      const double lp = eval();
      value.data[i] = saved - step;
      const double lm = eval();
      value.data[i] = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      const double analytic = grad->data[i];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-3});
      entry.max_rel_err =
          std::max(entry.max_rel_err, std::abs(analytic - numeric) / denom);
    }
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.worst < tolerance;
  return report;
}

}  // namespace rtsdoa::core
