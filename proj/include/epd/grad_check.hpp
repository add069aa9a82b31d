#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "epd/tensor.hpp"

namespace epd {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Coordinates checked per parameter; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  /// Gradients below this magnitude are compared absolutely; the central
  /// difference of an O(1) loss carries ~1e-11 of rounding noise.
  double floor = 1e-7;
};

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double tolerance = 0;

  [[nodiscard]] double max_rel_error() const {
    double m = 0;
    for (const auto& p : params) m = std::max(m, p.max_rel_error);
    return m;
  }
  [[nodiscard]] bool passed() const { return max_rel_error() <= tolerance; }

  void merge(const GradCheckReport& other) {
    for (const auto& p : other.params) {
      auto it = std::find_if(params.begin(), params.end(), [&](const ParamCheck& q) { return q.name == p.name; });
      if (it == params.end()) {
        params.push_back(p);
      } else {
        it->checked += p.checked;
        if (p.max_rel_error > it->max_rel_error) {
          it->max_rel_error = p.max_rel_error;
          it->worst_index = p.worst_index;
          it->worst_analytic = p.worst_analytic;
          it->worst_numeric = p.worst_numeric;
        }
      }
    }
  }
};

/// |a - n| / max(|a|, |n|, floor); zero when both are exactly zero.
inline double relative_error(double analytic, double numeric, double floor = 0.0) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return scale == 0.0 ? 0.0 : std::abs(analytic - numeric) / scale;
}

using NamedParam = std::pair<std::string, Tensor<double>>;

/// Compares tape gradients with central finite differences.
///
/// `loss` builds a scalar from the parameters on the tape it is given; it is
/// called once with recording on and twice per checked coordinate with
/// recording off, so it must be a pure function of the parameter values.
inline GradCheckReport grad_check(const std::function<Tensor<double>(Tape<double>&)>& loss,
                                  std::vector<NamedParam> params, const GradCheckOptions& opts = {}) {
  for (auto& [name, p] : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  {
    Tape<double> tape;
    auto l = loss(tape);
    tape.backward(l);
  }

  GradCheckReport report;
  report.tolerance = opts.tolerance;
  std::mt19937_64 rng(opts.seed);
  Tape<double> off(false);
  auto eval = [&] { return loss(off).item(); };

  for (auto& [name, p] : params) {
    ParamCheck check{name};
    const auto n = p.numel();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (opts.max_coords && opts.max_coords < n) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    const bool has = p.has_grad();
    for (auto i : coords) {
      const double analytic = has ? p.grad()[i] : 0.0;
      auto data = p.data();
      const double saved = data[i];
      data[i] = saved + opts.step;
      const double up = eval();
      data[i] = saved - opts.step;
      const double down = eval();
      data[i] = saved;
      const double numeric = (up - down) / (2 * opts.step);
      const double err = relative_error(analytic, numeric, opts.floor);
      ++check.checked;
      if (err > check.max_rel_error || check.checked == 1) {
        check.max_rel_error = std::max(check.max_rel_error, err);
        check.worst_index = i;
        check.worst_analytic = analytic;
        check.worst_numeric = numeric;
      }
    }
    report.params.push_back(check);
  }
  return report;
}

}  // namespace epd
