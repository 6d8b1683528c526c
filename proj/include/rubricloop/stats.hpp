// Copyright 2026 The rubricloop Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Small descriptive-statistics helpers shared across modules.

#ifndef RUBRICLOOP_STATS_HPP_
#define RUBRICLOOP_STATS_HPP_

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>

#include "rubricloop/error.hpp"

namespace rubricloop {

inline double Mean(std::span<const double> values) {
  detail::Require(!values.empty(), "Mean: empty input");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

// Population (1/n) standard deviation.
inline double PopulationStd(std::span<const double> values) {
  const double mean = Mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

inline int Sign(double x) { return (x > 0.0) - (x < 0.0); }

// Kendall tau-b between two index-aligned score vectors. Returns NaN when
// either vector is constant (the statistic is undefined).
inline double KendallTau(std::span<const double> a, std::span<const double> b) {
  detail::Require(a.size() == b.size(), "KendallTau: size mismatch");
  const std::size_t n = a.size();
  long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const int sa = Sign(a[i] - a[j]);
      const int sb = Sign(b[i] - b[j]);
      if (sa == 0 && sb == 0) continue;
      if (sa == 0) {
        ++ties_a;
      } else if (sb == 0) {
        ++ties_b;
      } else if (sa == sb) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double denom = std::sqrt(static_cast<double>(concordant + discordant + ties_a) *
                                 static_cast<double>(concordant + discordant + ties_b));
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(concordant - discordant) / denom;
}

}  // namespace rubricloop

#endif  // RUBRICLOOP_STATS_HPP_
