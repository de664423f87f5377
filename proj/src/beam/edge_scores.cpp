// SPDX-License-Identifier: Apache-2.0

#include "molgen/beam/edge_scores.hpp"

#include <algorithm>
#include <cmath>

namespace molgen::beam {

EdgeScores::EdgeScores(std::size_t n, std::vector<double> probs) : n_(n), probs_(std::move(probs)) {
  constexpr std::size_t kB = chem::kNumBondTypes;
  if (probs_.size() != n * n * kB) throw InvalidScores("edge score tensor must be N x N x 4");
  for (const double p : probs_) {
    if (!std::isfinite(p) || p < 0.0) throw InvalidScores("edge scores must be finite and >= 0");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      for (std::size_t t = 0; t < kB; ++t) {
        const double a = probs_[(i * n + j) * kB + t];
        const double b = probs_[(j * n + i) * kB + t];
        if (std::abs(a - b) > 1e-12 * std::max(1.0, std::abs(a))) {
          throw InvalidScores("edge scores are not symmetric");
        }
      }
    }
    for (std::size_t t = 0; t < kB; ++t) probs_[(i * n + i) * kB + t] = t == 0 ? 1.0 : 0.0;
  }
}

EdgeScores EdgeScores::from_logits(std::size_t n, std::span<const double> logits) {
  constexpr std::size_t kB = chem::kNumBondTypes;
  if (logits.size() != n * n * kB) throw InvalidScores("edge logit tensor must be N x N x 4");
  std::vector<double> probs(logits.size());
  for (std::size_t p = 0; p < n * n; ++p) {
    const double* z = logits.data() + p * kB;
    for (std::size_t t = 0; t < kB; ++t) {
      if (!std::isfinite(z[t])) throw InvalidScores("non-finite edge logit");
    }
    const double mx = *std::max_element(z, z + kB);
    double norm = 0.0;
    for (std::size_t t = 0; t < kB; ++t) norm += std::exp(z[t] - mx);
    for (std::size_t t = 0; t < kB; ++t) probs[p * kB + t] = std::exp(z[t] - mx) / norm;
  }
  return EdgeScores(n, std::move(probs));
}

}  // namespace molgen::beam
