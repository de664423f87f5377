// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "molgen/chem/vocabulary.hpp"

namespace molgen::beam {

MOLGEN_DEFINE_ERROR(InvalidScores);

/// N x N x 4 bond-type probabilities between decoder nodes. Symmetric in
/// (i, j); the diagonal is fixed to None and never read.
class EdgeScores {
 public:
  EdgeScores() = default;
  /// Throws InvalidScores for non-finite, negative or asymmetric input.
  EdgeScores(std::size_t n, std::vector<double> probs);

  /// Softmax over the last axis of N x N x 4 logits.
  static EdgeScores from_logits(std::size_t n, std::span<const double> logits);

  std::size_t size() const { return n_; }
  double prob(std::size_t i, std::size_t j, chem::BondType t) const {
    return probs_[(i * n_ + j) * chem::kNumBondTypes + static_cast<std::size_t>(t)];
  }
  std::span<const double> probs() const { return probs_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> probs_;
};

}  // namespace molgen::beam
