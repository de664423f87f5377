// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "molgen/error.hpp"

namespace molgen::vae {

MOLGEN_DEFINE_ERROR(InvalidHyperParams);

struct HyperParams {
  std::size_t d = 128;           ///< hidden width
  std::size_t k = 56;            ///< latent dimension
  std::size_t layers = 4;        ///< encoder GCN layers (L)
  std::size_t decoder_layers = 4;
  std::size_t max_atoms = 38;    ///< r, the largest molecule the formula head can emit
  std::size_t max_position = 38; ///< M, positional-feature cap; must be >= r
  double lambda_edge = 1.0;
  double lambda_atoms = 1.0;
  double lambda_kl = 1e-2;
  double lambda_prop = 1.0;
  double attention_eps = 1e-6;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
  bool positional_features = true;

  /// Throws InvalidHyperParams.
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  /// Reads the keys written by to_map(); unknown keys throw.
  static HyperParams from_map(const std::map<std::string, std::string>& values);

  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

}  // namespace molgen::vae
