// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "molgen/beam/beam.hpp"
#include "molgen/vae/model.hpp"

namespace molgen::evalgen {

struct DecodeSettings {
  std::size_t restarts = 20;
  beam::DecodeMode mode = beam::DecodeMode::kMaxProb;
  /// Beam candidate-selection objective; empty means edge probability.
  beam::PropertyFn objective;
  std::uint64_t seed = 0;
};

struct Decoded {
  chem::Molecule molecule;
  bool formula_deviation = false;
};

/// Formula by repaired argmax, then bonds by beam search. A one-atom formula
/// is emitted as that atom.
Decoded decode_latent(const vae::Model& model, std::span<const double> z, const DecodeSettings& settings = {});

struct Reconstruction {
  chem::Molecule molecule;
  bool exact = false;
};

/// eps = 0 encoding, max_prob beam with the edge-probability objective;
/// exact means equal canonical SMILES.
Reconstruction reconstruct(const vae::Model& model, const chem::Molecule& mol, std::size_t restarts = 20,
                           std::uint64_t seed = 0);

/// Fraction of `molecules` reconstructed exactly; one task per molecule.
double reconstruction_rate(const vae::Model& model, std::span<const chem::Molecule> molecules,
                           std::size_t restarts = 20, std::size_t threads = 1);

/// `count` decodings of z ~ N(0, I). Sample i draws from its own stream, so
/// the list does not depend on `threads`.
std::vector<chem::Molecule> sample_prior(const vae::Model& model, std::size_t count, std::uint64_t seed,
                                         const DecodeSettings& settings = {}, std::size_t threads = 1);

struct MetricsReport {
  std::size_t total = 0;
  std::size_t valid = 0;
  std::size_t novel = 0;
  std::size_t unique = 0;
  double validity_rate = 0.0;
  double novelty_rate = 0.0;
  double uniqueness_rate = 0.0;
};

/// Validity: chem invariants under `max_atoms`. Novelty: canonical SMILES
/// absent from `training`. Uniqueness: distinct canonical SMILES. Invalid
/// molecules are neither novel nor unique. Each rate divides by the total;
/// an empty list reports zero rates.
MetricsReport compute_metrics(std::span<const chem::Molecule> generated, std::span<const chem::Molecule> training,
                              const chem::Vocabulary& vocab, std::size_t max_atoms);

/// Table-2 layout: method,samples,validity,novelty,uniqueness.
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& method, const MetricsReport& report);

/// z_0 = z0 and z_{t+1} = z_t + step_size * gradient(z_t); returns the
/// steps + 1 points.
std::vector<std::vector<double>> gradient_ascent(
    std::span<const double> z0, std::size_t steps, double step_size,
    const std::function<std::vector<double>(std::span<const double>)>& gradient);

struct TraceStep {
  std::vector<double> z;
  std::string smiles;
  /// The reporting property of the decoded molecule.
  double property = 0.0;
  /// The property head's (de-normalised) estimate at z.
  double predicted = 0.0;
  /// Tanimoto similarity to the origin; 1 when there is no origin.
  double similarity = 1.0;
  /// similarity >= delta.
  bool accepted = true;
  /// Canonically different from the origin.
  bool novel = true;
};

struct OptimizationTrace {
  std::vector<TraceStep> steps;
  /// Highest-property accepted step (earliest on ties).
  std::optional<std::size_t> best;
  std::string origin_smiles;
  double origin_property = 0.0;
  /// Some accepted step is canonically different from the origin.
  bool success = false;
  /// property(best) - property(origin), 0 without a best step.
  double improvement() const;
};

struct OptimizeSettings {
  std::size_t steps = 20;
  double step_size = 0.5;
  /// Maps the head's normalised output to property units.
  double property_mean = 0.0;
  double property_stddev = 1.0;
  DecodeSettings decode;
};

/// Ascends the property head from z0 and decodes every point. Without an
/// origin every step is accepted and novel.
OptimizationTrace optimize_latent(const vae::Model& model, std::span<const double> z0,
                                  const beam::PropertyFn& property, const OptimizeSettings& settings);

/// Starts at the origin's eps = 0 encoding. Steps whose decoding has
/// tanimoto similarity below `delta` are rejected from `best`.
OptimizationTrace optimize_constrained(const vae::Model& model, const chem::Molecule& origin, double delta,
                                       const beam::PropertyFn& property, const OptimizeSettings& settings);

struct ConstrainedRow {
  double delta = 0.0;
  std::size_t molecules = 0;
  std::size_t successes = 0;
  /// Over successful molecules only; zero when there are none.
  double improvement_mean = 0.0;
  double improvement_std = 0.0;
  double similarity_mean = 0.0;
  double success_rate = 0.0;
};

/// One optimize_constrained run per (delta, origin); runs are merged by
/// index, so the rows do not depend on `threads`.
std::vector<ConstrainedRow> constrained_sweep(const vae::Model& model, std::span<const chem::Molecule> origins,
                                              std::span<const double> deltas, const beam::PropertyFn& property,
                                              const OptimizeSettings& settings, std::size_t threads = 1,
                                              std::vector<std::vector<OptimizationTrace>>* traces = nullptr);

/// Table-4 layout: delta,molecules,improvement_mean,improvement_std,similarity_mean,success_rate.
std::string constrained_csv_header();
std::string constrained_csv_row(const ConstrainedRow& row);

}  // namespace molgen::evalgen
